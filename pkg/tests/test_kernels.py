import numpy as np
import pytest

from reachlp import kernels
from reachlp.avg import value_iteration_reach
from reachlp.oracle import random_model, random_policy
from reachlp.sim import _trap_states, compile_chain
from reachlp.transform import make_absorbing

compiled = pytest.mark.skipif("compiled" not in kernels.BACKENDS,
                              reason="compiled kernels not built")


def test_backend_switch_round_trip():
    before = kernels.backend()
    prev = kernels.set_backend("python")
    assert prev == before and kernels.backend() == "python"
    assert kernels.get() is kernels.BACKENDS["python"]
    kernels.set_backend(before)
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")


def test_uniform_stream_properties():
    key = kernels.stream_key(5, 3)
    u = np.array([kernels.uniform(key, k) for k in range(2000)])
    assert np.all((u >= 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.03
    assert kernels.uniform(key, 7) == kernels.uniform(kernels.stream_key(5, 3), 7)
    assert kernels.uniform(key, 7) != kernels.uniform(kernels.stream_key(5, 4), 7)


@compiled
def test_compiled_mix_matches_python():
    from reachlp import _ckernels, _pykernels
    for z in (0, 1, 12345, 2**63 + 17, 2**64 - 1):
        assert int(_ckernels.mix64(z)) == int(_pykernels.mix64(np.uint64(z)))
    key = int(kernels.stream_key(9, 2))
    for k in (0, 1, 99, 10**6):
        assert _ckernels.uniform(key, k) == float(_pykernels.uniform(key, k))


def _batch_args(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, max_states=10)
    pi = random_policy(rng, m)
    chain = compile_chain(m, pi)
    in_b = (rng.random(m.n_states) < 0.3).astype(np.uint8)
    stop = np.zeros(m.n_states, dtype=np.uint8)
    stop[int(rng.integers(m.n_states))] = 1
    start = np.cumsum(rng.dirichlet(np.ones(m.n_states)))
    start[-1] = 1.0
    return (np.uint64(seed), 0, 3000, start, 60, chain.pol_ptr, chain.pol_pair, chain.pol_cum,
            chain.ker_ptr, chain.ker_dest, chain.ker_cum, in_b, stop, _trap_states(m))


@compiled
@pytest.mark.parametrize("seed", range(6))
def test_simulate_batch_bit_identical(seed):
    args = _batch_args(seed)
    got = [kernels.BACKENDS[b].simulate_batch(*args) for b in ("compiled", "python")]
    for a, b in zip(*got):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


@compiled
@pytest.mark.parametrize("seed", range(6))
def test_bellman_sweep_bit_identical(seed):
    m = random_model(seed, max_states=12)
    P = m.transitions
    v = np.random.default_rng(seed).random(m.n_states)
    outs = []
    for b in ("compiled", "python"):
        out = np.empty(m.n_states)
        kernels.BACKENDS[b].bellman_sweep(P.indptr.astype(np.int64), P.indices.astype(np.int64),
                                          P.data.astype(float), m.state_ptr, v, out)
        outs.append(out)
    np.testing.assert_array_equal(outs[0], outs[1])
    dense = P.toarray() @ v
    ref = [dense[m.state_ptr[x]:m.state_ptr[x + 1]].max() for x in range(m.n_states)]
    np.testing.assert_allclose(outs[1], ref, rtol=0, atol=1e-15)


@compiled
def test_value_iteration_same_under_both_backends():
    m = make_absorbing(random_model(21), [{0}])
    prev = kernels.set_backend("python")
    try:
        slow = value_iteration_reach(m, {0})
    finally:
        kernels.set_backend(prev)
    np.testing.assert_array_equal(slow, value_iteration_reach(m, {0}))
