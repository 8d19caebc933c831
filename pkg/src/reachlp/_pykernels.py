"""NumPy implementations of the hot loops.

These are the reference semantics for ``_ckernels``: both must return
bit-identical arrays for the same inputs.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def mix64(z):
    """SplitMix64 finalizer on uint64 scalars or arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_key(seed, index):
    """Per-trajectory key derived from (seed, trajectory index)."""
    with np.errstate(over="ignore"):
        return mix64(mix64(np.uint64(seed)) + np.asarray(index, dtype=np.uint64))


def uniform(key, k):
    """k-th uniform in [0, 1) of the stream identified by ``key``."""
    with np.errstate(over="ignore"):
        z = mix64(np.asarray(key, dtype=np.uint64) + (np.uint64(k) + np.uint64(1)) * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def _pick(ptr, cum, rows, u):
    """First j in row with u < cum[j] (last entry if none)."""
    lo = ptr[rows]
    hi = ptr[rows + 1]
    j = lo.copy()
    active = (u >= cum[j]) & (j < hi - 1)
    while active.any():
        j[active] += 1
        active = active & (u >= cum[j]) & (j < hi - 1)
    return j


def bellman_sweep(indptr, indices, data, state_ptr, v, out):
    """out[x] = max over pairs k of x of sum_y P[k, y] v[y]."""
    n_pairs = len(indptr) - 1
    q = np.zeros(n_pairs)
    rows = np.repeat(np.arange(n_pairs), np.diff(indptr))
    np.add.at(q, rows, data * v[indices])
    out[:] = np.maximum.reduceat(q, state_ptr[:-1])
    return out


def simulate_batch(seed, first, n, start_cum, horizon,
                   pol_ptr, pol_pair, pol_cum,
                   ker_ptr, ker_dest, ker_cum,
                   in_b, stop, trap):
    """Run trajectories ``first .. first+n-1`` in lockstep.

    Returns ``(t_stop, t_b, truncated)``: first time in ``stop`` (-1 if never),
    first time in ``in_b`` before stopping (-1 if never) and a truncation flag.
    """
    n_states = len(in_b)
    keys = stream_key(seed, np.arange(first, first + n, dtype=np.uint64))
    u0 = uniform(keys, 0)
    x = np.searchsorted(start_cum, u0, side="right").astype(np.int64)
    x = np.minimum(x, n_states - 1)
    visited = in_b[x].astype(np.int64)
    t_b = np.where(visited == 1, 0, -1).astype(np.int64)
    t_stop = np.full(n, -1, dtype=np.int64)
    truncated = np.zeros(n, dtype=np.uint8)
    alive = np.ones(n, dtype=bool)
    for t in range(horizon + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xs = x[idx]
        hit = stop[xs] == 1
        t_stop[idx[hit]] = t
        alive[idx[hit]] = False
        dead = (~hit) & (trap[xs] == 1)
        alive[idx[dead]] = False
        idx = idx[~hit & ~dead]
        if t == horizon:
            truncated[idx] = 1
            break
        if idx.size == 0:
            break
        xs = x[idx]
        ua = uniform(keys[idx], 2 * t + 1)
        rows = visited[idx] * n_states + xs
        pair = pol_pair[_pick(pol_ptr, pol_cum, rows, ua)]
        ux = uniform(keys[idx], 2 * t + 2)
        y = ker_dest[_pick(ker_ptr, ker_cum, pair, ux)]
        x[idx] = y
        newly = (in_b[y] == 1) & (visited[idx] == 0)
        visited[idx[newly]] = 1
        t_b[idx[newly]] = t + 1
    return t_stop, t_b, truncated
