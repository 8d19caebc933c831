import math

import numpy as np
import pytest
from scipy.optimize import linprog

from reachlp.avg import build_gain_lp, build_primal_lp, solve_gain
from reachlp.lp import LinearProgram, LpFormatError, Status, dump_lp, parse_lp, solve_lp
from reachlp.model import indicator
from reachlp.oracle import random_model, random_sets
from reachlp.transform import augment, make_absorbing


def lp_max_x_le_3():
    p = LinearProgram("max")
    p.add_col(1.0)
    p.add_row([(0, 1.0)], "<=", 3.0)
    return p


def test_bounded_max():
    s = solve_lp(lp_max_x_le_3())
    assert s.status is Status.OPTIMAL
    assert s.objective == pytest.approx(3.0, abs=1e-12)
    assert s.duals[0] == pytest.approx(1.0, abs=1e-12)


def test_unbounded():
    p = LinearProgram("max")
    p.add_col(1.0)
    assert solve_lp(p).status is Status.UNBOUNDED


def test_infeasible():
    p = LinearProgram("min")
    p.add_col(0.0)
    p.add_row([(0, 1.0)], "=", 1.0)
    p.add_row([(0, 1.0)], "=", 2.0)
    assert solve_lp(p).status is Status.INFEASIBLE


def test_iteration_limit_is_numerical_not_wrong():
    rng = np.random.default_rng(0)
    p = LinearProgram("max")
    for _ in range(6):
        p.add_col(float(rng.random()))
    for _ in range(5):
        p.add_row([(j, float(rng.random())) for j in range(6)], "<=", 1.0)
    s = solve_lp(p, max_iter=1)
    assert s.status is Status.NUMERICAL


def test_free_column_can_go_negative():
    p = LinearProgram("min")
    p.add_col(1.0, free=True)
    p.add_row([(0, 1.0)], ">=", -4.0)
    s = solve_lp(p)
    assert s.status is Status.OPTIMAL and s.x[0] == pytest.approx(-4.0)


def test_row_validation():
    p = LinearProgram()
    p.add_col()
    with pytest.raises(ValueError, match="duplicate"):
        p.add_row([(0, 1.0), (0, 2.0)], "<=", 1.0)
    with pytest.raises(ValueError):
        p.add_row([(3, 1.0)], "<=", 1.0)
    with pytest.raises(ValueError):
        p.add_row([(0, 1.0)], "<", 1.0)
    with pytest.raises(ValueError):
        p.add_row([(0, 1.0)], "<=", math.inf)


def random_lp(rng, m=8, n=10):
    p = LinearProgram(str(rng.choice(["min", "max"])))
    for _ in range(n):
        p.add_col(float(rng.normal()), free=bool(rng.random() < 0.2))
    for _ in range(m):
        cols = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        p.add_row([(int(j), float(rng.normal())) for j in sorted(cols)],
                  str(rng.choice(["<=", "=", ">="])), float(rng.normal()))
    # box row keeps most instances bounded
    p.add_row([(j, 1.0) for j in range(n)], "<=", 10.0)
    return p


def highs(p):
    A = p.matrix().toarray()
    c = np.array(p.obj) * (1 if p.sense == "min" else -1)
    ub_rows = [i for i, r in enumerate(p.rel) if r != "="]
    A_ub = np.array([A[i] * (1 if p.rel[i] == "<=" else -1) for i in ub_rows]).reshape(-1, p.n_cols)
    b_ub = np.array([p.rhs[i] * (1 if p.rel[i] == "<=" else -1) for i in ub_rows])
    eq = [i for i, r in enumerate(p.rel) if r == "="]
    bounds = [(None if lb == -math.inf else 0, None) for lb in p.lb]
    res = linprog(c, A_ub=A_ub if ub_rows else None, b_ub=b_ub if ub_rows else None,
                  A_eq=A[eq] if eq else None, b_eq=np.array(p.rhs)[eq] if eq else None,
                  bounds=bounds, method="highs")
    status = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}[res.status]
    obj = res.fun * (1 if p.sense == "min" else -1) if res.status == 0 else None
    return status, obj


@pytest.mark.parametrize("seed", range(60))
def test_agrees_with_highs(seed):
    p = random_lp(np.random.default_rng(seed))
    s = solve_lp(p)
    status, obj = highs(p)
    assert s.status is status
    if status is Status.OPTIMAL:
        assert s.objective == pytest.approx(obj, abs=1e-7)
        assert s.primal_residual <= 1e-9 and s.dual_residual <= 1e-9
        assert s.gap <= 1e-8 and s.slackness <= 1e-8


def test_dump_parse_is_bit_exact():
    p = next(q for q in (random_lp(np.random.default_rng(k)) for k in range(100))
             if solve_lp(q).optimal)
    text = dump_lp(p)
    q = parse_lp(text)
    assert dump_lp(q) == text
    assert q.lb == p.lb and q.obj == p.obj and q.rhs == p.rhs and q.rel == p.rel
    assert (q.matrix() != p.matrix()).nnz == 0
    assert solve_lp(q).x.tobytes() == solve_lp(p).x.tobytes()


def test_parse_rejects_garbage():
    with pytest.raises(LpFormatError):
        parse_lp("sense min\ncol 0 zero inf 1\n")
    with pytest.raises(LpFormatError):
        parse_lp("sense sideways\n")


def test_solves_are_deterministic():
    p = random_lp(np.random.default_rng(9), m=15, n=20)
    a, b = solve_lp(p), solve_lp(p)
    assert a.status == b.status and a.iterations == b.iterations
    if a.x is not None:
        assert a.x.tobytes() == b.x.tobytes() and a.duals.tobytes() == b.duals.tobytes()


@pytest.mark.parametrize("seed", range(10))
def test_primal_bias_shift_stays_feasible(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    A, B = random_sets(rng, m.n_states)
    mt = make_absorbing(m, [A, B])
    p = build_primal_lp(mt, indicator(m.n_states, A), np.ones(m.n_states))
    s = solve_lp(p)
    assert s.status is Status.OPTIMAL
    n = m.n_states
    Amat = p.matrix()
    for c in (-7.5, 0.0, 3.25):
        x = s.x.copy()
        x[n:] += c
        assert np.all(Amat @ x - np.array(p.rhs) >= -1e-9)
    # the primal optimum equals the dual-form LP optimum
    d = solve_gain(mt, indicator(n, A), np.ones(n))
    assert s.objective == pytest.approx(d.objective, abs=1e-8)
    np.testing.assert_allclose(s.x[:n], d.v, atol=1e-8)


def test_gain_lp_shape(m5):
    mt = make_absorbing(m5, [{3}])
    g = build_gain_lp(mt, indicator(5, {3}), np.ones(5))
    assert g.lp.n_cols == 20 and g.lp.n_rows == 10


def test_budget_row_over_layer_one(m5, m5_sets):
    A, B = m5_sets
    aug = augment(m5, B)
    am = make_absorbing(aug.model, [aug.layer(0, A), aug.layer(1, A)])
    g = build_gain_lp(am, indicator(10, aug.both_layers(A)), np.zeros(10),
                      epsilon_row=(aug.layer(1), 0.5))
    assert g.lp.n_rows == 21 and g.lp.rel[g.eps_row] == "<="
    layer1_cols = {j for j, _ in g.lp.row_coefs(g.eps_row)}
    assert len(layer1_cols) == 10        # two actions on each of the five layer-1 states
