"""Multichain average-reward LPs, policy extraction and independent oracles.

The LP is built in occupation-measure form: variables ``alpha(x,u)`` and
``beta(x,u)`` (both >= 0), one flow row and one mixing row per state, and an
optional budget row on the total alpha-mass of a state set. The duals of the
mixing rows are the optimal gains and the duals of the flow rows the bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .lp import LinearProgram, Status, solve_lp
from .model import ModelError, StationaryPolicy, induced_chain
from .transform import IndicatorReward

ACTIVE_TOL = 1e-9
CERT_TOL = 1e-8


class SolverError(RuntimeError):
    """The LP engine failed or produced an inconsistent certificate."""


def pair_reward(m, reward):
    """Normalize a reward to an array over ``m.pairs``.

    Accepts an :class:`IndicatorReward`, a per-state array, a per-pair array,
    a ``{(x, u): r}`` mapping or ``None`` (the model's own reward).
    """
    n_pairs = len(m.pairs)
    if reward is None:
        if m.reward is None:
            raise ModelError("model has no reward and none was given")
        missing = [p for p in m.pairs if p not in m.reward]
        if missing:
            raise ModelError(f"reward missing on feasible pair(s) {missing[:5]}")
        return m.reward_vector()
    if isinstance(reward, IndicatorReward):
        return reward.state_values(m.n_states)[m.pair_state]
    if isinstance(reward, dict):
        missing = [p for p in m.pairs if p not in reward]
        if missing:
            raise ModelError(f"reward missing on feasible pair(s) {missing[:5]}")
        return np.array([reward[p] for p in m.pairs], dtype=float)
    r = np.asarray(reward, dtype=float)
    # with one action per state the two layouts coincide
    if r.shape == (m.n_states,):
        return r[m.pair_state]
    if r.shape == (n_pairs,):
        return r
    raise ModelError(f"reward has shape {r.shape}; expected ({m.n_states},) or ({n_pairs},)")


@dataclass
class GainLp:
    lp: LinearProgram
    n_pairs: int
    n_states: int
    flow_rows: np.ndarray
    mix_rows: np.ndarray
    eps_row: int | None = None


def build_gain_lp(m, reward, nu, epsilon_row=None):
    """Occupation-measure LP for the multichain average-reward problem.

    ``epsilon_row`` is ``(states, bound)``: it appends
    ``sum_{x in states, u} alpha(x,u) <= bound``.
    """
    r = pair_reward(m, reward)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (m.n_states,) or np.any(nu < 0):
        raise ModelError("nu must be a nonnegative vector over states")
    n, k = m.n_states, len(m.pairs)
    E = sp.csr_matrix((np.ones(k), (m.pair_state, np.arange(k))), shape=(n, k))
    flow = (E - m.transitions.T).tocsr()
    flow.eliminate_zeros()
    mix = sp.hstack([E, flow], format="csr")
    flow = sp.hstack([flow, sp.csr_matrix((n, k))], format="csr")

    lp = LinearProgram("max")
    for p, rk in zip(m.pairs, r):
        lp.add_col(rk, tag=("alpha",) + p)
    for p in m.pairs:
        lp.add_col(0.0, tag=("beta",) + p)
    flow_rows = np.empty(n, dtype=np.int64)
    mix_rows = np.empty(n, dtype=np.int64)
    for j in range(n):
        lo, hi = flow.indptr[j], flow.indptr[j + 1]
        flow_rows[j] = lp.add_row(zip(flow.indices[lo:hi].tolist(), flow.data[lo:hi].tolist()),
                                  "=", 0.0, tag=("flow", j))
    for j in range(n):
        lo, hi = mix.indptr[j], mix.indptr[j + 1]
        mix_rows[j] = lp.add_row(zip(mix.indices[lo:hi].tolist(), mix.data[lo:hi].tolist()),
                                 "=", nu[j], tag=("mix", j))
    eps = None
    if epsilon_row is not None:
        states, bound = epsilon_row
        states = frozenset(states)
        cols = [i for i, (x, _) in enumerate(m.pairs) if x in states]
        eps = lp.add_row(((c, 1.0) for c in cols), "<=", bound, tag=("epsilon",))
    return GainLp(lp, k, n, flow_rows, mix_rows, eps)


def build_primal_lp(m, reward, nu):
    """The primal (gain, bias) LP with free variables ``v`` then ``h``."""
    r = pair_reward(m, reward)
    nu = np.asarray(nu, dtype=float)
    n = m.n_states
    lp = LinearProgram("min")
    for x in range(n):
        lp.add_col(nu[x], free=True, tag=("v", x))
    for x in range(n):
        lp.add_col(0.0, free=True, tag=("h", x))
    for k, (x, u) in enumerate(m.pairs):
        row = dict()
        for y, q in m.kernel[(x, u)]:
            row[y] = row.get(y, 0.0) - q
        row[x] = row.get(x, 0.0) + 1.0
        lp.add_row(sorted((y, c) for y, c in row.items()), ">=", 0.0, tag=("gain", x, u))
        row = {x: 1.0}
        for y, q in m.kernel[(x, u)]:
            row[n + y] = row.get(n + y, 0.0) - q
        row[n + x] = row.get(n + x, 0.0) + 1.0
        lp.add_row(sorted(row.items()), ">=", r[k], tag=("bias", x, u))
    return lp


@dataclass
class GainSolution:
    status: Status
    model: object = None
    v: np.ndarray | None = None
    h: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    objective: float = math.nan
    lambda_dual: float | None = None
    nu: np.ndarray | None = None
    reward: np.ndarray | None = None
    eps_states: frozenset | None = None
    eps_bound: float | None = None
    iterations: int = 0
    checks: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status is Status.OPTIMAL

    def alpha_mass(self, states=None):
        if states is None:
            return float(self.alpha.sum())
        s = frozenset(states)
        mask = np.array([x in s for x in self.model.pair_state])
        return float(self.alpha[mask].sum())

    def to_dict(self):
        m = self.model
        doc = {"status": self.status.value, "objective": self.objective,
               "lambda_dual": self.lambda_dual}
        if self.v is not None:
            doc["v"] = self.v.tolist()
            doc["h"] = self.h.tolist()
            doc["alpha"] = {f"({m.labels[x]},{m.actions[u]})": a
                            for (x, u), a in zip(m.pairs, self.alpha.tolist())}
            doc["beta"] = {f"({m.labels[x]},{m.actions[u]})": b
                           for (x, u), b in zip(m.pairs, self.beta.tolist())}
        return doc


def solve_gain(m, reward, nu, epsilon_row=None):
    """Solve the occupation-measure LP and unpack gain, bias and measures.

    Only an ``epsilon_row`` can make the LP infeasible; that outcome is
    returned as a solution with ``status == INFEASIBLE``.
    """
    g = build_gain_lp(m, reward, nu, epsilon_row)
    sol = solve_lp(g.lp)
    nu = np.asarray(nu, dtype=float)
    r = pair_reward(m, reward)
    if sol.status is Status.INFEASIBLE and epsilon_row is not None:
        return GainSolution(Status.INFEASIBLE, m, nu=nu, iterations=sol.iterations)
    if sol.status is not Status.OPTIMAL:
        raise SolverError(f"gain LP ended with status {sol.status.value}: {sol.message}")
    k = g.n_pairs
    out = GainSolution(
        Status.OPTIMAL, m,
        v=sol.duals[g.mix_rows].copy(),
        h=sol.duals[g.flow_rows].copy(),
        alpha=np.maximum(sol.x[:k], 0.0),
        beta=np.maximum(sol.x[k:], 0.0),
        objective=sol.objective,
        lambda_dual=float(sol.duals[g.eps_row]) if g.eps_row is not None else None,
        nu=nu, reward=r, iterations=sol.iterations,
    )
    if epsilon_row is not None:
        out.eps_states = frozenset(epsilon_row[0])
        out.eps_bound = float(epsilon_row[1])
    out.checks = _certify(m, out, sol)
    return out


def _certify(m, s, lp_sol):
    """Post-solve identities; raises :class:`SolverError` on violation."""
    P = m.transitions
    x_of = m.pair_state
    lam = s.lambda_dual or 0.0
    r_eff = s.reward.copy()
    if s.eps_states:
        r_eff -= lam * np.array([x in s.eps_states for x in x_of], dtype=float)
    gain_res = float(np.max(P @ s.v - s.v[x_of], initial=0.0))
    bias_res = float(np.max(r_eff + P @ s.h - s.h[x_of] - s.v[x_of], initial=0.0))
    agg = float(s.nu @ s.v + (s.eps_bound * lam if s.eps_states is not None else 0.0))
    checks = {
        "gain_residual": gain_res,
        "bias_residual": bias_res,
        "aggregate_error": abs(agg - s.objective),
        "alpha_mass_error": abs(s.alpha.sum() - s.nu.sum()),
        "duality_gap": lp_sol.gap,
        "primal_residual": lp_sol.primal_residual,
        "dual_residual": lp_sol.dual_residual,
        "slackness": lp_sol.slackness,
    }
    certified = ("gain_residual", "bias_residual", "aggregate_error",
                 "alpha_mass_error", "duality_gap")
    bad = {k: checks[k] for k in certified if not checks[k] <= CERT_TOL}
    if bad:
        raise SolverError(f"gain LP certificate failed: {bad}")
    return checks


def extract_policy(sol):
    """Stationary policy from optimal occupation measures.

    alpha-ratios where a state carries recurrent mass, beta-ratios where it
    carries transient mass, and otherwise the action maximizing the expected
    next-state gain (lowest action id on ties). The result is checked to
    satisfy ``P^pi v = v``.
    """
    if not sol.optimal:
        raise SolverError("cannot extract a policy from a non-optimal solution")
    m = sol.model
    t = np.zeros((m.n_states, m.n_actions))
    ptr = m.state_ptr
    nxt = m.transitions @ sol.v
    for x in range(m.n_states):
        lo, hi = ptr[x], ptr[x + 1]
        acts = m.pair_action[lo:hi]
        # round-off entries would otherwise leak probability onto dead actions
        a = np.where(sol.alpha[lo:hi] > ACTIVE_TOL, sol.alpha[lo:hi], 0.0)
        b = np.where(sol.beta[lo:hi] > ACTIVE_TOL, sol.beta[lo:hi], 0.0)
        if a.sum() > ACTIVE_TOL:
            t[x, acts] = a / a.sum()
        elif b.sum() > ACTIVE_TOL:
            t[x, acts] = b / b.sum()
        else:
            q = nxt[lo:hi]
            best = int(np.flatnonzero(q >= q.max() - ACTIVE_TOL)[0])
            t[x, acts[best]] = 1.0
    pi = StationaryPolicy(t)
    res = stationarity_residual(m, pi, sol.v, sol.nu)
    if res > CERT_TOL:
        raise SolverError(f"extracted policy does not preserve the gain (|P v - v| = {res:.3g})")
    return pi


def stationarity_residual(m, pi, v, nu=None):
    """``max |P^pi v - v|``; zero when the policy keeps the optimal gain.

    With ``nu`` the maximum runs over states the policy can reach from the
    support of ``nu``. Elsewhere the duals only bound the gain from above.
    """
    P = induced_chain(m, pi)
    gap = np.abs(P @ v - v)
    if nu is not None:
        seen = np.asarray(nu) > 0
        while True:
            grow = seen | (P.T @ seen.astype(float) > 0)
            if (grow == seen).all():
                break
            seen = grow
        gap = gap[seen]
    return float(np.max(gap, initial=0.0))


# ---------------------------------------------------------------------------
# oracles that never touch the LP

def is_closed(m, states):
    """Closed under every policy: no feasible action leaks mass out of the set."""
    s = frozenset(states)
    return all(m.mass_into(x, u, s) >= 1.0 - 1e-12 for x in s for u in m.feasible[x])


def _closed_under(P, states, n):
    mask = np.zeros(n, dtype=bool)
    mask[list(states)] = True
    if not mask.any():
        return True
    leak = np.asarray(P[mask][:, ~mask].sum(axis=1)).ravel()
    return bool(np.all(leak <= 1e-12))


def absorption_probability(m, pi, target, tol=1e-12, max_iter=100_000):
    """Probability of ever entering the closed set ``target`` under ``pi``.

    Iterates ``h <- 1_S + 1_{S^c} P h`` from ``1_S``. Stops once the
    geometric tail bound ``diff * rho / (1 - rho)`` drops below ``tol``; if the
    contraction is too slow to certify, falls back to a direct solve on the
    states that can reach ``target``.
    """
    n = m.n_states
    P = induced_chain(m, pi)
    if not _closed_under(P, target, n):
        raise ModelError("target set is not closed under the policy")
    in_s = np.zeros(n, dtype=bool)
    in_s[list(target)] = True
    h = in_s.astype(float)
    if not in_s.any():
        return h
    prev_diff = None
    for _ in range(max_iter):
        nh = np.where(in_s, 1.0, P @ h)
        diff = float(np.max(np.abs(nh - h)))
        h = nh
        if diff == 0.0:
            return h
        if prev_diff:
            rho = diff / prev_diff
            if rho < 1.0 and diff * rho / (1.0 - rho) <= tol:
                return h
        prev_diff = diff
    return _absorption_direct(P, in_s)


def _absorption_direct(P, in_s):
    n = len(in_s)
    reach = in_s.copy()
    G = P.T.tocsr()
    frontier = np.flatnonzero(in_s)
    while frontier.size:
        nb = np.unique(G[frontier].indices)
        nb = nb[~reach[nb]]
        reach[nb] = True
        frontier = nb
    trans = reach & ~in_s
    h = in_s.astype(float)
    idx = np.flatnonzero(trans)
    if idx.size:
        Ptt = P[idx][:, idx]
        rhs = np.asarray(P[idx][:, in_s].sum(axis=1)).ravel()
        h[idx] = spla.spsolve((sp.identity(idx.size) - Ptt).tocsc(), rhs)
    return h


def evaluate_policy_gain(m, reward, pi, nu=None):
    """Long-run average reward of ``pi`` for a closed-indicator reward.

    Returns ``(v, aggregate)`` with ``aggregate = nu . v`` (``None`` without nu).
    """
    if not isinstance(reward, IndicatorReward):
        raise ModelError("evaluate_policy_gain needs an IndicatorReward over closed sets")
    v = np.zeros(m.n_states)
    for c, s in reward.terms:
        if not is_closed(m, s):
            raise ModelError(f"reward set {sorted(s)[:6]}... is not closed under every policy")
        if c != 0:
            v += c * absorption_probability(m, pi, s)
    agg = None if nu is None else float(np.asarray(nu, dtype=float) @ v)
    return v, agg


def value_iteration_reach(m, target, tol=1e-12, max_iter=1_000_000, history=False):
    """Maximal probability of reaching the absorbing set ``target`` (Bellman recursion)."""
    if not is_closed(m, target):
        raise ModelError("value iteration expects the target set to be absorbing")
    kern = kernels.get()
    P = m.transitions
    indptr = P.indptr.astype(np.int64)
    indices = P.indices.astype(np.int64)
    data = P.data.astype(float)
    ptr = m.state_ptr
    v = np.zeros(m.n_states)
    v[list(target)] = 1.0
    out = np.empty_like(v)
    hist = [v.copy()] if history else None
    prev = None
    for _ in range(max_iter):
        kern.bellman_sweep(indptr, indices, data, ptr, v, out)
        diff = float(np.max(np.abs(out - v)))
        v, out = out, v
        if history:
            hist.append(v.copy())
        if diff == 0.0:
            break
        if prev:
            rho = diff / prev
            if rho < 1.0 and diff * rho / (1.0 - rho) <= tol:
                break
        prev = diff
    return (v, hist) if history else v


def cesaro_average(m, pi, target, horizon):
    """Exact ``(1/N) sum_{t<N} P(X_t in A)`` for every start state."""
    P = induced_chain(m, pi)
    w = np.zeros(m.n_states)
    w[list(target)] = 1.0
    acc = np.zeros(m.n_states)
    for _ in range(horizon):
        acc += w
        w = P @ w
    return acc / horizon
