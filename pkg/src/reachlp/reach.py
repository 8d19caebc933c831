"""Reachability problems as average-reward LPs.

``p_domain``          maximal probability of reaching a closable target set
``reach_avoid``       reach A before B, with A and B both made absorbing
``constrained_reach`` reach A subject to a bound on the probability of
                      visiting B first, solved on the visited-B product model
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .avg import SolverError, absorption_probability, extract_policy, solve_gain
from .model import ModelError, StationaryPolicy, TwoPhasePolicy, indicator, policy_to_dict
from .transform import (IndicatorReward, augment, build_lagrangian_reward, embed_policy,
                        lift_distribution, make_absorbing, project_policy)

ZERO_TOL = 1e-8
FEASIBILITY_TOL = 1e-9
ATTAIN_TOL = 1e-7


class Feasibility(str, enum.Enum):
    FEASIBLE = "FEASIBLE"
    INFEASIBLE = "INFEASIBLE"


def _nonneg(x):
    # drop the sign of -0.0 and of round-off below the LP tolerance
    return 0.0 if x <= 0.0 and x > -1e-12 else float(x)


def _disjoint(A, B):
    if A & B:
        raise ModelError(f"target and avoid sets intersect on {sorted(A & B)}")


def check_closable(m, target):
    """For each x in ``target``: does some action keep all mass inside it?"""
    A = frozenset(target)
    return {x: any(m.mass_into(x, u, A) >= 1.0 - 1e-12 for u in m.feasible[x])
            for x in sorted(A)}


@dataclass
class PDomainResult:
    v_star: np.ndarray
    lambda_sets: dict
    domain: frozenset
    escape: frozenset
    policy: StationaryPolicy
    threshold: float = ZERO_TOL
    gain: object = None


def p_domain(m, target, ps=(1.0,), threshold=ZERO_TOL, absorb=True):
    """Optimal long-run time fraction in ``target`` and the sets it induces.

    With ``absorb`` the target is first made absorbing; when the target is
    closable this gives the same values with a smaller, better-behaved LP.
    """
    A = frozenset(target)
    closable = check_closable(m, A)
    bad = [m.state_label(x) for x, ok in closable.items() if not ok]
    if bad:
        raise ModelError(f"target is not closable (Assumption 1): no action keeps "
                         f"states {bad} inside the target")
    mm = make_absorbing(m, [A]) if absorb else m
    sol = solve_gain(mm, indicator(m.n_states, A), np.ones(m.n_states))
    v = np.clip(sol.v, 0.0, 1.0)
    domain = frozenset(np.flatnonzero(v > threshold).tolist())
    escape = frozenset(range(m.n_states)) - domain
    lam = {p: frozenset(np.flatnonzero(v >= p - threshold).tolist()) for p in ps}
    return PDomainResult(v, lam, domain, escape, extract_policy(sol), threshold, sol)


@dataclass
class ReachAvoidResult:
    v_tilde: np.ndarray
    policy: StationaryPolicy
    value: float
    gain: object = None


def reach_avoid(m, target, avoid, nu):
    """Maximal probability of entering ``target`` before ``avoid``."""
    A, B = frozenset(target), frozenset(avoid)
    _disjoint(A, B)
    mt = make_absorbing(m, [A, B])
    sol = solve_gain(mt, indicator(m.n_states, A), np.ones(m.n_states))
    v = np.clip(sol.v, 0.0, 1.0)
    return ReachAvoidResult(v, extract_policy(sol), float(np.asarray(nu, dtype=float) @ v), sol)


@dataclass
class ConstrainedReachResult:
    status: Feasibility
    value: float
    lambda_star: float
    policy: TwoPhasePolicy | None
    constraint_mass: float
    slackness: float
    epsilon: float
    gain: object = None
    policy_value: float = math.nan
    policy_mass: float = math.nan
    mixture: tuple | None = None

    @property
    def feasible(self):
        return self.status is Feasibility.FEASIBLE

    @property
    def attained(self):
        """Whether ``policy`` on its own reaches ``value`` within the budget."""
        return (self.feasible and abs(self.policy_value - self.value) <= ATTAIN_TOL
                and self.policy_mass <= self.epsilon + ATTAIN_TOL)

    @property
    def active(self):
        return self.feasible and self.constraint_mass >= self.epsilon - 1e-8


def constrained_model(m, target, avoid):
    """Product model with the target absorbing inside both layers."""
    A, B = frozenset(target), frozenset(avoid)
    _disjoint(A, B)
    aug = augment(m, B)
    am = make_absorbing(aug.model, [aug.layer(0, A), aug.layer(1, A)])
    return aug, am


def _exact_performance(aug, am, tp, nu_hat, target):
    """Exact ``(P(reach target), P(visit B first))`` of ``tp`` on the product model."""
    pi = embed_policy(tp)
    reach = absorption_probability(am, pi, aug.both_layers(target))
    visit = absorption_probability(am, pi, aug.layer(1))
    return float(nu_hat @ reach), float(nu_hat @ visit)


def _lagrangian_policy(aug, am, target, nu_hat, lam):
    sol = solve_gain(am, build_lagrangian_reward(aug, target, lam), nu_hat)
    return project_policy(extract_policy(sol), aug.avoid_set)


def _split_mixture(aug, am, target, nu_hat, eps, lam, value):
    """Two Lagrangian-optimal policies and a start-time coin attaining ``value``.

    Slightly above and below ``lam`` the Lagrangian optimum picks the
    cheapest and the costliest vertex of the optimal face; mixing them once,
    before the first step, spends the budget exactly.
    """
    for delta in (1e-4, 1e-6, 1e-3, 1e-8):
        step = delta * max(1.0, lam)
        try:
            lo = _lagrangian_policy(aug, am, target, nu_hat, lam + step)
            hi = _lagrangian_policy(aug, am, target, nu_hat, max(lam - step, 0.0))
        except SolverError:
            continue
        (r_lo, m_lo), (r_hi, m_hi) = (_exact_performance(aug, am, tp, nu_hat, target)
                                      for tp in (lo, hi))
        if m_lo > eps + ATTAIN_TOL:
            continue
        theta = 0.0 if m_hi <= m_lo else min(1.0, (eps - m_lo) / (m_hi - m_lo))
        if abs((1 - theta) * r_lo + theta * r_hi - value) <= ATTAIN_TOL:
            return ((1.0 - theta, lo), (theta, hi))
    return None


def constrained_reach(m, target, avoid, nu, eps):
    """Maximize P(reach target) s.t. P(visit avoid before target) <= eps.

    The returned :class:`TwoPhasePolicy` remembers only whether ``avoid`` has
    been visited; the multiplier is the dual of the budget row. When the
    model has recurrent classes outside the target, the LP optimum may need a
    split that no such stationary policy makes (stay in a loop forever with
    some probability, leave it otherwise). The returned policy is then
    evaluated exactly and ``mixture`` holds two policies with start-time
    weights that attain ``value``.
    """
    if not eps >= 0:
        raise ModelError("eps must be nonnegative")
    A, B = frozenset(target), frozenset(avoid)
    aug, am = constrained_model(m, A, B)
    nu_hat = lift_distribution(nu, B)
    reward = IndicatorReward(((1.0, aug.both_layers(A)),))
    layer1 = aug.layer(1)
    sol = solve_gain(am, reward, nu_hat, epsilon_row=(layer1, eps))
    if not sol.optimal:
        return ConstrainedReachResult(Feasibility.INFEASIBLE, math.nan, math.nan, None,
                                      math.nan, math.nan, float(eps), sol)
    mass = sol.alpha_mass(layer1)
    lam = _nonneg(sol.lambda_dual)
    value = float(sol.objective)
    policy = project_policy(extract_policy(sol), B)
    p_value, p_mass = _exact_performance(aug, am, policy, nu_hat, A)
    res = ConstrainedReachResult(Feasibility.FEASIBLE, value, lam, policy, mass,
                                 lam * (eps - mass), float(eps), sol, p_value, p_mass)
    if not res.attained:
        res.mixture = _split_mixture(aug, am, A, nu_hat, eps, lam, value)
    return res


def min_avoid_probability(m, target, avoid):
    """Per start state, the least achievable P(visit avoid before target).

    ``constrained_reach`` from a point mass at x is infeasible exactly when
    this exceeds eps.
    """
    A, B = frozenset(target), frozenset(avoid)
    _disjoint(A, B)
    mt = make_absorbing(m, [A, B])
    sol = solve_gain(mt, -indicator(m.n_states, B), np.ones(m.n_states))
    return np.clip(-sol.v, 0.0, 1.0)


def infeasible_region(m, target, avoid, eps, tol=FEASIBILITY_TOL):
    lo = min_avoid_probability(m, target, avoid)
    return frozenset(np.flatnonzero(lo > eps + tol).tolist())


def result_to_dict(m, res):
    """JSON-ready dict for any of the result types."""
    if isinstance(res, PDomainResult):
        return {"v_star": res.v_star.tolist(),
                "domain": [m.labels[x] for x in sorted(res.domain)],
                "escape": [m.labels[x] for x in sorted(res.escape)],
                "lambda_sets": {repr(float(p)): [m.labels[x] for x in sorted(s)]
                                for p, s in res.lambda_sets.items()},
                "threshold": res.threshold,
                "policy": policy_to_dict(m, res.policy)}
    if isinstance(res, ReachAvoidResult):
        return {"v_tilde": res.v_tilde.tolist(), "value": res.value,
                "policy": policy_to_dict(m, res.policy)}
    if isinstance(res, ConstrainedReachResult):
        doc = {"status": res.status.value, "epsilon": res.epsilon}
        if res.feasible:
            doc.update(value=res.value, lambda_star=res.lambda_star,
                       constraint_mass=res.constraint_mass, slackness=res.slackness,
                       constraint_active=res.active,
                       policy=policy_to_dict(m, res.policy),
                       policy_value=res.policy_value, policy_mass=res.policy_mass,
                       attained=res.attained)
            if res.mixture is not None:
                doc["mixture"] = [{"weight": w, "policy": policy_to_dict(m, tp)}
                                  for w, tp in res.mixture]
        return doc
    raise TypeError(type(res))
