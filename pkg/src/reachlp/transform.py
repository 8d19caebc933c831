"""Kernel surgery: absorbing sets and the visited-B augmentation.

The augmented state ``(x, i)`` is stored at index ``2*x + i``; ``i = 1``
means the path has already been in the avoid set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Model, ModelError, StationaryPolicy, TwoPhasePolicy


def aug_index(x, i):
    return 2 * x + i


def aug_split(j):
    return j // 2, j % 2


def make_absorbing(m, sets):
    """Turn every state in each of ``sets`` into a self-loop under all actions."""
    sets = [frozenset(s) for s in sets]
    seen = set()
    for s in sets:
        if seen & s:
            raise ModelError(f"absorbing sets overlap on {sorted(seen & s)}")
        seen |= s
    if not seen:
        return m
    kernel = dict(m.kernel)
    for x in seen:
        for u in m.feasible[x]:
            kernel[(x, u)] = ((x, 1.0),)
    return m.with_kernel(kernel)


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    base: Model
    avoid_set: frozenset
    model: Model

    def index(self, x, i):
        return aug_index(x, i)

    def split(self, j):
        return aug_split(j)

    def layer(self, i, states=None):
        states = range(self.base.n_states) if states is None else states
        return frozenset(aug_index(x, i) for x in states)

    def both_layers(self, states):
        return self.layer(0, states) | self.layer(1, states)

    def sidecar(self):
        return {"aug_index": {str(j): {"x": self.base.labels[j // 2], "i": j % 2}
                              for j in range(self.model.n_states)}}


def augment(m, avoid):
    """Product of ``m`` with a flag recording whether ``avoid`` has been visited."""
    B = frozenset(avoid)
    if any(not 0 <= x < m.n_states for x in B):
        raise ModelError("avoid set references unknown states")
    n = m.n_states
    kernel = {}
    feasible = []
    for j in range(2 * n):
        x, i = aug_split(j)
        feasible.append(m.feasible[x])
        for u in m.feasible[x]:
            row = []
            for y, q in m.kernel[(x, u)]:
                to_layer = 1 if (i == 1 or y in B) else 0
                row.append((aug_index(y, to_layer), q))
            kernel[(j, u)] = tuple(sorted(row))
    labels = tuple(f"({m.labels[j // 2]},{j % 2})" for j in range(2 * n))
    model = Model(2 * n, m.actions, tuple(feasible), kernel, None, labels)
    return AugmentedModel(m, B, model)


def lift_distribution(nu, avoid):
    """Place ``nu(x)`` on ``(x, 1)`` for x in the avoid set, else on ``(x, 0)``."""
    nu = np.asarray(nu, dtype=float)
    out = np.zeros(2 * len(nu))
    for x, w in enumerate(nu):
        out[aug_index(x, 1 if x in avoid else 0)] = w
    return out


@dataclass(frozen=True)
class IndicatorReward:
    """State reward ``sum_k c_k * 1[x in S_k]``; terms are ``(c_k, S_k)``."""

    terms: tuple

    def state_values(self, n):
        r = np.zeros(n)
        for c, s in self.terms:
            r[list(s)] += c
        return r


def build_lagrangian_reward(aug, target, lam):
    target = frozenset(target)
    if target & aug.avoid_set:
        raise ModelError(f"target and avoid sets intersect on {sorted(target & aug.avoid_set)}")
    if lam < 0:
        raise ModelError("multiplier must be nonnegative")
    terms = ((1.0, aug.both_layers(target)),)
    if lam != 0:
        terms += ((-float(lam), aug.layer(1)),)
    return IndicatorReward(terms)


def project_policy(aug_pi, avoid):
    """Split a stationary policy on the augmented model into its two phases."""
    t = aug_pi.table
    return TwoPhasePolicy(StationaryPolicy(t[0::2]), StationaryPolicy(t[1::2]), frozenset(avoid))


def embed_policy(tp):
    t0, t1 = tp.mu0.table, tp.mu1.table
    t = np.empty((2 * t0.shape[0], t0.shape[1]))
    t[0::2] = t0
    t[1::2] = t1
    return StationaryPolicy(t)
