"""Brute-force cross-checks that share no code path with the LP solver.

Random test models, explicit path enumeration, and exact evaluation of a
given two-phase policy through absorption probabilities.
"""
from __future__ import annotations

import itertools

import numpy as np

from .avg import absorption_probability, value_iteration_reach
from .model import ModelError, StationaryPolicy, TwoPhasePolicy, induced_chain, make_model
from .transform import augment, aug_index, embed_policy, lift_distribution, make_absorbing


def random_model(rng, max_states=12, max_actions=4, max_succ=3, min_states=2):
    """Sparse random model; ``rng`` is a Generator or a seed."""
    rng = np.random.default_rng(rng)
    n = int(rng.integers(min_states, max_states + 1))
    k = int(rng.integers(1, max_actions + 1))
    kernel, feasible = {}, []
    for x in range(n):
        acts = sorted(rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False).tolist())
        feasible.append(acts)
        for u in acts:
            dest = rng.choice(n, size=int(rng.integers(1, min(max_succ, n) + 1)), replace=False)
            w = rng.random(dest.size) + 0.05
            kernel[(x, u)] = {int(y): float(q) for y, q in zip(dest, w / w.sum())}
    return make_model(n, [f"a{u}" for u in range(k)], kernel, feasible=feasible)


def random_sets(rng, n, min_size=1):
    """Disjoint nonempty ``A`` and possibly empty ``B`` drawn from ``range(n)``."""
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n).tolist()
    a = int(rng.integers(min_size, max(min_size, n // 3) + 1))
    b = int(rng.integers(0, max(1, (n - a) // 2) + 1))
    return frozenset(perm[:a]), frozenset(perm[a:a + b])


def random_policy(rng, m, deterministic=False):
    rng = np.random.default_rng(rng)
    t = np.zeros((m.n_states, m.n_actions))
    for x in range(m.n_states):
        acts = list(m.feasible[x])
        if deterministic:
            t[x, acts[int(rng.integers(len(acts)))]] = 1.0
        else:
            w = rng.random(len(acts)) + 0.05
            t[x, acts] = w / w.sum()
    return StationaryPolicy(t)


def random_two_phase(rng, m, avoid):
    rng = np.random.default_rng(rng)
    return TwoPhasePolicy(random_policy(rng, m), random_policy(rng, m), frozenset(avoid))


# ---------------------------------------------------------------------------
# path enumeration

def enumerate_paths(m, x0, horizon, action_law, stop=()):
    """All positive-probability histories of length ``horizon`` from ``x0``.

    ``action_law(states)`` maps the visited states so far (current last) to a
    row of action probabilities. A path that enters ``stop`` is not extended.
    Returns ``{(x0, u0, x1, ..., x_T): probability}``.
    """
    stop = frozenset(stop)
    out = {}
    stack = [((int(x0),), 1.0)]
    while stack:
        path, p = stack.pop()
        states = path[0::2]
        if len(states) - 1 == horizon or states[-1] in stop:
            out[path] = out.get(path, 0.0) + p
            continue
        row = action_law(states)
        x = states[-1]
        for u in m.feasible[x]:
            pu = row[u]
            if pu <= 0:
                continue
            for y, q in m.kernel[(x, u)]:
                if q > 0:
                    stack.append((path + (u, y), p * pu * q))
    return out


def two_phase_law(tp):
    B = tp.avoid_set

    def law(states):
        mu = tp.mu1 if any(s in B for s in states) else tp.mu0
        return mu.table[states[-1]]
    return law


def stationary_law(pi):
    return lambda states: pi.table[states[-1]]


def lift_path(path, avoid):
    """Map a base history to the augmented one (flag = B seen so far)."""
    out, seen = [], False
    for k, tok in enumerate(path):
        if k % 2 == 0:
            seen = seen or tok in avoid
            out.append(aug_index(tok, int(seen)))
        else:
            out.append(tok)
    return tuple(out)


def path_measure_gap(m, tp, x0, horizon):
    """Max difference between base path probabilities and their lifts.

    The base side follows ``tp`` with its history-dependent switch; the lifted
    side follows ``embed_policy(tp)`` on the augmented model from
    ``(x0, 1[x0 in B])``.
    """
    B = frozenset(tp.avoid_set)
    aug = augment(m, B)
    base = enumerate_paths(m, x0, horizon, two_phase_law(tp))
    lifted = enumerate_paths(aug.model, aug_index(x0, int(x0 in B)), horizon,
                             stationary_law(embed_policy(tp)))
    mapped = {lift_path(path, B): p for path, p in base.items()}
    keys = set(mapped) | set(lifted)
    return max(abs(mapped.get(k, 0.0) - lifted.get(k, 0.0)) for k in keys)


def _lumped_first_hits(m, pi, x0, horizon, first, second=frozenset()):
    """P(hit ``first`` at time t without touching ``second`` before), t <= horizon.

    Paths are grouped by their current state, which is exact for a stationary
    policy since the future only depends on where the path is.
    """
    P = {x: {} for x in range(m.n_states)}
    for (x, u), row in m.kernel.items():
        pu = pi.table[x, u]
        if pu > 0:
            for y, q in row:
                P[x][y] = P[x].get(y, 0.0) + pu * q
    hits = np.zeros(horizon + 1)
    alive = {int(x0): 1.0}
    for t in range(horizon + 1):
        nxt = {}
        for x, p in alive.items():
            if x in first:
                hits[t] += p
            elif x not in second and t < horizon:
                for y, q in P[x].items():
                    nxt[y] = nxt.get(y, 0.0) + p * q
        alive = nxt
    return hits


def reach_avoid_gap(m, pi, target, avoid, horizon, explicit=True):
    """Max over starts of |P(tau_A < tau_B, tau_A <= T) - P~(tau_A <= T)|.

    The left side runs on the original kernel, the right side on the kernel
    with ``target`` and ``avoid`` made absorbing. With ``explicit`` both are
    summed over enumerated paths; otherwise paths are lumped by state.
    """
    A, B = frozenset(target), frozenset(avoid)
    mt = make_absorbing(m, [A, B])
    worst = 0.0
    for x0 in range(m.n_states):
        if explicit:
            law = stationary_law(pi)
            lhs = sum(p for path, p in enumerate_paths(m, x0, horizon, law, stop=A | B).items()
                      if path[-1] in A)
            rhs = sum(p for path, p in enumerate_paths(mt, x0, horizon, law).items()
                      if any(s in A for s in path[0::2]))
        else:
            lhs = _lumped_first_hits(m, pi, x0, horizon, A, B).sum()
            rhs = _lumped_first_hits(mt, pi, x0, horizon, A).sum()
        worst = max(worst, abs(lhs - rhs))
    return worst


def hitting_marginal_gap(m, pi, target, horizon):
    """For ``target`` closed under ``pi``: max |P(tau_A <= t) - P(X_t in A)|, t <= T."""
    A = frozenset(target)
    P = induced_chain(m, pi).toarray()
    leak = P[np.ix_(sorted(A), [y for y in range(m.n_states) if y not in A])]
    if leak.size and leak.max() > 1e-12:
        raise ModelError("target is not closed under the policy")
    ind = np.zeros(m.n_states)
    ind[sorted(A)] = 1.0
    marg = [ind]
    for _ in range(horizon):
        marg.append(P @ marg[-1])
    worst = 0.0
    for x0 in range(m.n_states):
        cum = np.cumsum(_lumped_first_hits(m, pi, x0, horizon, A))
        worst = max(worst, max(abs(cum[t] - marg[t][x0]) for t in range(horizon + 1)))
    return worst


# ---------------------------------------------------------------------------
# exact evaluation of fixed policies

def two_phase_performance(m, tp, target, avoid, nu):
    """``(P(reach A), P(visit B before A))`` of ``tp`` from ``nu``, exactly."""
    A, B = frozenset(target), frozenset(avoid)
    aug = augment(m, B)
    am = make_absorbing(aug.model, [aug.layer(0, A), aug.layer(1, A)])
    pi = embed_policy(tp)
    nu_hat = lift_distribution(nu, B)
    reach = absorption_probability(am, pi, aug.both_layers(A))
    visit = absorption_probability(am, pi, aug.layer(1))
    return float(nu_hat @ reach), float(nu_hat @ visit)


def _can_reach(support, in_s):
    can = in_s.copy()
    while True:
        grow = can | support[:, can].any(axis=1)
        if (grow == can).all():
            return can
        can = grow


def _batched_absorption(Ps, in_s):
    """Absorption into the closed set ``in_s`` for a stack of small chains.

    Chains sharing a support pattern share one batched direct solve over the
    states that can reach ``in_s``.
    """
    out = np.tile(in_s.astype(float), (len(Ps), 1))
    support = Ps > 0
    keys = [np.packbits(s).tobytes() for s in support]
    groups = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    s_idx = np.flatnonzero(in_s)
    for members in groups.values():
        can = _can_reach(support[members[0]], in_s)
        idx = np.flatnonzero(can & ~in_s)
        if not idx.size:
            continue
        rows = Ps[members][:, idx]
        M = np.eye(idx.size) - rows[:, :, idx]
        out[np.ix_(members, idx)] = np.linalg.solve(M, rows[:, :, s_idx].sum(axis=2)[..., None])[..., 0]
    return out


def _dense_kernels(m):
    K = np.zeros((m.n_actions, m.n_states, m.n_states))
    for (x, u), row in m.kernel.items():
        for y, q in row:
            K[u, x, y] += q
    return K


def markov_grid_search(m, target, avoid, nu, eps, step=0.01):
    """Best stationary Markov policy under the B budget, by exhaustive grid.

    Only states whose feasible actions have different kernels are searched;
    each may mix at most two distinct actions. Returns ``(value, policy)`` or
    ``(nan, None)`` when nothing on the grid is feasible.
    """
    A, B = frozenset(target), frozenset(avoid)
    nu = np.asarray(nu, dtype=float)
    free, base = [], np.zeros((m.n_states, m.n_actions))
    for x in range(m.n_states):
        acts = list(m.feasible[x])
        distinct = {m.kernel[(x, u)]: u for u in reversed(acts)}
        base[x, acts[0]] = 1.0
        if len(distinct) > 2:
            raise ModelError("grid search handles at most two distinct actions per state")
        if len(distinct) == 2:
            free.append((x,) + tuple(sorted(distinct.values())))
    K_a, K_ab = _dense_kernels(make_absorbing(m, [A])), _dense_kernels(make_absorbing(m, [A, B]))
    in_a = np.zeros(m.n_states, dtype=bool)
    in_a[sorted(A)] = True
    in_b = np.zeros(m.n_states, dtype=bool)
    in_b[sorted(B)] = True
    grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    tables = []
    for qs in itertools.product(grid, repeat=len(free)):
        t = base.copy()
        for (x, u0, u1), q in zip(free, qs):
            t[x] = 0.0
            t[x, u0], t[x, u1] = 1.0 - q, q
        tables.append(t)
    T = np.array(tables)
    reach = _batched_absorption(np.einsum("qxu,uxy->qxy", T, K_a), in_a) @ nu
    visit = _batched_absorption(np.einsum("qxu,uxy->qxy", T, K_ab), in_b) @ nu
    ok = np.flatnonzero(visit <= eps + 1e-12)
    if not ok.size:
        return float("nan"), None
    i = ok[np.argmax(reach[ok])]
    return float(reach[i]), StationaryPolicy(T[i])


def two_phase_line_search(m, family, target, avoid, nu, eps, step=1e-4):
    """Maximize P(reach A) over ``family(q)``, q on a grid in [0, 1], s.t. B budget.

    ``family`` maps q to a TwoPhasePolicy. Returns ``(value, q)``.
    """
    A, B = frozenset(target), frozenset(avoid)
    aug = augment(m, B)
    K = _dense_kernels(make_absorbing(aug.model, [aug.layer(0, A), aug.layer(1, A)]))
    nu_hat = lift_distribution(nu, B)
    in_a = np.zeros(aug.model.n_states, dtype=bool)
    in_a[sorted(aug.both_layers(A))] = True
    in_1 = np.zeros(aug.model.n_states, dtype=bool)
    in_1[sorted(aug.layer(1))] = True
    qs = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    T = np.array([embed_policy(family(float(q))).table for q in qs])
    P = np.einsum("qxu,uxy->qxy", T, K)
    reach = _batched_absorption(P, in_a) @ nu_hat
    visit = _batched_absorption(P, in_1) @ nu_hat
    ok = np.flatnonzero(visit <= eps + 1e-12)
    if not ok.size:
        return float("nan"), None
    i = ok[np.argmax(reach[ok])]
    return float(reach[i]), float(qs[i])


def absorbed_time_mass(m, pi, target):
    """``E_x[tau_A ; tau_A < inf]`` for ``target`` closed under ``pi``.

    For a closed target, ``absorption - cesaro_N`` equals
    ``E[min(tau_A, N) ; tau_A < inf] / N``, so this is the exact O(1/N)
    coefficient of the Cesaro bias.
    """
    P = induced_chain(m, pi).toarray()
    in_s = np.zeros(m.n_states, dtype=bool)
    in_s[sorted(target)] = True
    h = _batched_absorption(P[None], in_s)[0]
    g = np.zeros(m.n_states)
    idx = np.flatnonzero((h > 0) & ~in_s)
    if idx.size:
        g[idx] = np.linalg.solve(np.eye(idx.size) - P[np.ix_(idx, idx)], h[idx])
    return g


def reach_avoid_oracle(m, target, avoid):
    """Per-state max P(reach A before B) by value iteration on the absorbed kernel."""
    return value_iteration_reach(make_absorbing(m, [frozenset(target), frozenset(avoid)]),
                                 frozenset(target))
