"""Seeded trajectory sampling and Monte Carlo hitting estimates.

Randomness comes from a counter-based stream: draw ``k`` of trajectory ``i``
is a pure function of ``(seed, i, k)``. Draw 0 picks the start state, draws
``2t+1`` and ``2t+2`` pick the action and the successor at step ``t``. Any
chunking or thread schedule therefore gives the same numbers.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .model import ModelError, StationaryPolicy, TwoPhasePolicy


class CounterStream:
    """Uniforms for one trajectory: ``uniform(k)`` depends only on (seed, index, k)."""

    def __init__(self, seed, index=0):
        self.seed = int(seed)
        self.index = int(index)
        self.key = kernels.stream_key(self.seed, self.index)

    def uniform(self, k):
        return float(kernels.uniform(self.key, k))


def _cumulative(weights):
    w = np.asarray(weights, dtype=float)
    c = np.cumsum(w)
    last = np.flatnonzero(w > 0)
    if last.size:
        c[last[-1]:] = 1.0
    return c


def _first_below(cum, u):
    for j, c in enumerate(cum):
        if u < c:
            return j
    return len(cum) - 1


def _phases(policy):
    if isinstance(policy, TwoPhasePolicy):
        return policy.mu0, policy.mu1, policy.avoid_set
    if isinstance(policy, StationaryPolicy):
        return policy, policy, None
    raise TypeError(f"unsupported policy type {type(policy).__name__}")


@dataclass
class CompiledChain:
    """Flat CSR tables consumed by the sampling kernels."""

    pol_ptr: np.ndarray
    pol_pair: np.ndarray
    pol_cum: np.ndarray
    ker_ptr: np.ndarray
    ker_dest: np.ndarray
    ker_cum: np.ndarray


def compile_chain(m, policy):
    mu0, mu1, _ = _phases(policy)
    mu0.check(m)
    mu1.check(m)
    ptr, pairs, cum = [0], [], []
    for mu in (mu0, mu1):
        for x in range(m.n_states):
            acts = [u for u in m.feasible[x] if mu.table[x, u] > 0]
            pairs.extend(m.pair_index[(x, u)] for u in acts)
            cum.extend(_cumulative([mu.table[x, u] for u in acts]))
            ptr.append(len(pairs))
    kptr, dest, kcum = [0], [], []
    for p in m.pairs:
        row = [(y, q) for y, q in m.kernel[p] if q > 0]
        dest.extend(y for y, _ in row)
        kcum.extend(_cumulative([q for _, q in row]))
        kptr.append(len(dest))
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    return CompiledChain(i64(ptr), i64(pairs), f64(cum), i64(kptr), i64(dest), f64(kcum))


@dataclass
class Trajectory:
    start: int
    steps: list
    final: int
    mode_switch: int | None = None
    hit_a: int | None = None
    hit_b: int | None = None
    truncated: bool = False

    @property
    def states(self):
        return [x for x, _ in self.steps] + [self.final]


def sample_trajectory(m, policy, x0, horizon, stream, stop=(), avoid=None):
    """Sample one path from ``x0``.

    Actions follow ``mu0`` until the history (current state included) meets
    the avoid set, ``mu1`` afterwards. The path ends at ``horizon`` or on
    entering ``stop``.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    mu0, mu1, B = _phases(policy)
    B = frozenset(avoid if avoid is not None else (B or ()))
    stop = frozenset(stop)
    x = int(x0)
    visited = x in B
    traj = Trajectory(start=x, steps=[], final=x, mode_switch=0 if visited else None,
                      hit_b=0 if visited else None)
    t = 0
    while True:
        if x in stop:
            traj.hit_a = t
            break
        if t == horizon:
            traj.truncated = True
            break
        mu = mu1 if visited else mu0
        acts = [u for u in m.feasible[x] if mu.table[x, u] > 0]
        if not acts:
            raise ModelError(f"policy has an empty row at state {m.state_label(x)}")
        u = acts[_first_below(_cumulative([mu.table[x, a] for a in acts]), stream.uniform(2 * t + 1))]
        row = [(y, q) for y, q in m.kernel[(x, u)] if q > 0]
        y = row[_first_below(_cumulative([q for _, q in row]), stream.uniform(2 * t + 2))][0]
        traj.steps.append((x, u))
        x = y
        t += 1
        if x in B and not visited:
            visited = True
            traj.mode_switch = t
            traj.hit_b = t
    traj.final = x
    return traj


def draw_start(nu, stream):
    return _first_below(_cumulative(nu), stream.uniform(0))


@dataclass
class HittingEstimate:
    p_hat_A: float
    p_hat_B: float
    half_width_A: float
    half_width_B: float
    n: int
    truncated_fraction: float
    horizon: int
    seed: int
    hits_A: int = field(default=0, repr=False)
    hits_B: int = field(default=0, repr=False)

    def std_error(self, which="A"):
        p = self.p_hat_A if which == "A" else self.p_hat_B
        return math.sqrt(p * (1.0 - p) / self.n)

    def to_dict(self):
        return asdict(self)


def _half_width(p, n):
    return 1.96 * math.sqrt(p * (1.0 - p) / n)


def _trap_states(m):
    return np.array([all(m.kernel[(x, u)] == ((x, 1.0),) for u in m.feasible[x])
                     for x in range(m.n_states)], dtype=np.uint8)


def estimate_hitting(m, policy, nu, target, avoid, n, horizon, seed,
                     workers=1, chunk=16384, backend=None):
    """Monte Carlo estimates of P(tau_A <= horizon) and P(tau_B before A-absorption).

    Paths stop on entering the target; paths stuck in a state that loops to
    itself under every action are stopped early without bias.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    A, B = frozenset(target), frozenset(avoid)
    _, _, pB = _phases(policy)
    if pB is not None and pB != B:
        raise ModelError("two-phase policy switches on a different set than the avoid set")
    chain = compile_chain(m, policy)
    in_b = np.zeros(m.n_states, dtype=np.uint8)
    in_b[list(B)] = 1
    stop = np.zeros(m.n_states, dtype=np.uint8)
    stop[list(A)] = 1
    trap = _trap_states(m)
    start_cum = np.ascontiguousarray(_cumulative(nu))
    kern = kernels.get(backend)

    def run(lo):
        cnt = min(chunk, n - lo)
        ta, tb, tr = kern.simulate_batch(
            np.uint64(seed), lo, cnt, start_cum, int(horizon),
            chain.pol_ptr, chain.pol_pair, chain.pol_cum,
            chain.ker_ptr, chain.ker_dest, chain.ker_cum, in_b, stop, trap)
        return int((ta >= 0).sum()), int((tb >= 0).sum()), int(np.asarray(tr).sum())

    starts = range(0, n, chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    ha = sum(p[0] for p in parts)
    hb = sum(p[1] for p in parts)
    tr = sum(p[2] for p in parts)
    pa, pb = ha / n, hb / n
    return HittingEstimate(pa, pb, _half_width(pa, n), _half_width(pb, n), n, tr / n,
                           int(horizon), int(seed), ha, hb)


def simulate_paths(m, policy, nu, n, horizon, seed, stop=()):
    """Full trajectories ``0..n-1`` (starts drawn from ``nu``)."""
    out = []
    for i in range(n):
        s = CounterStream(seed, i)
        out.append(sample_trajectory(m, policy, draw_start(nu, s), horizon, s, stop=stop))
    return out


def trajectories_csv(m, trajs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["traj_id", "t", "state", "action", "mode"])
    for i, tr in enumerate(trajs):
        switch = tr.mode_switch
        for t, (x, u) in enumerate(tr.steps):
            mode = int(switch is not None and t >= switch)
            w.writerow([i, t, m.labels[x], m.actions[u], mode])
        t = len(tr.steps)
        w.writerow([i, t, m.labels[tr.final], "", int(switch is not None and t >= switch)])
    return buf.getvalue()
