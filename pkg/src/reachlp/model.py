"""Finite Markov control models, policies and the chains they induce.

States and actions are dense integer ids; labels are carried along only for
I/O. The kernel is stored sparsely, one sorted ``(dest, prob)`` tuple per
feasible state-action pair.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

PROB_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed model or policy input."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


@dataclass(frozen=True, eq=False)
class Model:
    n_states: int
    actions: tuple
    feasible: tuple
    kernel: Mapping
    reward: Mapping | None = None
    state_labels: tuple | None = None

    # -- labels ---------------------------------------------------------
    def state_label(self, x):
        return self.state_labels[x] if self.state_labels else str(x)

    def state_id(self, token):
        """Resolve a label or integer id to a state id."""
        return _resolve(token, self.labels, self.n_states, "state")

    def action_id(self, token):
        return _resolve(token, tuple(self.actions), len(self.actions), "action")

    @cached_property
    def labels(self):
        if self.state_labels:
            return tuple(self.state_labels)
        return tuple(str(x) for x in range(self.n_states))

    @property
    def n_actions(self):
        return len(self.actions)

    # -- pair indexing --------------------------------------------------
    @cached_property
    def pairs(self):
        """Feasible ``(x, u)`` pairs ordered by state, then action."""
        return tuple((x, u) for x in range(self.n_states) for u in self.feasible[x])

    @cached_property
    def pair_index(self):
        return {p: k for k, p in enumerate(self.pairs)}

    @cached_property
    def pair_state(self):
        return np.array([x for x, _ in self.pairs], dtype=np.int64)

    @cached_property
    def pair_action(self):
        return np.array([u for _, u in self.pairs], dtype=np.int64)

    @cached_property
    def state_ptr(self):
        """Offsets into :attr:`pairs` such that state x owns ``ptr[x]:ptr[x+1]``."""
        ptr = np.zeros(self.n_states + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(f) for f in self.feasible])
        return ptr

    @cached_property
    def transitions(self):
        """CSR matrix of shape (n_pairs, n_states) with rows Q(.|x,u)."""
        indptr = [0]
        indices, data = [], []
        for p in self.pairs:
            for y, q in self.kernel[p]:
                indices.append(y)
                data.append(q)
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
            shape=(len(self.pairs), self.n_states),
        )

    def row(self, x, u):
        return dict(self.kernel[(x, u)])

    def mass_into(self, x, u, states):
        s = set(states)
        return math.fsum(q for y, q in self.kernel[(x, u)] if y in s)

    def reward_vector(self):
        """Stored reward as an array over :attr:`pairs` (zeros if absent)."""
        r = np.zeros(len(self.pairs))
        if self.reward:
            for k, p in enumerate(self.pairs):
                r[k] = self.reward.get(p, 0.0)
        return r

    def with_kernel(self, kernel, reward=None):
        return Model(self.n_states, self.actions, self.feasible, kernel,
                     reward if reward is not None else self.reward, self.state_labels)

    def same_as(self, other):
        return (self.n_states == other.n_states
                and tuple(self.actions) == tuple(other.actions)
                and tuple(map(tuple, self.feasible)) == tuple(map(tuple, other.feasible))
                and dict(self.kernel) == dict(other.kernel)
                and (self.reward or {}) == (other.reward or {})
                and self.labels == other.labels)


def _resolve(token, labels, n, kind):
    if isinstance(token, (int, np.integer)) and not isinstance(token, bool):
        if 0 <= token < n:
            return int(token)
        raise ModelError(f"{kind} id {token} out of range 0..{n - 1}")
    s = str(token).strip()
    if s in labels:
        return labels.index(s)
    try:
        k = int(s)
    except ValueError:
        raise ModelError(f"unknown {kind} {token!r}") from None
    if 0 <= k < n:
        return k
    raise ModelError(f"unknown {kind} {token!r}")


def make_model(n_states, actions, kernel, feasible=None, reward=None, state_labels=None):
    """Build a :class:`Model` from a ``{(x, u): {y: p}}`` style kernel.

    ``feasible`` defaults to the actions that appear in ``kernel`` for each
    state. Zero-probability entries are dropped.
    """
    if feasible is None:
        fz = [set() for _ in range(n_states)]
        for (x, u) in kernel:
            fz[x].add(u)
        feasible = fz
    feas = tuple(tuple(sorted(f)) for f in feasible)
    kern = {}
    for (x, u), row in kernel.items():
        items = row.items() if isinstance(row, Mapping) else row
        kern[(x, u)] = tuple(sorted((int(y), float(q)) for y, q in items if q != 0.0))
    labels = tuple(str(s) for s in state_labels) if state_labels is not None else None
    return Model(n_states, tuple(actions), feas, kern,
                 dict(reward) if reward else None, labels)


# ---------------------------------------------------------------------------
# validation

def validate_model(m):
    """Return a list of human-readable invariant violations (empty if valid)."""
    report = []
    if m.n_states <= 0:
        report.append("model has no states")
        return report
    if len(m.feasible) != m.n_states:
        report.append(f"feasible sets given for {len(m.feasible)} of {m.n_states} states")
        return report
    for x, acts in enumerate(m.feasible):
        lbl = m.state_label(x)
        if len(acts) == 0:
            report.append(f"state {lbl}: empty feasible action set")
        for u in acts:
            if not 0 <= u < m.n_actions:
                report.append(f"state {lbl}: action id {u} out of range")
                continue
            row = m.kernel.get((x, u))
            where = f"(x={lbl}, u={m.actions[u]})"
            if row is None:
                report.append(f"{where}: no kernel row")
                continue
            dests = [y for y, _ in row]
            if len(set(dests)) != len(dests):
                dup = sorted({y for y in dests if dests.count(y) > 1})
                report.append(f"{where}: duplicate destination(s) {dup}")
            for y, q in row:
                if not 0 <= y < m.n_states:
                    report.append(f"{where}: destination {y} out of range")
                if not (q >= 0.0) or not math.isfinite(q):
                    report.append(f"{where}: invalid probability {q} to {y}")
            total = math.fsum(q for _, q in row)
            if abs(total - 1.0) > PROB_TOL:
                report.append(f"{where}: kernel row sums to {total!r}, not 1")
            if m.reward is not None and (x, u) in m.reward and not math.isfinite(m.reward[(x, u)]):
                report.append(f"{where}: reward is not finite")
    for (x, u) in m.kernel:
        if not (0 <= x < m.n_states) or u not in m.feasible[x]:
            report.append(f"kernel row for infeasible pair (x={x}, u={u})")
    return report


# ---------------------------------------------------------------------------
# policies

@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Randomized stationary policy stored as an (n_states, n_actions) table."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_states(self):
        return self.table.shape[0]

    def prob(self, x, u):
        return float(self.table[x, u])

    def pair_weights(self, m):
        return self.table[m.pair_state, m.pair_action]

    def check(self, m):
        """Raise :class:`ModelError` unless this policy is valid for ``m``."""
        if self.table.shape != (m.n_states, m.n_actions):
            raise ModelError(f"policy shape {self.table.shape} does not match model "
                             f"({m.n_states}, {m.n_actions})")
        bad = []
        for x in range(m.n_states):
            row = self.table[x]
            infeasible = [u for u in np.flatnonzero(row) if u not in m.feasible[x]]
            if infeasible:
                bad.append(f"state {m.state_label(x)}: mass on infeasible actions {infeasible}")
            if np.any(row < 0):
                bad.append(f"state {m.state_label(x)}: negative probability")
            if abs(math.fsum(row) - 1.0) > PROB_TOL:
                bad.append(f"state {m.state_label(x)}: row sums to {math.fsum(row)!r}")
        if bad:
            raise ModelError("policy does not match model", bad)

    def __eq__(self, other):
        return isinstance(other, StationaryPolicy) and np.array_equal(self.table, other.table)

    __hash__ = None

    @classmethod
    def deterministic(cls, m, choice):
        """``choice`` maps state -> action id (or a single id for every state)."""
        t = np.zeros((m.n_states, m.n_actions))
        for x in range(m.n_states):
            u = choice if isinstance(choice, (int, np.integer)) else choice[x]
            t[x, u] = 1.0
        return cls(t)

    @classmethod
    def uniform(cls, m):
        t = np.zeros((m.n_states, m.n_actions))
        for x, acts in enumerate(m.feasible):
            t[x, list(acts)] = 1.0 / len(acts)
        return cls(t)

    @staticmethod
    def mix(a, b, t):
        return StationaryPolicy((1.0 - t) * a.table + t * b.table)


@dataclass(frozen=True, eq=False)
class TwoPhasePolicy:
    """Act with ``mu0`` until the path first visits ``avoid_set``, then ``mu1``."""

    mu0: StationaryPolicy
    mu1: StationaryPolicy
    avoid_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "avoid_set", frozenset(int(x) for x in self.avoid_set))

    def check(self, m):
        self.mu0.check(m)
        self.mu1.check(m)

    def phase(self, visited_avoid):
        return self.mu1 if visited_avoid else self.mu0

    def __eq__(self, other):
        return (isinstance(other, TwoPhasePolicy) and self.mu0 == other.mu0
                and self.mu1 == other.mu1 and self.avoid_set == other.avoid_set)

    __hash__ = None


def induced_chain(m, pi):
    """Row-stochastic CSR matrix of the chain induced by a stationary policy."""
    pi.check(m)
    w = pi.pair_weights(m)
    # P = S^T diag(w) Q where S maps pairs to their source state
    agg = sp.csr_matrix((w, (m.pair_state, np.arange(len(m.pairs)))),
                        shape=(m.n_states, len(m.pairs)))
    P = (agg @ m.transitions).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    return P


# ---------------------------------------------------------------------------
# JSON I/O

def _path_error(path, msg):
    return ModelError(f"{path}: {msg}")


def model_from_dict(doc):
    """Parse the model JSON document; raises :class:`ModelError`."""
    if not isinstance(doc, dict):
        raise _path_error("$", "expected an object")
    states = doc.get("states")
    if isinstance(states, bool) or states is None:
        raise _path_error("$.states", "missing")
    if isinstance(states, int):
        if states <= 0:
            raise ModelError("no states")
        labels = None
        n = states
    elif isinstance(states, list):
        if not states:
            raise ModelError("no states")
        labels = tuple(str(s) for s in states)
        if len(set(labels)) != len(labels):
            raise _path_error("$.states", "duplicate state labels")
        n = len(labels)
    else:
        raise _path_error("$.states", "expected an int or a list of labels")
    actions = doc.get("actions")
    if not isinstance(actions, list) or not actions:
        raise _path_error("$.actions", "expected a nonempty list")
    actions = tuple(str(a) for a in actions)
    if len(set(actions)) != len(actions):
        raise _path_error("$.actions", "duplicate action labels")
    stub = Model(n, actions, tuple(() for _ in range(n)), {}, None, labels)

    feas = [set() for _ in range(n)]
    fdoc = doc.get("feasible")
    if not isinstance(fdoc, dict):
        raise _path_error("$.feasible", "expected an object")
    for key, acts in fdoc.items():
        path = f"$.feasible[{key!r}]"
        try:
            x = stub.state_id(key)
        except ModelError as e:
            raise _path_error(path, str(e)) from None
        if not isinstance(acts, list):
            raise _path_error(path, "expected a list of actions")
        for a in acts:
            try:
                feas[x].add(stub.action_id(a))
            except ModelError as e:
                raise _path_error(path, str(e)) from None

    kdoc = doc.get("kernel")
    if not isinstance(kdoc, list):
        raise _path_error("$.kernel", "expected a list")
    rows = {}
    for i, e in enumerate(kdoc):
        path = f"$.kernel[{i}]"
        if not isinstance(e, dict) or not {"x", "u", "to", "p"} <= e.keys():
            raise _path_error(path, "expected fields x, u, to, p")
        try:
            x, u, y = stub.state_id(e["x"]), stub.action_id(e["u"]), stub.state_id(e["to"])
        except ModelError as err:
            raise _path_error(path, str(err)) from None
        p = e["p"]
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise _path_error(path + ".p", "expected a number")
        row = rows.setdefault((x, u), {})
        if y in row:
            raise _path_error(path, f"duplicate kernel entry (x={stub.state_label(x)}, "
                                    f"u={actions[u]}, to={stub.state_label(y)})")
        row[y] = float(p)

    reward = None
    if doc.get("reward") is not None:
        reward = {}
        for i, e in enumerate(doc["reward"]):
            path = f"$.reward[{i}]"
            try:
                key = (stub.state_id(e["x"]), stub.action_id(e["u"]))
            except (KeyError, TypeError):
                raise _path_error(path, "expected fields x, u, r") from None
            except ModelError as err:
                raise _path_error(path, str(err)) from None
            if key in reward:
                raise _path_error(path, "duplicate reward entry")
            reward[key] = float(e["r"])

    kernel = {k: tuple(sorted(v.items())) for k, v in rows.items()}
    m = Model(n, actions, tuple(tuple(sorted(f)) for f in feas), kernel, reward, labels)
    report = validate_model(m)
    if report:
        raise ModelError("invalid model:\n  " + "\n  ".join(report), report)
    return m


def load_model(text):
    """Parse and validate a model from JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return model_from_dict(doc)


def model_to_dict(m):
    doc = {
        "states": list(m.state_labels) if m.state_labels else m.n_states,
        "actions": list(m.actions),
        "feasible": {m.labels[x]: [m.actions[u] for u in m.feasible[x]] for x in range(m.n_states)},
        "kernel": [
            {"x": m.labels[x], "u": m.actions[u], "to": m.labels[y], "p": q}
            for (x, u) in m.pairs for y, q in m.kernel[(x, u)]
        ],
    }
    if m.reward is not None:
        doc["reward"] = [{"x": m.labels[x], "u": m.actions[u], "r": r}
                         for (x, u), r in sorted(m.reward.items())]
    return doc


def save_model(m):
    return json.dumps(model_to_dict(m), indent=1)


def _rows_to_dict(m, pi):
    out = {}
    for x in range(m.n_states):
        out[m.labels[x]] = {m.actions[u]: float(pi.table[x, u])
                            for u in m.feasible[x] if pi.table[x, u] != 0.0}
    return out


def _rows_from_dict(m, rows, path):
    t = np.zeros((m.n_states, m.n_actions))
    for key, row in rows.items():
        try:
            x = m.state_id(key)
            for a, q in row.items():
                t[x, m.action_id(a)] = float(q)
        except (ModelError, AttributeError, TypeError, ValueError) as e:
            raise _path_error(f"{path}[{key!r}]", str(e)) from None
    return StationaryPolicy(t)


def policy_to_dict(m, pi):
    if isinstance(pi, TwoPhasePolicy):
        return {"mode": "two-phase",
                "avoid": [m.labels[x] for x in sorted(pi.avoid_set)],
                "rows": [_rows_to_dict(m, pi.mu0), _rows_to_dict(m, pi.mu1)]}
    return {"mode": "stationary", "avoid": [], "rows": _rows_to_dict(m, pi)}


def policy_from_dict(m, doc):
    mode = doc.get("mode")
    if mode == "stationary":
        pi = _rows_from_dict(m, doc["rows"], "$.rows")
    elif mode == "two-phase":
        rows = doc.get("rows")
        if not isinstance(rows, list) or len(rows) != 2:
            raise _path_error("$.rows", "two-phase policies need two row objects")
        avoid = frozenset(m.state_id(s) for s in doc.get("avoid", []))
        pi = TwoPhasePolicy(_rows_from_dict(m, rows[0], "$.rows[0]"),
                            _rows_from_dict(m, rows[1], "$.rows[1]"), avoid)
    else:
        raise _path_error("$.mode", f"unknown policy mode {mode!r}")
    pi.check(m)
    return pi


def parse_states(m, spec: str | Iterable) -> frozenset:
    """Turn ``"1,2"`` or an iterable of labels/ids into a set of state ids."""
    if isinstance(spec, str):
        tokens = [t for t in spec.split(",") if t.strip()]
    else:
        tokens = list(spec)
    return frozenset(m.state_id(t) for t in tokens)


def indicator(n, states: Sequence[int] | Iterable[int]):
    v = np.zeros(n)
    v[list(states)] = 1.0
    return v
