"""Sparse LP container, solution record and the plain-text dump format."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

RELATIONS = ("<=", "=", ">=")


class Status(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"
    NUMERICAL = "NUMERICAL"


class LpFormatError(ValueError):
    pass


@dataclass
class LinearProgram:
    """Rows are ``sum_j a_ij x_j  (<=|=|>=)  b_i``; columns have lb 0 or -inf.

    Columns and rows are appended through :meth:`add_col` / :meth:`add_row`
    and carry opaque tags for mapping results back to model objects.
    """

    sense: str = "min"
    lb: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    col_tags: list = field(default_factory=list)
    rel: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    row_tags: list = field(default_factory=list)
    _ri: list = field(default_factory=list, repr=False)
    _ci: list = field(default_factory=list, repr=False)
    _v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")

    @property
    def n_cols(self):
        return len(self.lb)

    @property
    def n_rows(self):
        return len(self.rhs)

    def add_col(self, obj=0.0, free=False, tag=None):
        self.lb.append(-math.inf if free else 0.0)
        self.obj.append(float(obj))
        self.col_tags.append(tag)
        return len(self.lb) - 1

    def add_row(self, coefs, rel, rhs, tag=None):
        """``coefs`` is an iterable of ``(col, value)``; duplicates are rejected."""
        if rel not in RELATIONS:
            raise ValueError(f"unknown relation {rel!r}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ValueError("rhs must be finite")
        i = len(self.rhs)
        seen = set()
        for j, a in coefs:
            if not 0 <= j < self.n_cols:
                raise ValueError(f"row {i}: column {j} out of range")
            if j in seen:
                raise ValueError(f"row {i}: duplicate coefficient for column {j}")
            seen.add(j)
            if a != 0.0:
                self._ri.append(i)
                self._ci.append(j)
                self._v.append(float(a))
        self.rel.append(rel)
        self.rhs.append(rhs)
        self.row_tags.append(tag)
        return i

    def matrix(self):
        """Constraint matrix as CSR (rows x cols)."""
        return sp.csr_matrix((np.array(self._v, dtype=float),
                              (np.array(self._ri, dtype=np.int64), np.array(self._ci, dtype=np.int64))),
                             shape=(self.n_rows, self.n_cols))

    def row_coefs(self, i):
        A = self.matrix()
        lo, hi = A.indptr[i], A.indptr[i + 1]
        return list(zip(A.indices[lo:hi].tolist(), A.data[lo:hi].tolist()))


@dataclass
class LpSolution:
    status: Status
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    iterations: int = 0
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    gap: float = math.nan
    slackness: float = math.nan
    message: str = ""

    @property
    def optimal(self):
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# text dump

def _fmt(v):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def dump_lp(p):
    """Serialize ``p`` so that :func:`parse_lp` reproduces it bit for bit."""
    lines = [f"sense {p.sense}"]
    for j in range(p.n_cols):
        lines.append(f"col {j} {_fmt(p.lb[j])} inf {_fmt(p.obj[j])}")
    A = p.matrix()
    for i in range(p.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = " ".join(f"{j}:{_fmt(a)}" for j, a in zip(A.indices[lo:hi], A.data[lo:hi]))
        lines.append(f"row {p.rel[i]} {_fmt(p.rhs[i])} {terms}".rstrip())
    return "\n".join(lines) + "\n"


def parse_lp(text):
    p = None
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "sense":
                p = LinearProgram(sense=parts[1])
            elif parts[0] == "col":
                if int(parts[1]) != p.n_cols:
                    raise LpFormatError(f"line {ln}: columns must be listed in order")
                lb = float(parts[2])
                if lb not in (0.0, -math.inf) or float(parts[3]) != math.inf:
                    raise LpFormatError(f"line {ln}: unsupported bounds")
                p.add_col(float(parts[4]), free=lb == -math.inf)
            elif parts[0] == "row":
                coefs = [(int(a), float(b)) for a, b in (t.split(":") for t in parts[3:])]
                p.add_row(coefs, parts[1], float(parts[2]))
            else:
                raise LpFormatError(f"line {ln}: unknown record {parts[0]!r}")
        except (IndexError, ValueError, AttributeError) as e:
            if isinstance(e, LpFormatError):
                raise
            raise LpFormatError(f"line {ln}: {e}") from None
    if p is None:
        raise LpFormatError("missing 'sense' line")
    return p
