"""Wind-grid navigation models.

Cell ``(r, c)`` (row 0 at the top) is state ``r * cols + c``. The three
controls move up-left, up and up-right. With probability ``1 - wind`` the
nominal move happens; with probability ``wind`` the outcome is pushed one
more cell south-east. Off-grid outcomes are clamped onto the nearest cell.
Target cells, and the top row when ``absorbing_top`` is set, loop to
themselves under every control.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelError, make_model

CONTROLS = (("up-left", -1), ("up", 0), ("up-right", 1))


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    wind_strength: float = 0.3
    target_cells: frozenset = field(default_factory=frozenset)
    obstacle_cells: frozenset = field(default_factory=frozenset)
    absorbing_top: bool = True

    def __post_init__(self):
        object.__setattr__(self, "target_cells", frozenset(map(tuple, self.target_cells)))
        object.__setattr__(self, "obstacle_cells", frozenset(map(tuple, self.obstacle_cells)))
        if self.rows <= 0 or self.cols <= 0:
            raise ModelError("grid needs positive rows and cols")
        if not 0.0 <= self.wind_strength <= 1.0:
            raise ModelError("wind_strength must lie in [0, 1]")
        for r, c in self.target_cells | self.obstacle_cells:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise ModelError(f"cell ({r},{c}) outside the {self.rows}x{self.cols} grid")
        if self.target_cells & self.obstacle_cells:
            raise ModelError("target and obstacle cells overlap")


@dataclass(frozen=True)
class CellMap:
    rows: int
    cols: int

    def state(self, r, c):
        return r * self.cols + c

    def cell(self, x):
        return divmod(x, self.cols)

    def states(self, cells):
        return frozenset(self.state(r, c) for r, c in cells)

    def sidecar(self, m):
        return {"rows": self.rows, "cols": self.cols,
                "cell": {m.labels[x]: list(self.cell(x)) for x in range(m.n_states)}}


def cell_label(r, c):
    return f"r{r}c{c}"


def build_grid(spec):
    R, C, w = spec.rows, spec.cols, spec.wind_strength
    cmap = CellMap(R, C)

    def clamp(r, c):
        return cmap.state(min(max(r, 0), R - 1), min(max(c, 0), C - 1))

    kernel = {}
    for r in range(R):
        for c in range(C):
            x = cmap.state(r, c)
            for u, (_, dc) in enumerate(CONTROLS):
                if (spec.absorbing_top and r == 0) or (r, c) in spec.target_cells:
                    kernel[(x, u)] = {x: 1.0}
                    continue
                row = {}
                for y, q in ((clamp(r - 1, c + dc), 1.0 - w), (clamp(r, c + dc + 1), w)):
                    if q > 0:
                        row[y] = row.get(y, 0.0) + q
                kernel[(x, u)] = row
    labels = [cell_label(r, c) for r in range(R) for c in range(C)]
    m = make_model(R * C, [name for name, _ in CONTROLS], kernel, state_labels=labels)
    return m, cmap


def parse_rect(text):
    """``"r0:r1,c0:c1"`` (half-open ranges) -> set of cells."""
    try:
        rs, cs = text.split(",")
        r0, r1 = (int(v) for v in rs.split(":"))
        c0, c1 = (int(v) for v in cs.split(":"))
    except ValueError:
        raise ModelError(f"bad rectangle {text!r}; expected r0:r1,c0:c1") from None
    return frozenset((r, c) for r in range(r0, r1) for c in range(c0, c1))


def union_graph_reaches(m, target):
    """States with a directed path into ``target`` using any action."""
    n = m.n_states
    P = m.transitions.tocoo()
    src = m.pair_state[P.row]
    preds = [[] for _ in range(n)]
    for s, d in zip(src.tolist(), P.col.tolist()):
        preds[d].append(s)
    seen = np.zeros(n, dtype=bool)
    stack = list(target)
    seen[stack] = True
    while stack:
        y = stack.pop()
        for s in preds[y]:
            if not seen[s]:
                seen[s] = True
                stack.append(s)
    return frozenset(np.flatnonzero(seen).tolist())


def _scattered_obstacles(rows, cols, count, keep_out, seed):
    rng = np.random.default_rng(seed)
    cells = set()
    while len(cells) < count:
        r = int(rng.integers(2, rows - 1))
        c = int(rng.integers(0, cols))
        if (r, c) not in keep_out:
            cells.add((r, c))
    return frozenset(cells)


def _walls(*segments):
    """Horizontal obstacle segments ``(row, c0, c1)`` with half-open columns."""
    return frozenset((r, c) for r, c0, c1 in segments for c in range(c0, c1))


def desk_experiments(wind=0.3):
    """Scaled-down versions of the three grid experiments.

    The constrained instance uses walls rather than scattered cells: a walker
    can always sidestep an isolated obstacle, so only walls produce start
    states whose least avoid probability lies strictly inside (0, 1).
    """
    domain = GridSpec(30, 30, wind, target_cells=parse_rect("13:17,13:17"))
    top_a = frozenset((0, c) for c in range(6, 14))
    reach = GridSpec(40, 20, wind, target_cells=top_a,
                     obstacle_cells=_scattered_obstacles(40, 20, 60, top_a, 11))
    top_c = frozenset((0, c) for c in range(3, 7))
    constrained = GridSpec(40, 10, wind, target_cells=top_c,
                           obstacle_cells=_walls((12, 2, 9), (24, 0, 7), (33, 4, 10)))
    return {"domain": domain, "reach-avoid": reach, "constrained": constrained}
