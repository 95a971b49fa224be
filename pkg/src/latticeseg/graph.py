"""Decomposition of the 8-connected image lattice into four directed acyclic graphs.

Each plan walks the lattice from one corner (SE starts top-left and flows
toward the bottom-right, and so on for SW/NW/NE) so that every vertex sees
up to three already-visited neighbors: one row-step, one column-step, one
diagonal-step. The union of the four plans covers the full 8-neighborhood.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from latticeseg.errors import DimensionError

DIRECTIONS = ("SE", "SW", "NW", "NE")

# Predecessor displacements (d_row, d_col) relative to a vertex, in the fixed
# slot order (row-step, col-step, diag-step) used to index recurrent weights.
DIRECTION_OFFSETS = {
    "SE": ((-1, 0), (0, -1), (-1, -1)),
    "SW": ((-1, 0), (0, 1), (-1, 1)),
    "NW": ((1, 0), (0, 1), (1, 1)),
    "NE": ((1, 0), (0, -1), (1, -1)),
}


def start_corner(direction, height, width):
    """Corner vertex a plan's traversal starts from."""
    return {
        "SE": (0, 0),
        "SW": (0, width - 1),
        "NW": (height - 1, width - 1),
        "NE": (height - 1, 0),
    }[direction]


@dataclass
class Wavefront:
    """One anti-diagonal of a plan; all its vertices have predecessors strictly earlier."""

    rows: np.ndarray
    cols: np.ndarray
    # Per offset slot: (positions into rows/cols, predecessor rows, predecessor cols),
    # or None when no vertex of the wavefront has that predecessor.
    incoming: tuple
    # Same layout for successors (vertex - offset).
    outgoing: tuple


@dataclass
class DagPlan:
    """One directed acyclic traversal of an height x width lattice."""

    direction: str
    height: int
    width: int
    order: list  # [(r, c), ...] — a valid topological order
    predecessors: list  # per flat vertex id r * width + c: [((pr, pc), (dr, dc)), ...]
    successors: list  # transpose of predecessors
    wavefronts: list = field(repr=False, default_factory=list)
    # Per offset slot: (dst_rows, dst_cols, src_rows, src_cols) over all edges.
    edges: tuple = field(repr=False, default=())

    @property
    def offsets(self):
        return DIRECTION_OFFSETS[self.direction]

    def vertex_count(self):
        return self.height * self.width


def _build_plan(direction, height, width):
    offsets = DIRECTION_OFFSETS[direction]
    r0, c0 = start_corner(direction, height, width)
    dist = np.abs(np.arange(height)[:, None] - r0) + np.abs(np.arange(width)[None, :] - c0)

    order = []
    wavefronts = []
    preds = [[] for _ in range(height * width)]
    succs = [[] for _ in range(height * width)]
    edge_lists = [([], [], [], []) for _ in offsets]

    for k in range(int(dist.max()) + 1):
        rs, cs = np.nonzero(dist == k)
        order.extend(zip(rs.tolist(), cs.tolist()))
        incoming = []
        outgoing = []
        for slot, (dr, dc) in enumerate(offsets):
            pr, pc = rs + dr, cs + dc
            ok = (pr >= 0) & (pr < height) & (pc >= 0) & (pc < width)
            sel = np.nonzero(ok)[0]
            if sel.size:
                incoming.append((sel, pr[sel], pc[sel]))
                dst_r, dst_c, src_r, src_c = edge_lists[slot]
                dst_r.append(rs[sel])
                dst_c.append(cs[sel])
                src_r.append(pr[sel])
                src_c.append(pc[sel])
                for i in sel:
                    v = rs[i] * width + cs[i]
                    preds[v].append(((int(pr[i]), int(pc[i])), (dr, dc)))
            else:
                incoming.append(None)
            sr, sc = rs - dr, cs - dc
            ok = (sr >= 0) & (sr < height) & (sc >= 0) & (sc < width)
            sel = np.nonzero(ok)[0]
            if sel.size:
                outgoing.append((sel, sr[sel], sc[sel]))
                for i in sel:
                    v = rs[i] * width + cs[i]
                    succs[v].append(((int(sr[i]), int(sc[i])), (dr, dc)))
            else:
                outgoing.append(None)
        wavefronts.append(Wavefront(rs, cs, tuple(incoming), tuple(outgoing)))

    edges = tuple(
        tuple(np.concatenate(part) if part else np.empty(0, dtype=np.intp) for part in lst)
        for lst in edge_lists
    )
    return DagPlan(direction, height, width, order, preds, succs, wavefronts, edges)


@lru_cache(maxsize=64)
def build_dag_plans(height, width):
    """Build the four plans (SE, SW, NW, NE) for an height x width lattice."""
    if height < 1 or width < 1:
        raise DimensionError(f"lattice dims must be positive, got {height}x{width}")
    return tuple(_build_plan(d, height, width) for d in DIRECTIONS)


@dataclass
class ValidationReport:
    ok: bool
    error: str = None

    def __bool__(self):
        return self.ok


def validate_plan(plan):
    """Check every DagPlan invariant; report the first violation or success."""
    h, w = plan.height, plan.width
    n = h * w
    if len(plan.order) != n:
        return ValidationReport(False, f"order has {len(plan.order)} entries, expected {n}")
    position = {}
    for i, (r, c) in enumerate(plan.order):
        if not (0 <= r < h and 0 <= c < w):
            return ValidationReport(False, f"order entry {i} = ({r}, {c}) out of bounds")
        if (r, c) in position:
            return ValidationReport(False, f"vertex ({r}, {c}) appears twice in order")
        position[(r, c)] = i

    allowed = set(plan.offsets)
    corner = start_corner(plan.direction, h, w)
    for r in range(h):
        for c in range(w):
            v = r * w + c
            plist = plan.predecessors[v]
            if len(plist) > 3:
                return ValidationReport(False, f"vertex ({r}, {c}) has {len(plist)} predecessors")
            if (r, c) == corner and plist:
                return ValidationReport(False, f"start corner {corner} has predecessors")
            for (pr, pc), (dr, dc) in plist:
                if (dr, dc) not in allowed:
                    return ValidationReport(
                        False, f"offset ({dr}, {dc}) at ({r}, {c}) not valid for {plan.direction}"
                    )
                if (pr, pc) != (r + dr, c + dc):
                    return ValidationReport(
                        False, f"predecessor ({pr}, {pc}) of ({r}, {c}) mismatches offset ({dr}, {dc})"
                    )
                if (pr, pc) not in position:
                    return ValidationReport(False, f"predecessor ({pr}, {pc}) not in order")
                if position[(pr, pc)] >= position[(r, c)]:
                    return ValidationReport(
                        False, f"predecessor ({pr}, {pc}) does not precede ({r}, {c}) in order"
                    )

    # Successors must be the exact transpose of predecessors.
    expected = [set() for _ in range(n)]
    for r in range(h):
        for c in range(w):
            v = r * w + c
            for (pr, pc), (dr, dc) in plan.predecessors[v]:
                expected[pr * w + pc].add(((r, c), (dr, dc)))
    for v in range(n):
        if set(map(_freeze, plan.successors[v])) != set(map(_freeze, expected[v])):
            r, c = divmod(v, w)
            return ValidationReport(False, f"successors of ({r}, {c}) are not the edge transpose")
    return ValidationReport(True)


def _freeze(entry):
    (rc, off) = entry
    return (tuple(rc), tuple(off))


def undirected_edge_set(plans):
    """Union of plan edges as frozenset pairs; used to check 8-neighborhood coverage."""
    edges = set()
    for plan in plans:
        for v, plist in enumerate(plan.predecessors):
            r, c = divmod(v, plan.width)
            for (pr, pc), _ in plist:
                edges.add(frozenset(((r, c), (pr, pc))))
    return edges
