"""
Hierarchical data reduction.

Bottom-up, each node i gets a representor set X*_i of at most r1 of its own
points, reduced from its leaf points or from the union of its children's
X*. Top-down, each node with a non-empty farfield gets Y*_i of at most r2
points, reduced from Y*_parent together with X*_j for every j in its
interaction list. No kernel is ever evaluated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datareduct import (
    ReductMethod,
    _grid_size,
    _nearest_in_parts,
    _unique_in_order,
    data_reduct,
    parse_method,
)
from .errors import InvalidInputError, PreconditionError

__all__ = [
    "ReductParams",
    "RepresentorSets",
    "HidrStats",
    "hidr_run",
    "check_o1_bounds",
    "save_representors",
    "load_representors",
]


@dataclass(frozen=True)
class ReductParams:
    r1: int
    r2: int
    method: ReductMethod = field(default_factory=ReductMethod)

    def __post_init__(self):
        if self.r1 < 1 or self.r2 < 1:
            raise InvalidInputError("r1 and r2 must be >= 1")
        object.__setattr__(self, "method", parse_method(self.method))


@dataclass
class HidrStats:
    """Sizes of the transient sets seen during one run. ``max_S`` covers
    parents only; leaves reduce their own (at most q) points."""

    max_S: int = 0
    max_leaf: int = 0
    max_T: int = 0
    total_S: int = 0
    total_T: int = 0

    @property
    def total_input(self) -> int:
        return self.total_S + self.total_T


@dataclass
class RepresentorSets:
    """Per-node X* and Y* as tree-order point indices."""

    xstar: list
    ystar: list
    params: ReductParams
    stats: HidrStats = field(default_factory=HidrStats)

    @property
    def n_nodes(self) -> int:
        return len(self.xstar)

    def mean_ystar(self) -> float:
        sizes = [y.size for y in self.ystar if y.size]
        return float(np.mean(sizes)) if sizes else 0.0

    def __eq__(self, other):
        if not isinstance(other, RepresentorSets) or self.n_nodes != other.n_nodes:
            return False
        return self.params == other.params and all(
            np.array_equal(a, b) for a, b in zip(self.xstar + self.ystar, other.xstar + other.ystar)
        )


_EMPTY = np.empty(0, dtype=np.intp)


def hidr_run(tree, params: ReductParams) -> RepresentorSets:
    """Compute X* (bottom-up) and Y* (top-down) for every node of ``tree``."""
    if not tree.has_lists:
        raise PreconditionError("hidr_run needs a tree with interaction lists")
    if params.method.variant == "volume":
        return _hidr_volume(tree, params)
    coords = tree.coords
    r1, r2, method = params.r1, params.r2, params.method
    n_nodes = tree.n_nodes
    xstar = [_EMPTY] * n_nodes
    ystar = [_EMPTY] * n_nodes
    stats = HidrStats()
    levels = tree.levels()
    cptr, cidx = tree.child_ptr, tree.child_idx

    for nodes in reversed(levels):
        for i in nodes:
            c0, c1 = cptr[i], cptr[i + 1]
            if c0 == c1:
                S = np.arange(tree.begin[i], tree.end[i])
                stats.max_leaf = max(stats.max_leaf, S.size)
            else:
                S = np.concatenate([xstar[c] for c in cidx[c0:c1]])
                stats.max_S = max(stats.max_S, S.size)
            stats.total_S += S.size
            xstar[i] = data_reduct(S, coords, r1, method)

    iptr, iidx = tree.inter_ptr, tree.inter_idx
    parent = tree.parent
    for nodes in levels:
        for i in nodes:
            parts = [xstar[j] for j in iidx[iptr[i]:iptr[i + 1]]]
            p = parent[i]
            if p >= 0 and ystar[p].size:
                parts.insert(0, ystar[p])
            if not parts:
                continue
            T = np.concatenate(parts)
            stats.max_T = max(stats.max_T, T.size)
            stats.total_T += T.size
            ystar[i] = data_reduct(T, coords, r2, method)

    return RepresentorSets(xstar, ystar, params, stats)


class _Pool:
    """Point-index sets stored in one flat array with exact bounding boxes.

    Part ``i`` is X*_i, part ``N + i`` is Y*_i and part ``2N + i`` is the
    point range of node i. S and T sets are never materialised: they are
    selections of parts, searched by the compiled nearest-point routine.
    """

    def __init__(self, tree, r1, r2):
        N, n = tree.n_nodes, tree.points.n
        self.N = N
        self.coords = np.ascontiguousarray(tree.coords)
        self.flat = np.empty(n + N * (r1 + r2), dtype=np.int64)
        self.flat[:n] = np.arange(n)
        self.pc = np.empty((self.flat.size, tree.dim))
        self.pc[:n] = self.coords
        self.start = np.concatenate([
            n + r1 * np.arange(N), n + N * r1 + r2 * np.arange(N), tree.begin,
        ]).astype(np.int64)
        self.length = np.concatenate([
            np.zeros(2 * N, dtype=np.int64), (tree.end - tree.begin).astype(np.int64),
        ])
        d = tree.dim
        self.lo = np.empty((3 * N, d))
        self.hi = np.empty((3 * N, d))
        # leaf ranges tile [0, n); reduceat needs them in point order
        leaves = tree.leaves[np.argsort(tree.begin[tree.leaves])]
        b = tree.begin[leaves]
        self.lo[2 * N + leaves] = np.minimum.reduceat(self.coords, b, axis=0)
        self.hi[2 * N + leaves] = np.maximum.reduceat(self.coords, b, axis=0)

    def get(self, part):
        s = self.start[part]
        return self.flat[s:s + self.length[part]].astype(np.intp)

    def reduce(self, sel, k, m):
        """Indices of the volume reduction of the union of parts ``sel``."""
        size = int(self.length[sel].sum())
        if size <= k:
            return np.concatenate([self.get(s) for s in sel]), size
        pos = _unique_in_order(_nearest_in_parts(
            self.pc, self.start, self.length, sel, self.lo, self.hi, m))
        ends = np.cumsum(self.length[sel])
        owner = np.searchsorted(ends, pos, side="right")
        sub = pos - (ends[owner] - self.length[sel[owner]])
        return self.flat[self.start[sel[owner]] + sub].astype(np.intp), size

    def put(self, part, idx):
        s = self.start[part]
        self.flat[s:s + idx.size] = idx
        self.length[part] = idx.size
        P = self.coords[idx]
        self.pc[s:s + idx.size] = P
        self.lo[part], self.hi[part] = P.min(axis=0), P.max(axis=0)


def _grid(k, d, method):
    m = _grid_size(k, d)
    return min(m, method.grid_per_dim) if method.grid_per_dim is not None else m


def _hidr_volume(tree, params):
    """Volume-method HiDR; the result equals the generic path exactly."""
    r1, r2, method = params.r1, params.r2, params.method
    N = tree.n_nodes
    pool = _Pool(tree, r1, r2)
    m1, m2 = _grid(r1, tree.dim, method), _grid(r2, tree.dim, method)
    stats = HidrStats()
    xstar = [_EMPTY] * N
    ystar = [_EMPTY] * N
    levels = tree.levels()
    cptr, cidx = tree.child_ptr, tree.child_idx

    for nodes in reversed(levels):
        for i in nodes:
            c0, c1 = cptr[i], cptr[i + 1]
            if c0 == c1:
                sel = np.array([2 * N + i], dtype=np.int64)
            else:
                sel = cidx[c0:c1].astype(np.int64)
            X, size = pool.reduce(sel, r1, m1)
            if c0 == c1:
                stats.max_leaf = max(stats.max_leaf, size)
            else:
                stats.max_S = max(stats.max_S, size)
            stats.total_S += size
            xstar[i] = X
            pool.put(i, X)

    iptr, iidx, parent = tree.inter_ptr, tree.inter_idx, tree.parent
    for nodes in levels:
        for i in nodes:
            js = iidx[iptr[i]:iptr[i + 1]]
            p = parent[i]
            if p >= 0 and ystar[p].size:
                sel = np.concatenate([[N + p], js]).astype(np.int64)
            elif js.size:
                sel = js.astype(np.int64)
            else:
                continue
            Y, size = pool.reduce(sel, r2, m2)
            stats.max_T = max(stats.max_T, size)
            stats.total_T += size
            ystar[i] = Y
            pool.put(N + i, Y)

    return RepresentorSets(xstar, ystar, params, stats)


@dataclass
class BoundsReport:
    max_S: int
    max_T: int
    bound_S: int
    bound_T: int
    csp: int
    max_xstar: int
    max_ystar: int

    @property
    def ok(self) -> bool:
        return self.max_S <= self.bound_S and self.max_T <= self.bound_T


def check_o1_bounds(tree, reps: RepresentorSets, strict: bool = True) -> BoundsReport:
    """Compare the observed transient set sizes with 2^d r1 and csp r1 + r2."""
    r1, r2 = reps.params.r1, reps.params.r2
    report = BoundsReport(
        max_S=reps.stats.max_S,
        max_T=reps.stats.max_T,
        bound_S=(1 << tree.dim) * r1,
        bound_T=tree.csp * r1 + r2,
        csp=tree.csp,
        max_xstar=max(x.size for x in reps.xstar),
        max_ystar=max(y.size for y in reps.ystar),
    )
    if strict:
        assert report.max_S <= report.bound_S, report
        assert report.max_T <= report.bound_T, report
        assert report.max_xstar <= r1 and report.max_ystar <= r2, report
    return report


def save_representors(path, reps: RepresentorSets) -> None:
    """Write representor sets as text: a header line, then one line per
    non-empty list as ``<node> <X|Y> <idx> <idx> ...``."""
    m = reps.params.method
    lines = [
        f"# representors nodes={reps.n_nodes} r1={reps.params.r1} r2={reps.params.r2} "
        f"method={m.variant}"
    ]
    for kind, sets in (("X", reps.xstar), ("Y", reps.ystar)):
        for i, s in enumerate(sets):
            if s.size:
                lines.append(f"{i} {kind} " + " ".join(map(str, s.tolist())))
    Path(path).write_text("\n".join(lines) + "\n")


def load_representors(path) -> RepresentorSets:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# representors"):
        raise InvalidInputError(f"{path} is not a representor file")
    header = dict(item.split("=") for item in text[0].split()[2:])
    n_nodes = int(header["nodes"])
    params = ReductParams(int(header["r1"]), int(header["r2"]), ReductMethod(header["method"]))
    xstar = [_EMPTY] * n_nodes
    ystar = [_EMPTY] * n_nodes
    for line in text[1:]:
        if not line.strip():
            continue
        fields = line.split()
        i, kind = int(fields[0]), fields[1]
        vals = np.array([int(v) for v in fields[2:]], dtype=np.intp)
        if kind == "X":
            xstar[i] = vals
        elif kind == "Y":
            ystar[i] = vals
        else:
            raise InvalidInputError(f"bad list kind {kind!r} in {path}")
    return RepresentorSets(xstar, ystar, params)
