"""
Adaptive 2^d-tree partitioning of a point set and the block structure it induces.

The tree is stored as flat arrays indexed by node id. Node ids follow level
order of the surviving (non-empty) nodes, root = 0. Points are reordered so
that every node owns a contiguous half-open range ``[begin, end)`` of the
tree-ordered coordinates.

Admissibility of a node pair (i, j) uses box diagonals as diameters::

    diam(box_i) + diam(box_j) <= 2 * tau * |center_i - center_j|

Interaction and nearfield lists are produced by a dual top-down traversal
that only descends into non-admissible pairs. When one member of a
non-admissible pair is a leaf, only the other member is refined, so pairs
can straddle levels in non-uniform trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "PointSet",
    "BoundingBox",
    "TreeNode",
    "PartitionTree",
    "build_tree",
    "is_admissible",
    "compute_interaction_lists",
    "farfield_indices",
    "load_points",
    "save_points",
]

MAX_DEPTH = 60


@dataclass
class PointSet:
    """Points in R^d. ``coords`` is (n, d); ``perm[j]`` is the original index
    of the j-th point in tree order (identity until a tree reorders it)."""

    coords: np.ndarray
    perm: np.ndarray = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[1] == 0:
            raise InvalidInputError("points must be an (n, d) array with d >= 1")
        if coords.shape[0] == 0:
            raise InvalidInputError("point set is empty")
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("point coordinates must be finite")
        self.coords = coords
        if self.perm is None:
            self.perm = np.arange(coords.shape[0])
        else:
            self.perm = np.asarray(self.perm, dtype=np.intp)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def original_order(self) -> np.ndarray:
        """Coordinates in input order."""
        out = np.empty_like(self.coords)
        out[self.perm] = self.coords
        return out


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


@dataclass(frozen=True)
class TreeNode:
    id: int
    level: int
    box: BoundingBox
    children: tuple
    range: tuple
    interaction: tuple = ()
    nearfield: tuple = ()

    @property
    def is_leaf(self) -> bool:
        return len(self.children) == 0


@dataclass
class PartitionTree:
    """Flat-array partition tree.

    ``child_ptr``/``child_idx`` store children in CSR form, likewise
    ``inter_ptr``/``inter_idx`` for interaction lists and
    ``near_ptr``/``near_idx`` for leaf nearfield lists (empty rows for
    non-leaves). The list arrays are ``None`` until
    :func:`compute_interaction_lists` has run.
    """

    points: PointSet
    q: int
    tau: float
    level: np.ndarray
    parent: np.ndarray
    begin: np.ndarray
    end: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    inter_ptr: np.ndarray = None
    inter_idx: np.ndarray = None
    near_ptr: np.ndarray = None
    near_idx: np.ndarray = None
    csp: int = 0
    _levels: list = field(default=None, repr=False)

    root = 0

    @property
    def n_nodes(self) -> int:
        return self.level.shape[0]

    @property
    def n_levels(self) -> int:
        return int(self.level.max()) + 1

    @property
    def dim(self) -> int:
        return self.points.dim

    @property
    def coords(self) -> np.ndarray:
        return self.points.coords

    @property
    def has_lists(self) -> bool:
        return self.inter_ptr is not None

    def children(self, i: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[i]:self.child_ptr[i + 1]]

    def is_leaf(self, i: int) -> bool:
        return self.child_ptr[i] == self.child_ptr[i + 1]

    @property
    def leaf_mask(self) -> np.ndarray:
        return self.child_ptr[1:] == self.child_ptr[:-1]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.leaf_mask)

    def interaction(self, i: int) -> np.ndarray:
        return self.inter_idx[self.inter_ptr[i]:self.inter_ptr[i + 1]]

    def nearfield(self, i: int) -> np.ndarray:
        return self.near_idx[self.near_ptr[i]:self.near_ptr[i + 1]]

    def indices(self, i: int) -> np.ndarray:
        """Tree-order point indices owned by node i."""
        return np.arange(self.begin[i], self.end[i])

    def size(self, i: int) -> int:
        return int(self.end[i] - self.begin[i])

    def levels(self) -> list:
        """Node ids grouped by level, root level first."""
        if self._levels is None:
            bounds = np.searchsorted(self.level, np.arange(self.n_levels + 1))
            self._levels = [np.arange(bounds[l], bounds[l + 1])
                            for l in range(self.n_levels)]
        return self._levels

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diameters(self) -> np.ndarray:
        return np.linalg.norm(self.hi - self.lo, axis=1)

    def box(self, i: int) -> BoundingBox:
        return BoundingBox(self.lo[i].copy(), self.hi[i].copy())

    def node(self, i: int) -> TreeNode:
        inter = tuple(int(j) for j in self.interaction(i)) if self.has_lists else ()
        near = tuple(int(j) for j in self.nearfield(i)) if self.has_lists else ()
        return TreeNode(
            id=int(i),
            level=int(self.level[i]),
            box=self.box(i),
            children=tuple(int(c) for c in self.children(i)),
            range=(int(self.begin[i]), int(self.end[i])),
            interaction=inter,
            nearfield=near,
        )

    @property
    def nodes(self) -> list:
        return [self.node(i) for i in range(self.n_nodes)]

    def ancestors(self, i: int) -> list:
        """Ancestors-or-self of node i, from i up to the root."""
        out = [int(i)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out


def _cube_box(coords):
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    return center - half, center + half


def build_tree(points, q: int = 128, tau: float = 0.5, lists: bool = True) -> PartitionTree:
    """Partition ``points`` into a 2^d-tree with at most ``q`` points per leaf.

    ``points`` may be a :class:`PointSet` or an (n, d) array. The returned
    tree owns a new, reordered PointSet. Interaction/nearfield lists are
    computed unless ``lists`` is False.
    """
    if not isinstance(points, PointSet):
        points = PointSet(points)
    if q < 1:
        raise InvalidInputError("leaf capacity q must be >= 1")
    if not (0.0 < tau <= 0.7):
        raise InvalidInputError("separation ratio tau must lie in (0, 0.7]")

    coords = points.coords.copy()
    perm = points.perm.copy()
    n, d = coords.shape
    nchild = 1 << d
    weights = 1 << np.arange(d)

    root_lo, root_hi = _cube_box(coords)
    level = [0]
    parent = [-1]
    begin = [0]
    end = [n]
    lo = [root_lo]
    hi = [root_hi]
    children = [[]]

    frontier = [0]
    depth = 0
    while frontier and depth < MAX_DEPTH:
        nxt = []
        for i in frontier:
            b, e = begin[i], end[i]
            if e - b <= q:
                continue
            pts = coords[b:e]
            if np.all(pts == pts[0]):
                continue
            c = 0.5 * (lo[i] + hi[i])
            codes = (pts >= c) @ weights
            order = np.argsort(codes, kind="stable")
            coords[b:e] = pts[order]
            perm[b:e] = perm[b:e][order]
            counts = np.bincount(codes, minlength=nchild)
            offset = b
            for code in range(nchild):
                cnt = counts[code]
                if cnt == 0:
                    continue
                bits = (code >> np.arange(d)) & 1
                clo = np.where(bits, c, lo[i])
                chi = np.where(bits, hi[i], c)
                cid = len(level)
                level.append(depth + 1)
                parent.append(i)
                begin.append(offset)
                end.append(offset + cnt)
                lo.append(clo)
                hi.append(chi)
                children.append([])
                children[i].append(cid)
                nxt.append(cid)
                offset += cnt
        frontier = nxt
        depth += 1

    counts = np.array([len(c) for c in children], dtype=np.intp)
    child_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
    child_idx = np.array([c for cs in children for c in cs], dtype=np.intp)

    tree = PartitionTree(
        points=PointSet(coords, perm),
        q=int(q),
        tau=float(tau),
        level=np.array(level, dtype=np.intp),
        parent=np.array(parent, dtype=np.intp),
        begin=np.array(begin, dtype=np.intp),
        end=np.array(end, dtype=np.intp),
        lo=np.array(lo, dtype=float).reshape(-1, d),
        hi=np.array(hi, dtype=float).reshape(-1, d),
        child_ptr=child_ptr,
        child_idx=child_idx,
    )
    if lists:
        compute_interaction_lists(tree)
    return tree


def _admissible(tree, a, b):
    centers = tree.centers
    diam = tree.diameters
    dist = np.linalg.norm(centers[a] - centers[b], axis=-1)
    return diam[a] + diam[b] <= 2.0 * tree.tau * dist


def is_admissible(i: int, j: int, tree: PartitionTree) -> bool:
    """Separation test between the boxes of nodes i and j."""
    return bool(_admissible(tree, np.intp(i), np.intp(j)))


def _to_csr(n, rows, cols):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(np.bincount(rows, minlength=n), out=ptr[1:])
    return ptr, cols.astype(np.intp)


def _expand(tree, a, b, split_a, split_b):
    """Child pairs of (a, b), refining a and/or b as flagged."""
    ptr = tree.child_ptr
    na = np.where(split_a, ptr[a + 1] - ptr[a], 1)
    nb = np.where(split_b, ptr[b + 1] - ptr[b], 1)
    per = na * nb
    total = int(per.sum())
    if total == 0:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    pair = np.repeat(np.arange(a.size), per)
    local = np.arange(total) - np.repeat(np.cumsum(per) - per, per)
    nbp = nb[pair]
    ia = local // nbp
    ib = local % nbp
    sa, sb = split_a[pair], split_b[pair]
    ca = a[pair].copy()
    cb = b[pair].copy()
    ca[sa] = tree.child_idx[ptr[ca[sa]] + ia[sa]]
    cb[sb] = tree.child_idx[ptr[cb[sb]] + ib[sb]]
    return ca, cb


def compute_interaction_lists(tree: PartitionTree) -> PartitionTree:
    """Fill interaction lists, leaf nearfield lists and ``csp`` in place."""
    leaf = tree.leaf_mask
    a = np.array([tree.root], dtype=np.intp)
    b = np.array([tree.root], dtype=np.intp)
    inter_rows, inter_cols = [], []
    near_rows, near_cols = [], []

    while a.size:
        same = a == b
        adm = ~same & _admissible(tree, a, b)
        inter_rows += [a[adm], b[adm]]
        inter_cols += [b[adm], a[adm]]

        keep = ~adm
        a, b, same = a[keep], b[keep], same[keep]
        la, lb = leaf[a], leaf[b]
        both = la & lb
        near_rows += [a[both], b[both & ~same]]
        near_cols += [b[both], a[both & ~same]]

        go = ~both
        a, b, same, la, lb = a[go], b[go], same[go], la[go], lb[go]
        # self pairs: unordered child pairs (c1 <= c2)
        sa, sb = _expand(tree, a[same], b[same], np.ones(same.sum(), bool), np.ones(same.sum(), bool))
        upper = sa <= sb
        sa, sb = sa[upper], sb[upper]
        # distinct pairs: refine every non-leaf member
        da, db = _expand(tree, a[~same], b[~same], ~la[~same], ~lb[~same])
        na_ = np.concatenate([sa, np.minimum(da, db)])
        nb_ = np.concatenate([sb, np.maximum(da, db)])
        a, b = na_, nb_

    n = tree.n_nodes
    cat = lambda xs: np.concatenate(xs).astype(np.intp) if xs else np.empty(0, np.intp)
    tree.inter_ptr, tree.inter_idx = _to_csr(n, cat(inter_rows), cat(inter_cols))
    tree.near_ptr, tree.near_idx = _to_csr(n, cat(near_rows), cat(near_cols))
    lens = np.diff(tree.inter_ptr)
    tree.csp = int(lens.max()) if lens.size else 0
    return tree


def farfield_indices(i: int, tree: PartitionTree) -> np.ndarray:
    """Tree-order indices of every point compressed against node i at or
    above its level. Intended for validation at small n."""
    parts = [tree.indices(j) for a in tree.ancestors(i) for j in tree.interaction(a)]
    if not parts:
        return np.empty(0, dtype=np.intp)
    return np.sort(np.concatenate(parts))


def load_points(path) -> PointSet:
    """Read whitespace-separated coordinates, one point per line."""
    try:
        data = np.loadtxt(Path(path), dtype=float, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read points from {path}: {exc}") from exc
    return PointSet(data)


def save_points(path, points) -> None:
    coords = points.original_order() if isinstance(points, PointSet) else np.asarray(points, float)
    np.savetxt(Path(path), np.atleast_2d(coords), fmt="%.17g")
