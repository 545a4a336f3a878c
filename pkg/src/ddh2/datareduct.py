"""
Geometry-only subset selection ("representor sets").

All methods take tree-order point indices plus a coordinate array and return
a subset of those indices, never new points. Nearest-point searches break
ties towards the lowest input position so results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, InvalidInputError

__all__ = [
    "ReductMethod",
    "data_reduct",
    "fps",
    "volume_reduct",
    "surface_reduct",
    "volume_reduct_parts",
    "parse_method",
]

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class ReductMethod:
    """Reduction variant. ``grid_per_dim`` fixes the volume grid (otherwise
    it is derived from the budget); ``gammas``/``per_ellipsoid`` configure
    the surface variant."""

    variant: str = "volume"
    grid_per_dim: int | None = None
    gammas: tuple = (0.3, 0.6, 1.2)
    per_ellipsoid: int | None = None

    def __post_init__(self):
        if self.variant not in ("fps", "volume", "surface"):
            raise ConfigurationError(f"unknown reduction method {self.variant!r}")
        if self.grid_per_dim is not None and self.grid_per_dim < 1:
            raise ConfigurationError("volume grid_per_dim must be >= 1")
        if any(g <= 0 for g in self.gammas):
            raise ConfigurationError("surface gamma values must be positive")

    @classmethod
    def FPS(cls):
        return cls("fps")

    @classmethod
    def Volume(cls, grid_per_dim=None):
        return cls("volume", grid_per_dim=grid_per_dim)

    @classmethod
    def Surface(cls, gammas=(0.3, 0.6, 1.2), per_ellipsoid=None):
        return cls("surface", gammas=tuple(gammas), per_ellipsoid=per_ellipsoid)


def parse_method(name) -> ReductMethod:
    if isinstance(name, ReductMethod):
        return name
    return ReductMethod(str(name).lower())


def _nearest(P, Q):
    """Position in P of the nearest point to each row of Q (lowest on ties)."""
    d2 = cdist(Q, P, "sqeuclidean")
    return np.argmin(d2, axis=1)


def _grid_centers(lo, hi, m):
    frac = (np.arange(m) + 0.5) / m
    axes = [lo[a] + frac * (hi[a] - lo[a]) for a in range(lo.size)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)


def _unique_in_order(pos):
    _, first = np.unique(pos, return_index=True)
    return pos[np.sort(first)]


def fps(idx, coords, k: int) -> np.ndarray:
    """Farthest point sampling seeded at the point nearest the centroid."""
    idx = np.asarray(idx, dtype=np.intp)
    P = coords[idx]
    m = idx.size
    k = min(int(k), m)
    centroid = P.mean(axis=0, keepdims=True)
    seed = int(np.argmin(cdist(centroid, P, "sqeuclidean")[0]))
    chosen = [seed]
    mind = cdist(P[seed:seed + 1], P, "sqeuclidean")[0]
    mind[seed] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        np.minimum(mind, cdist(P[nxt:nxt + 1], P, "sqeuclidean")[0], out=mind)
        # duplicates of chosen points must stay selectable, chosen ones not
        mind[chosen] = -1.0
    return idx[np.array(chosen, dtype=np.intp)]


def _grid_size(k, d):
    m = max(1, int(math.floor(k ** (1.0 / d))))
    while (m + 1) ** d <= k:
        m += 1
    while m > 1 and m ** d > k:
        m -= 1
    return m


def volume_reduct(idx, coords, k: int, grid_per_dim: int | None = None) -> np.ndarray:
    """Nearest input point to each cell center of an m^d grid over the
    bounding box, m the largest integer with m^d <= k."""
    idx = np.asarray(idx, dtype=np.intp)
    P = coords[idx]
    d = P.shape[1]
    m = grid_per_dim if grid_per_dim is not None else _grid_size(k, d)
    Q = _grid_centers(P.min(axis=0), P.max(axis=0), m)
    return idx[_unique_in_order(_nearest(P, Q))]


@njit(cache=True)
def _nearest_in_parts(pc, start, length, sel, lo, hi, m):  # pragma: no cover - compiled
    """For each center of the m^d grid over the union of parts ``sel``, the
    position of the nearest point in the concatenation of those parts, lowest
    position on ties. ``pc`` holds the coordinates of all parts back to back."""
    d = pc.shape[1]
    P = sel.size
    blo = np.full(d, np.inf)
    bhi = np.full(d, -np.inf)
    for p in sel:
        for a in range(d):
            blo[a] = min(blo[a], lo[p, a])
            bhi[a] = max(bhi[a], hi[p, a])
    G = m ** d
    Q = np.empty((d, G))
    for g in range(G):
        rem = g
        for a in range(d - 1, -1, -1):
            frac = (rem % m + 0.5) / m
            rem //= m
            Q[a, g] = blo[a] + frac * (bhi[a] - blo[a])
    # box lower bounds, and an attainable upper bound from each part's
    # first point; the center index runs innermost so the loops vectorise
    dmin = np.zeros((P, G))
    bound = np.full(G, np.inf)
    u = np.empty(G)
    for s_ in range(P):
        p = sel[s_]
        u[:] = 0.0
        for a in range(d):
            lo_a = lo[p, a]
            hi_a = hi[p, a]
            pr = pc[start[p], a]
            for g in range(G):
                x = Q[a, g]
                t = max(max(lo_a - x, x - hi_a), 0.0)
                dmin[s_, g] += t * t
                v = x - pr
                u[g] += v * v
        for g in range(G):
            if u[g] < bound[g]:
                bound[g] = u[g]
    out = np.empty(G, dtype=np.int64)
    q = np.empty(d)
    for g in range(G):
        for a in range(d):
            q[a] = Q[a, g]
        # slack covers rounding in the bounds; extra candidates are harmless
        lim = bound[g] * (1.0 + 1e-9)
        best = np.inf
        arg = -1
        base = 0
        for s_ in range(P):
            p = sel[s_]
            if dmin[s_, g] <= lim:
                for t in range(length[p]):
                    pt = start[p] + t
                    s = 0.0
                    for a in range(d):
                        v = q[a] - pc[pt, a]
                        s += v * v
                    if s < best:
                        best = s
                        arg = base + t
            base += length[p]
        out[g] = arg
    return out


def _part_boxes(parts, coords):
    lo = np.array([coords[part].min(axis=0) for part in parts])
    hi = np.array([coords[part].max(axis=0) for part in parts])
    return lo, hi


def volume_reduct_parts(parts, coords, k: int, grid_per_dim: int | None = None,
                        boxes=None) -> np.ndarray:
    """Same result as ``volume_reduct(np.concatenate(parts), coords, k)``.

    Box distance bounds skip parts that cannot hold the nearest point of a
    grid center, so only a few parts are scanned per center. ``boxes`` may
    supply the exact (lo, hi) bounding boxes of the parts.
    """
    parts = [np.asarray(part, dtype=np.int64) for part in parts if len(part)]
    lo, hi = boxes if boxes is not None else _part_boxes(parts, coords)
    flat = np.concatenate(parts)
    length = np.array([part.size for part in parts], dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(length)[:-1]]).astype(np.int64)
    m = grid_per_dim if grid_per_dim is not None else _grid_size(k, coords.shape[1])
    sel = np.arange(len(parts), dtype=np.int64)
    pos = _nearest_in_parts(coords[flat], start, length, sel, lo, hi, m)
    return flat[_unique_in_order(pos)].astype(np.intp)


def _sphere_points(count, d):
    """Quasi-uniform unit vectors in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])[np.arange(count) % 2]
    if d == 2:
        t = 2.0 * math.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if d == 3:
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = GOLDEN_ANGLE * np.arange(count)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    g = np.random.default_rng(0).standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def surface_reduct(idx, coords, k: int, gammas=(0.3, 0.6, 1.2), per_ellipsoid=None) -> np.ndarray:
    """Nearest input point to reference points on ellipsoids around the
    bounding-box center with semi-axes gamma * box width."""
    idx = np.asarray(idx, dtype=np.intp)
    P = coords[idx]
    d = P.shape[1]
    lo = P.min(axis=0)
    hi = P.max(axis=0)
    center = 0.5 * (lo + hi)
    width = hi - lo
    ng = len(gammas)
    per = per_ellipsoid if per_ellipsoid is not None else k // ng
    if per >= 1:
        counts = [per] * ng
    else:
        counts = [1] * min(k, ng)
    refs = [center + g * width * _sphere_points(c, d) for g, c in zip(gammas, counts)]
    Q = np.concatenate(refs, axis=0)
    return idx[_unique_in_order(_nearest(P, Q))][:k]


def data_reduct(idx, coords, k: int, method: ReductMethod | str = "volume") -> np.ndarray:
    """Select at most ``k`` of the points ``idx`` (indices into ``coords``).

    Returns ``idx`` unchanged when it already fits the budget.
    """
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size == 0:
        raise InvalidInputError("data_reduct needs a non-empty point set")
    if k < 1:
        raise InvalidInputError("budget k must be >= 1")
    if idx.size <= k:
        return idx.copy()
    method = parse_method(method)
    if method.variant == "fps":
        return fps(idx, coords, k)
    if method.variant == "volume":
        m = _grid_size(k, coords.shape[1])
        if method.grid_per_dim is not None:
            m = min(m, method.grid_per_dim)
        return volume_reduct(idx, coords, k, m)
    return surface_reduct(idx, coords, k, method.gammas, method.per_ellipsoid)
