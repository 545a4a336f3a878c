"""
Interpolation-based H^2 baseline.

Each box gets a tensor grid of Chebyshev points (first kind). The row basis
of a leaf is the Lagrange matrix of its points on its grid; the transfer
matrix of a child is the Lagrange matrix of the child's grid nodes on the
parent's grid; coupling blocks are kernel values between two grids. The
result is an ordinary :class:`~ddh2.h2core.H2Matrix`, so matvec and memory
accounting are shared with the data-driven construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .h2core import BuildConfig, H2Matrix, _maybe_store
from .kernels import Kernel
from .partition import build_tree

__all__ = ["InterpGrid", "chebyshev_grid", "lagrange_matrix", "build_h2_interp"]


@dataclass(frozen=True)
class InterpGrid:
    """Tensor grid: ``axes[a]`` holds the k nodes along dimension a; the
    r = k^d grid points are ordered with the last dimension fastest."""

    axes: tuple

    @property
    def k(self) -> int:
        return len(self.axes[0])

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def size(self) -> int:
        return int(np.prod([len(x) for x in self.axes]))

    @property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)


def chebyshev_grid(lo, hi, k: int) -> InterpGrid:
    """k Chebyshev points of the first kind per dimension, mapped to [lo, hi]."""
    if k < 1:
        raise InvalidInputError("nodes per dimension must be >= 1")
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    ref = np.cos((2.0 * np.arange(k) + 1.0) * np.pi / (2.0 * k))
    return InterpGrid(tuple(0.5 * (lo[a] + hi[a]) + 0.5 * (hi[a] - lo[a]) * ref
                            for a in range(lo.size)))


def _lagrange_1d(x, nodes):
    """(len(x), k) matrix of the 1-D Lagrange polynomials at x."""
    k = nodes.size
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise InvalidInputError("interpolation grid has duplicate nodes")
    out = np.ones((x.size, k))
    for j in range(k):
        for m in range(k):
            if m != j:
                out[:, j] *= (x - nodes[m]) / diff[j, m]
    return out


def lagrange_matrix(X, grid: InterpGrid) -> np.ndarray:
    """U[s, t] = L_t(X[s]) for the tensor Lagrange basis of ``grid``."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != grid.dim:
        raise InvalidInputError("point and grid dimensions differ")
    U = np.ones((X.shape[0], 1))
    for a in range(grid.dim):
        La = _lagrange_1d(X[:, a], np.asarray(grid.axes[a]))
        U = (U[:, :, None] * La[:, None, :]).reshape(X.shape[0], -1)
    return U


def build_h2_interp(points, kernel: Kernel, k: int, config: BuildConfig | None = None) -> H2Matrix:
    """Interpolation H^2 matrix with k Chebyshev nodes per dimension."""
    if k < 2:
        raise InvalidInputError("interpolation needs k >= 2 nodes per dimension")
    config = config or BuildConfig()
    timings = {}
    t0 = time.perf_counter()
    tree = build_tree(points, config.q, config.tau)
    timings["tree"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    n_nodes = tree.n_nodes
    # nodes that are (or descend from) a member of some interaction list
    far = np.zeros(n_nodes, dtype=bool)
    for nodes in tree.levels()[1:]:
        for i in nodes:
            far[i] = tree.interaction(i).size > 0 or far[tree.parent[i]]
    grids = [chebyshev_grid(tree.lo[i], tree.hi[i], k) if far[i] else None
             for i in range(n_nodes)]
    nodes_of = [g.nodes if g is not None else None for g in grids]
    U = [None] * n_nodes
    coords = tree.coords
    for i in np.flatnonzero(far):
        if tree.is_leaf(i):
            U[i] = lagrange_matrix(coords[tree.begin[i]:tree.end[i]], grids[i])
        else:
            U[i] = np.vstack([lagrange_matrix(nodes_of[c], grids[i]) for c in tree.children(i)])
    timings["basis"] = time.perf_counter() - t0

    empty = [np.empty(0, np.intp)] * n_nodes
    r = k ** tree.dim
    h2 = H2Matrix(tree, kernel, config, (r, r), U, U, empty, empty,
                  [None] * n_nodes, [None] * n_nodes, method="interp",
                  timings=timings, row_points=nodes_of, col_points=nodes_of)
    t0 = time.perf_counter()
    _maybe_store(h2)
    timings["blocks"] = time.perf_counter() - t0
    timings["build"] = timings["basis"] + timings["blocks"]
    return h2

