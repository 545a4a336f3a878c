"""
Data-driven H^2 assembly on top of hierarchical data reduction.

Every non-root node i with a non-empty farfield gets an interpolative row
basis from the small block K[Xbar_i, Y*_i], where Xbar_i is the leaf's own
points or the union of its children's skeletons. For a parent, the rows of
its basis that belong to child c are the transfer matrix of c. Admissible
pairs store K[skel_row_i, skel_col_j]; leaf nearfield pairs store the dense
block.

Storage layout: nodes are handled in id order, and children of a node have
consecutive ids, so the skeleton coefficients of all children of a node
occupy one contiguous slice of the skeleton-space vectors used by matvec.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .datareduct import ReductMethod, data_reduct, parse_method
from .errors import AccuracyUnreachableError, H2Error, InvalidInputError
from .hidr import ReductParams, RepresentorSets, hidr_run
from .kernels import Kernel
from .partition import PartitionTree, PointSet, build_tree
from .skeleton import interp_decomp

__all__ = [
    "BuildConfig",
    "H2Matrix",
    "MemoryReport",
    "determine_ranks",
    "build_h2",
    "build_h2_from_representors",
    "matvec",
    "dense_matvec",
    "rel_matvec_error",
    "memory_report",
    "representor_error",
    "save_h2",
    "load_h2",
    "validate_h2",
]

# SRRQR truncation relative to epsilon, and the calibration target
TOL_RATIO = 1e-4
CALIBRATION_RATIO = 1e-2
CALIBRATION_POINTS = 256
# coupling + nearfield entries kept in memory by store="auto" (1 GiB)
STORE_BUDGET = 1 << 27


@dataclass(frozen=True)
class BuildConfig:
    """Parameters of a data-driven build.

    ``tol`` is the relative SRRQR truncation; by default ``TOL_RATIO *
    epsilon``. ``ranks`` skips calibration. With ``store=False`` coupling
    and nearfield blocks are re-evaluated from the kernel in every matvec
    instead of being kept in memory; ``"auto"`` stores them when they fit in
    ``STORE_BUDGET`` entries.
    """

    epsilon: float = 1e-6
    tau: float = 0.5
    q: int = 128
    method: ReductMethod = field(default_factory=ReductMethod)
    f: float = 2.0
    ranks: tuple | None = None
    tol: float | None = None
    store: bool | str = "auto"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidInputError("epsilon must lie in (0, 1)")
        if self.q < 1:
            raise InvalidInputError("leaf capacity q must be >= 1")
        object.__setattr__(self, "method", parse_method(self.method))
        if self.store not in (True, False, "auto"):
            raise InvalidInputError("store must be True, False or 'auto'")

    @property
    def srrqr_tol(self) -> float:
        return self.tol if self.tol is not None else TOL_RATIO * self.epsilon


def _ranges(starts, lens):
    """Concatenation of arange(s, s + l) over all pairs, and the offset of
    each range in the result."""
    lens = np.asarray(lens, dtype=np.intp)
    off = np.concatenate([[0], np.cumsum(lens)]).astype(np.intp)
    flat = np.arange(off[-1], dtype=np.intp) + np.repeat(np.asarray(starts, np.intp) - off[:-1], lens)
    return flat, off


def _segments(ptr, flat, off):
    """Per-node views of ``flat`` for CSR lists with row pointer ``ptr``."""
    bounds = off[ptr]
    return [flat[bounds[i]:bounds[i + 1]] for i in range(ptr.size - 1)]


@dataclass
class H2Matrix:
    """H^2 representation in tree order.

    ``U[i]``/``V[i]`` hold, for a leaf, its basis (|X_i| x k_i) and, for a
    parent, the stacked transfer matrices of its children. ``coupling[i]``
    is K[skel_row_i, concat skel_col_j over j in interaction(i)] and
    ``nearfield[i]`` the dense K[X_i, concat X_j over nearfield(i)].
    """

    tree: PartitionTree
    kernel: Kernel
    config: BuildConfig
    ranks: tuple
    U: list
    V: list
    skel_row: list
    skel_col: list
    coupling: list
    nearfield: list
    method: str = "dd"
    reps: RepresentorSets | None = None
    timings: dict = field(default_factory=dict)
    # interpolation builds keep Chebyshev grids instead of point skeletons
    row_points: list | None = None
    col_points: list | None = None

    def __post_init__(self):
        self._layout()

    @property
    def n(self) -> int:
        return self.tree.points.n

    @property
    def shape(self) -> tuple:
        return (self.n, self.n)

    @property
    def has_basis(self) -> np.ndarray:
        return np.array([u is not None for u in self.U])

    @property
    def stored(self) -> bool:
        return any(b is not None for b in self.coupling + self.nearfield)

    def _layout(self):
        kr = np.array([0 if u is None else u.shape[1] for u in self.U], dtype=np.intp)
        kc = np.array([0 if v is None else v.shape[1] for v in self.V], dtype=np.intp)
        self.kr, self.kc = kr, kc
        self.ro = np.concatenate([[0], np.cumsum(kr)]).astype(np.intp)
        self.co = np.concatenate([[0], np.cumsum(kc)]).astype(np.intp)
        t = self.tree
        self.inter_gather = _segments(t.inter_ptr, *_ranges(self.co[t.inter_idx], kc[t.inter_idx]))
        near_gather = _segments(t.near_ptr, *_ranges(t.begin[t.near_idx], t.end[t.near_idx] - t.begin[t.near_idx]))
        self.near_gather = near_gather

    # per-node accessors
    def leafU(self, i):
        return self.U[i] if self.tree.is_leaf(i) else None

    def leafV(self, i):
        return self.V[i] if self.tree.is_leaf(i) else None

    def _child_rows(self, c, stack, k):
        p = self.tree.parent[c]
        if p < 0 or stack[p] is None:
            return None
        first = self.tree.children(p)[0]
        off = (self.ro if stack is self.U else self.co)
        a = off[c] - off[first]
        return stack[p][a:a + k[c]]

    def transferR(self, c):
        return self._child_rows(c, self.U, self.kr)

    def transferW(self, c):
        return self._child_rows(c, self.V, self.kc)

    def _row_coords(self, i):
        if self.row_points is not None:
            return self.row_points[i]
        return self.tree.coords[self.skel_row[i]]

    def _col_coords(self, j):
        if self.col_points is not None:
            return self.col_points[j]
        return self.tree.coords[self.skel_col[j]]

    def coupling_block(self, i, j):
        js = list(self.tree.interaction(i))
        if j not in js:
            raise KeyError((i, j))
        B = self.coupling[i] if self.coupling[i] is not None else self._coupling_matrix(i)
        a = sum(self.kc[x] for x in js[:js.index(j)])
        return B[:, a:a + self.kc[j]]

    def nearfield_block(self, i, j):
        t = self.tree
        js = list(t.nearfield(i))
        if j not in js:
            raise KeyError((i, j))
        N = self.nearfield[i] if self.nearfield[i] is not None else self._near_matrix(i)
        a = sum(t.size(x) for x in js[:js.index(j)])
        return N[:, a:a + t.size(j)]

    def _coupling_matrix(self, i):
        js = self.tree.interaction(i)
        if js.size == 0 or self.kr[i] == 0:
            return np.zeros((self.kr[i], self.inter_gather[i].size))
        cols = np.concatenate([self._col_coords(j) for j in js])
        return self.kernel.block(self._row_coords(i), cols)

    def _near_matrix(self, i):
        t = self.tree
        return self.kernel.block(t.coords[t.begin[i]:t.end[i]], t.coords[self.near_gather[i]])

    def basis_matrix(self, i, side="row"):
        """Materialise the full basis of node i (|X_i| x k_i) by expanding
        transfer matrices down to the leaves. For validation at small n."""
        stack = self.U if side == "row" else self.V
        t = self.tree
        if stack[i] is None:
            return None
        if t.is_leaf(i):
            return stack[i]
        blocks = [self.basis_matrix(c, side) for c in t.children(i)]
        return sla.block_diag(*blocks) @ stack[i]

    def __matmul__(self, z):
        return matvec(self, z)

    def memory_report(self):
        return memory_report(self)

    def to_dense(self) -> np.ndarray:
        """Dense n x n matrix represented by this H^2 matrix (small n only)."""
        return matvec(self, np.eye(self.n))


def _separated_boxes(d, tau, rng, npts):
    """Two unit boxes whose centers sit exactly at the admissibility limit."""
    dist = np.sqrt(d) / tau
    Z1 = rng.random((npts, d))
    Z2 = rng.random((npts, d))
    Z2[:, 0] += dist
    return Z1, Z2


def representor_error(kernel: Kernel, X, Y, k: int, method="volume", tol: float = 1e-12,
                      f: float = 2.0) -> float:
    """Relative 2-norm error of K[X, Y] ~ U K[X_skel, Y], where U and the
    skeleton come from the interpolative decomposition of K[X, Y*] and Y* is
    the reduction of Y to at most k points."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    ystar = data_reduct(np.arange(Y.shape[0]), Y, k, method)
    A = kernel.block(X, Y)
    nrm = np.linalg.norm(A, 2)
    if nrm == 0.0:
        return 0.0
    basis = interp_decomp(kernel.block(X, Y[ystar]), tol=tol, f=f)
    approx = basis.basis @ A[basis.skeleton]
    return float(np.linalg.norm(A - approx, 2) / nrm)


def determine_ranks(kernel: Kernel, epsilon: float, d: int, tau: float = 0.5,
                    method="volume", tol: float | None = None, f: float = 2.0,
                    seed: int = 0, npts: int = CALIBRATION_POINTS) -> tuple:
    """Smallest r1 = r2 = r whose representor-based approximation of a
    separated random block has relative 2-norm error below 1e-2 * epsilon.

    r doubles from 1 until the target is met, then a bisection between the
    last failing and first passing value finds the smallest passing r.
    """
    if not (0.0 < epsilon < 1.0):
        raise InvalidInputError("epsilon must lie in (0, 1)")
    method = parse_method(method)
    tol = TOL_RATIO * epsilon if tol is None else tol
    target = CALIBRATION_RATIO * epsilon
    rng = np.random.default_rng(seed)
    Z1, Z2 = _separated_boxes(d, tau, rng, npts)

    def err(r):
        return representor_error(kernel, Z1, Z2, r, method, tol, f)

    best = np.inf
    lo, r = 0, 1
    while True:
        e = err(r)
        best = min(best, e)
        if e < target:
            break
        if r >= npts:
            raise AccuracyUnreachableError(
                f"rank calibration for {kernel.name} did not reach {target:.1e} "
                f"(best {best:.2e})", best_error=best)
        lo, r = r, min(2 * r, npts)
    hi = r
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if err(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi, hi


def _assemble(tree, reps, kernel, config, ranks, timings):
    coords = tree.coords
    n_nodes = tree.n_nodes
    tol, f = config.srrqr_tol, config.f
    U = [None] * n_nodes
    V = [None] * n_nodes
    skel_row = [np.empty(0, np.intp)] * n_nodes
    skel_col = [np.empty(0, np.intp)] * n_nodes
    cptr, cidx = tree.child_ptr, tree.child_idx
    sym = kernel.symmetric

    t0 = time.perf_counter()
    for nodes in reversed(tree.levels()[1:]):
        for i in nodes:
            Y = reps.ystar[i]
            if Y.size == 0:
                continue
            c0, c1 = cptr[i], cptr[i + 1]
            if c0 == c1:
                rows = cols = np.arange(tree.begin[i], tree.end[i])
            else:
                kids = cidx[c0:c1]
                rows = np.concatenate([skel_row[c] for c in kids])
                cols = rows if sym else np.concatenate([skel_col[c] for c in kids])
            try:
                if rows.size:
                    A = kernel.block(coords[rows], coords[Y])
                    b = interp_decomp(A, tol=tol, f=f)
                    U[i], skel_row[i] = b.basis, rows[b.skeleton]
                else:
                    U[i] = np.zeros((0, 0))
                if sym:
                    V[i], skel_col[i] = U[i], skel_row[i]
                elif cols.size:
                    A = kernel.block(coords[Y], coords[cols]).T
                    b = interp_decomp(A, tol=tol, f=f)
                    V[i], skel_col[i] = b.basis, cols[b.skeleton]
                else:
                    V[i] = np.zeros((0, 0))
            except H2Error as exc:
                exc.args = (f"node {i}: {exc.args[0]}",) + exc.args[1:]
                raise
    timings["basis"] = time.perf_counter() - t0

    h2 = H2Matrix(tree, kernel, config, ranks, U, V, skel_row, skel_col,
                  [None] * n_nodes, [None] * n_nodes, reps=reps, timings=timings)
    t0 = time.perf_counter()
    _maybe_store(h2)
    timings["blocks"] = time.perf_counter() - t0
    return h2


def _maybe_store(h2):
    store = h2.config.store
    if store == "auto":
        ent = memory_report(h2).entries
        store = ent["coupling"] + ent["nearfield"] <= STORE_BUDGET
    if store:
        _store_blocks(h2)


def _store_blocks(h2):
    t = h2.tree
    for i in range(t.n_nodes):
        if t.interaction(i).size:
            h2.coupling[i] = h2._coupling_matrix(i)
        if t.is_leaf(i) and t.nearfield(i).size:
            h2.nearfield[i] = h2._near_matrix(i)


def build_h2(points, kernel: Kernel, config: BuildConfig | None = None) -> H2Matrix:
    """Partition, calibrate ranks, reduce and assemble in one call."""
    config = config or BuildConfig()
    timings = {}
    t0 = time.perf_counter()
    tree = build_tree(points, config.q, config.tau)
    timings["tree"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.ranks is not None:
        ranks = tuple(int(r) for r in config.ranks)
    else:
        ranks = determine_ranks(kernel, config.epsilon, tree.dim, config.tau, config.method,
                                config.srrqr_tol, config.f, config.seed)
    timings["ranks"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reps = hidr_run(tree, ReductParams(ranks[0], ranks[1], config.method))
    timings["hidr"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    h2 = _assemble(tree, reps, kernel, config, ranks, timings)
    timings["build"] = time.perf_counter() - t0
    return h2


def build_h2_from_representors(tree: PartitionTree, reps: RepresentorSets, kernel: Kernel,
                               config: BuildConfig | None = None) -> H2Matrix:
    """Assemble from an existing tree and representor sets (no HiDR)."""
    if reps.n_nodes != tree.n_nodes:
        raise InvalidInputError(
            f"representor sets cover {reps.n_nodes} nodes, tree has {tree.n_nodes}")
    if not tree.has_lists:
        raise InvalidInputError("tree has no interaction lists")
    config = config or BuildConfig(tau=tree.tau, q=tree.q)
    config = replace(config, tau=tree.tau, q=tree.q, method=reps.params.method)
    timings = {}
    t0 = time.perf_counter()
    h2 = _assemble(tree, reps, kernel, config, (reps.params.r1, reps.params.r2), timings)
    timings["build"] = time.perf_counter() - t0
    return h2


def matvec(h2: H2Matrix, z) -> np.ndarray:
    """y = K~ z for z in original point order; z may be (n,) or (n, m)."""
    z = np.asarray(z, dtype=float)
    t = h2.tree
    if z.shape[0] != t.points.n or z.ndim > 2:
        raise InvalidInputError(f"vector length {z.shape[0]} does not match n={t.points.n}")
    perm = t.points.perm
    zt = z[perm]
    tail = z.shape[1:]
    y = np.zeros_like(zt)
    U, V = h2.U, h2.V
    ro, co = h2.ro, h2.co
    zhat = np.zeros((co[-1],) + tail)
    yhat = np.zeros((ro[-1],) + tail)
    cptr, cidx = t.child_ptr, t.child_idx
    begin, end = t.begin, t.end
    levels = t.levels()

    # upward pass
    for nodes in reversed(levels):
        for i in nodes:
            Vi = V[i]
            if Vi is None or Vi.shape[1] == 0:
                continue
            c0, c1 = cptr[i], cptr[i + 1]
            if c0 == c1:
                zhat[co[i]:co[i + 1]] = Vi.T @ zt[begin[i]:end[i]]
            else:
                a, b = co[cidx[c0]], co[cidx[c1 - 1] + 1]
                zhat[co[i]:co[i + 1]] = Vi.T @ zhat[a:b]

    # coupling
    for i in range(t.n_nodes):
        g = h2.inter_gather[i]
        if g.size == 0 or h2.kr[i] == 0:
            continue
        B = h2.coupling[i] if h2.coupling[i] is not None else h2._coupling_matrix(i)
        yhat[ro[i]:ro[i + 1]] += B @ zhat[g]

    # downward pass
    for nodes in levels:
        for i in nodes:
            Ui = U[i]
            if Ui is None or Ui.shape[1] == 0:
                continue
            c0, c1 = cptr[i], cptr[i + 1]
            if c0 == c1:
                y[begin[i]:end[i]] += Ui @ yhat[ro[i]:ro[i + 1]]
            else:
                a, b = ro[cidx[c0]], ro[cidx[c1 - 1] + 1]
                yhat[a:b] += Ui @ yhat[ro[i]:ro[i + 1]]

    # nearfield
    for i in t.leaves:
        g = h2.near_gather[i]
        if g.size == 0:
            continue
        N = h2.nearfield[i] if h2.nearfield[i] is not None else h2._near_matrix(i)
        y[begin[i]:end[i]] += N @ zt[g]

    out = np.empty_like(y)
    out[perm] = y
    return out


def dense_matvec(kernel: Kernel, coords, z, rows=None, chunk: int = 1 << 22) -> np.ndarray:
    """Exact K z (or selected rows of it) without storing K."""
    coords = getattr(coords, "coords", coords)
    z = np.asarray(z, dtype=float)
    rows = np.arange(coords.shape[0]) if rows is None else np.asarray(rows)
    n = coords.shape[0]
    step = max(1, chunk // n)
    out = np.empty((rows.size,) + z.shape[1:])
    for s in range(0, rows.size, step):
        r = rows[s:s + step]
        out[s:s + step] = kernel.block(coords[r], coords) @ z
    return out


def rel_matvec_error(h2: H2Matrix, kernel: Kernel | None = None, points=None, seed: int = 0,
                     sample: int | None = None, nseeds: int = 1) -> float:
    """||K z - K~ z|| / ||z|| for standard normal z.

    ``points`` defaults to the H^2 matrix's own points (original order).
    With ``sample`` rows the numerator is estimated from that many uniformly
    drawn rows, scaled by sqrt(n / sample). With ``nseeds > 1`` the maximum
    over seeds seed, seed+1, ... is returned.
    """
    kernel = kernel or h2.kernel
    coords = h2.tree.points.original_order() if points is None else getattr(points, "coords", points)
    coords = np.asarray(coords, float)
    n = coords.shape[0]
    Z = np.stack([np.random.default_rng(seed + s).standard_normal(n) for s in range(nseeds)], axis=1)
    approx = matvec(h2, Z)
    if sample is None or sample >= n:
        exact = dense_matvec(kernel, coords, Z)
        num = np.linalg.norm(exact - approx, axis=0)
    else:
        rows = np.sort(np.random.default_rng(seed + 10_000).choice(n, size=sample, replace=False))
        exact = dense_matvec(kernel, coords, Z, rows=rows)
        num = np.linalg.norm(exact - approx[rows], axis=0) * np.sqrt(n / sample)
    return float(np.max(num / np.linalg.norm(Z, axis=0)))


COMPONENTS = ("leafU", "leafV", "transferR", "transferW", "coupling", "nearfield")


@dataclass
class MemoryReport:
    entries: dict
    materialized: bool = True

    @property
    def total(self) -> int:
        return int(sum(self.entries.values()))

    @property
    def bytes(self) -> dict:
        return {k: 8 * v for k, v in self.entries.items()}

    @property
    def total_bytes(self) -> int:
        return 8 * self.total

    def as_row(self) -> dict:
        row = {f"mem_{k}": v for k, v in self.entries.items()}
        row["mem_total"] = self.total
        return row


def memory_report(h2: H2Matrix) -> MemoryReport:
    """Entry counts of every stored component class.

    Coupling and nearfield entries are counted from block shapes, so the
    numbers are the same whether or not the blocks are materialised.
    """
    t = h2.tree
    leaf = t.leaf_mask
    sym_shared = all(u is v for u, v in zip(h2.U, h2.V))
    ent = dict.fromkeys(COMPONENTS, 0)
    for i in range(t.n_nodes):
        u, v = h2.U[i], h2.V[i]
        key_u, key_v = ("leafU", "leafV") if leaf[i] else ("transferR", "transferW")
        if u is not None:
            ent[key_u] += u.size
        if v is not None and not sym_shared:
            ent[key_v] += v.size
        ent["coupling"] += int(h2.kr[i]) * int(h2.inter_gather[i].size)
        if leaf[i]:
            ent["nearfield"] += t.size(i) * int(h2.near_gather[i].size)
    return MemoryReport(ent, materialized=h2.stored)


# binary container: magic, u32 version, u32 header length, JSON header, then
# records (u16 name length, name, dtype char, u8 ndim, u64 shape..., data)
MAGIC = b"DDH2MAT\0"
FORMAT_VERSION = 1
_TREE_FIELDS = ("level", "parent", "begin", "end", "lo", "hi", "child_ptr", "child_idx",
                "inter_ptr", "inter_idx", "near_ptr", "near_idx")


def _write_array(fh, name, arr):
    arr = np.asarray(arr)
    code = b"f" if arr.dtype.kind == "f" else b"i"
    arr = arr.astype("<f8" if code == b"f" else "<i8")
    key = name.encode()
    fh.write(struct.pack("<H", len(key)) + key + code + struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_array(fh):
    head = fh.read(2)
    if len(head) < 2:
        return None, None
    (klen,) = struct.unpack("<H", head)
    name = fh.read(klen).decode()
    code = fh.read(1)
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    buf = fh.read(8 * count)
    if len(buf) != 8 * count or code not in (b"f", b"i"):
        raise InvalidInputError(f"truncated or corrupt record {name!r}")
    dtype = "<f8" if code == b"f" else "<i8"
    arr = np.frombuffer(buf, dtype=dtype).reshape(shape)
    return name, arr.astype(float if code == b"f" else np.intp)


def save_h2(path, h2: H2Matrix) -> None:
    """Write ``h2`` (tree, bases, skeletons and stored blocks) to ``path``."""
    t, cfg = h2.tree, h2.config
    header = {
        "n": t.points.n, "d": t.dim, "q": t.q, "tau": t.tau, "csp": t.csp,
        "epsilon": cfg.epsilon, "ranks": list(map(int, h2.ranks)), "f": cfg.f,
        "tol": cfg.srrqr_tol, "store": h2.stored, "method": h2.method,
        "reduct": cfg.method.variant, "kernel": h2.kernel.spec(),
        "symmetric": bool(h2.kernel.symmetric), "n_nodes": t.n_nodes,
        "shared_basis": all(u is v for u, v in zip(h2.U, h2.V)),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob)
        _write_array(fh, "coords", t.coords)
        _write_array(fh, "perm", t.points.perm)
        for name in _TREE_FIELDS:
            _write_array(fh, name, getattr(t, name))
        for i in range(t.n_nodes):
            if h2.U[i] is not None:
                _write_array(fh, f"U/{i}", h2.U[i])
                _write_array(fh, f"skel_row/{i}", h2.skel_row[i])
            if h2.V[i] is not None and not header["shared_basis"]:
                _write_array(fh, f"V/{i}", h2.V[i])
                _write_array(fh, f"skel_col/{i}", h2.skel_col[i])
            if h2.row_points is not None and h2.row_points[i] is not None:
                _write_array(fh, f"row_points/{i}", h2.row_points[i])
            if h2.col_points is not None and h2.col_points[i] is not None and \
                    h2.col_points is not h2.row_points:
                _write_array(fh, f"col_points/{i}", h2.col_points[i])
            if h2.coupling[i] is not None:
                _write_array(fh, f"coupling/{i}", h2.coupling[i])
            if h2.nearfield[i] is not None:
                _write_array(fh, f"nearfield/{i}", h2.nearfield[i])


def load_h2(path, kernel: Kernel | None = None) -> H2Matrix:
    """Read a container written by :func:`save_h2` and validate it.

    The kernel is rebuilt from its stored spec unless given; it is needed
    for matvecs when blocks were not stored.
    """
    from .kernels import parse_kernel

    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise InvalidInputError(f"{path} is not an H2 matrix container")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported container version {version}")
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        while True:
            name, arr = _read_array(fh)
            if name is None:
                break
            arrays[name] = arr

    n_nodes = header["n_nodes"]
    try:
        tree = PartitionTree(
            points=PointSet(arrays["coords"], arrays["perm"]), q=header["q"], tau=header["tau"],
            csp=header["csp"], **{k: arrays[k] for k in _TREE_FIELDS})
    except KeyError as exc:
        raise InvalidInputError(f"missing record {exc.args[0]!r}") from None
    if kernel is None:
        kernel = parse_kernel(header["kernel"])
    config = BuildConfig(epsilon=header["epsilon"], tau=header["tau"], q=header["q"],
                         method=header["reduct"], f=header["f"], ranks=tuple(header["ranks"]),
                         tol=header["tol"], store=header["store"])

    def per_node(key, default=None):
        return [arrays.get(f"{key}/{i}", default) for i in range(n_nodes)]

    empty = np.empty(0, np.intp)
    U, skel_row = per_node("U"), per_node("skel_row", empty)
    if header["shared_basis"]:
        V, skel_col = U, skel_row
    else:
        V, skel_col = per_node("V"), per_node("skel_col", empty)
    row_points = col_points = None
    if header["method"] == "interp":
        row_points = per_node("row_points")
        col_points = row_points if header["shared_basis"] else per_node("col_points")
    h2 = H2Matrix(tree, kernel, config, tuple(header["ranks"]), U, V, skel_row, skel_col,
                  per_node("coupling"), per_node("nearfield"), method=header["method"],
                  row_points=row_points, col_points=col_points)
    validate_h2(h2)
    return h2


def validate_h2(h2: H2Matrix) -> None:
    """Check structural invariants; raise InvalidInputError on violation."""
    t = h2.tree
    n = t.points.n

    def fail(msg):
        raise InvalidInputError(f"invalid H2 matrix: {msg}")

    if sorted(t.points.perm.tolist()) != list(range(n)):
        fail("permutation is not a bijection")
    leaves = t.leaves
    order = leaves[np.argsort(t.begin[leaves])]
    if t.begin[order[0]] != 0 or t.end[order[-1]] != n or \
            np.any(t.begin[order[1:]] != t.end[order[:-1]]):
        fail("leaf ranges do not tile the points")
    for i in range(t.n_nodes):
        for stack, k, skel in ((h2.U, h2.kr, h2.skel_row), (h2.V, h2.kc, h2.skel_col)):
            B = stack[i]
            if B is None:
                continue
            if t.is_leaf(i):
                rows = t.size(i)
            else:
                kids = t.children(i)
                if any(stack[c] is None for c in kids):
                    fail(f"node {i} has a basis but a child does not")
                rows = int(k[kids].sum())
            if B.shape[0] != rows:
                fail(f"basis of node {i} has {B.shape[0]} rows, expected {rows}")
            if h2.method == "dd":
                if skel[i].size != B.shape[1]:
                    fail(f"skeleton size of node {i} does not match its basis")
                if np.any((skel[i] < t.begin[i]) | (skel[i] >= t.end[i])):
                    fail(f"skeleton of node {i} leaves its cluster")
        if h2.coupling[i] is not None and h2.coupling[i].shape != (h2.kr[i], h2.inter_gather[i].size):
            fail(f"coupling block of node {i} has shape {h2.coupling[i].shape}")
        if h2.nearfield[i] is not None and h2.nearfield[i].shape != (t.size(i), h2.near_gather[i].size):
            fail(f"nearfield block of node {i} has shape {h2.nearfield[i].shape}")
        for j in t.interaction(i):
            if h2.U[i] is None or h2.V[j] is None:
                fail(f"admissible pair ({i}, {j}) lacks a basis")
    if h2.stored:
        for i in range(t.n_nodes):
            if t.interaction(i).size and h2.kr[i] and h2.coupling[i] is None:
                fail(f"coupling block of node {i} missing")
            if t.is_leaf(i) and t.nearfield(i).size and h2.nearfield[i] is None:
                fail(f"nearfield block of node {i} missing")
