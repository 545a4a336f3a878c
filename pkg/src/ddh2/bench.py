"""
Benchmark harness and command line interface.

Every experiment writes a CSV with the fixed header ``CSV_HEADER``; columns an
experiment does not use are left empty. ``scaling`` appends a footer row
(``experiment=slope``) holding log-log slopes of the timing columns.

    python -m ddh2.bench gen --dataset three-spheres --n 20000 --out pts.txt
    python -m ddh2.bench build --dataset cube --n 4000 --kernel coulomb --eps 1e-4
    python -m ddh2.bench scaling --dataset cube --n 50000,100000 --eps 1e-4
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, H2Error, InvalidInputError
from .h2core import (
    BuildConfig,
    build_h2,
    build_h2_from_representors,
    dense_matvec,
    matvec,
    memory_report,
    representor_error,
)
from .hidr import ReductParams, check_o1_bounds, hidr_run
from .interp import build_h2_interp
from .kernels import TABLE1, Kernel, parse_kernel
from .partition import PointSet, build_tree, load_points, save_points

__all__ = [
    "RunRecord",
    "CSV_HEADER",
    "gen_dataset",
    "separated_pair",
    "run_build",
    "run_scaling",
    "run_once_for_all",
    "run_err_vs_mem",
    "run_reduct_compare",
    "loglog_slope",
    "main",
]

SPHERE_CENTERS = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, math.sqrt(3.0) / 2.0, 0.0]])
ERROR_SEEDS = 5
SAMPLE_ROWS = 256
# above this size errors are estimated from sampled rows
DENSE_ERROR_LIMIT = 50_000


@dataclass
class RunRecord:
    experiment: str = ""
    dataset: str = ""
    n: int | str = ""
    kernel: str = ""
    method: str = ""
    reduct: str = ""
    tau: float | str = ""
    q: int | str = ""
    epsilon: float | str = ""
    k: int | str = ""
    r1: int | str = ""
    r2: int | str = ""
    mean_ystar: float | str = ""
    t_hidr: float | str = ""
    t_build: float | str = ""
    t_matvec: float | str = ""
    mem_total: int | str = ""
    mem_leafU: int | str = ""
    mem_leafV: int | str = ""
    mem_transferR: int | str = ""
    mem_transferW: int | str = ""
    mem_coupling: int | str = ""
    mem_nearfield: int | str = ""
    error: float | str = ""
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("t_hidr", "t_build", "t_matvec"):
            val = getattr(self, name)
            if val != "" and val < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.error != "" and not (self.error >= 0):
            raise InvalidInputError("error must be a non-negative number")

    def row(self) -> dict:
        out = asdict(self)
        out.pop("extra")
        return {k: _fmt(v) for k, v in out.items()}


CSV_HEADER = [f.name for f in fields(RunRecord) if f.name != "extra"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, records, footer: dict | None = None):
    """Write records (and an optional footer row) with the fixed header."""
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow(rec.row())
        if footer is not None:
            w.writerow({k: _fmt(footer.get(k, "")) for k in CSV_HEADER})
    finally:
        if fh is not sys.stdout:
            fh.close()


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# datasets

def gen_dataset(name: str, n: int | None, seed: int = 0) -> PointSet:
    """``cube``: uniform in [0,1]^3. ``three-spheres``: points spread evenly
    over three unit spheres centred on an equilateral triangle of side 1.
    ``file:<path>``: a point file, uniformly subsampled to n points."""
    rng = np.random.default_rng(seed)
    if name == "cube":
        return PointSet(rng.random((int(n), 3)))
    if name == "three-spheres":
        n = int(n)
        g = rng.standard_normal((n, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return PointSet(SPHERE_CENTERS[np.arange(n) % 3] + g)
    if name.startswith("file:"):
        path = name[5:]
        try:
            pts = load_points(path)
        except OSError as exc:
            raise InvalidInputError(f"cannot read point file {path}: {exc}") from None
        if n is not None and int(n) < pts.n:
            keep = np.sort(rng.choice(pts.n, size=int(n), replace=False))
            return PointSet(pts.coords[keep])
        return pts
    raise ConfigurationError(f"unknown dataset {name!r}; use cube, three-spheres or file:<path>")


def separated_pair(nx: int = 198, ny: int = 1577, diameter: float = 58.21,
                   distance: float = 21.275, radius: float = 50.0, span: float = 1.0,
                   half_width: float = 0.8, seed: int = 0):
    """Two well-separated patches of a sphere of the given radius.

    X is a polar cap whose chord diameter is ``diameter``. Y covers polar
    angles [beta, beta + span] and azimuths [-half_width, half_width], with
    beta chosen so that the chord distance from the cap edge is ``distance``.
    Points are uniform in area on each patch.
    """
    rng = np.random.default_rng(seed)
    alpha = math.asin(min(1.0, diameter / (2.0 * radius)))
    beta = alpha + 2.0 * math.asin(min(1.0, distance / (2.0 * radius)))

    def patch(count, t0, t1, p0):
        z = rng.uniform(math.cos(t1), math.cos(t0), count)
        phi = rng.uniform(-p0, p0, count)
        s = np.sqrt(1.0 - z * z)
        return radius * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)

    return patch(nx, 0.0, alpha, math.pi), patch(ny, beta, min(math.pi, beta + span), half_width)


# experiments

def _kernel(spec) -> Kernel:
    return spec if isinstance(spec, Kernel) else parse_kernel(spec)


def _median_time(fn, reps):
    times, out = [], None
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def _error(h2, kernel, points, seed, sample=None):
    """Max over ``ERROR_SEEDS`` draws of ||K z - K~ z|| / ||z||."""
    coords = points.coords
    n = coords.shape[0]
    Z = np.stack([np.random.default_rng(seed + s).standard_normal(n)
                  for s in range(ERROR_SEEDS)], axis=1)
    approx = matvec(h2, Z)
    if sample is None and n > DENSE_ERROR_LIMIT:
        sample = SAMPLE_ROWS
    if sample is None:
        num = np.linalg.norm(dense_matvec(kernel, coords, Z) - approx, axis=0)
    else:
        rows = np.sort(np.random.default_rng(seed + 10_000).choice(n, size=sample, replace=False))
        exact = dense_matvec(kernel, coords, Z, rows=rows)
        num = np.linalg.norm(exact - approx[rows], axis=0) * math.sqrt(n / sample)
    return float(np.max(num / np.linalg.norm(Z, axis=0)))


def _record(h2, **kw) -> RunRecord:
    mem = memory_report(h2).as_row()
    return RunRecord(tau=h2.tree.tau, q=h2.tree.q, r1=h2.ranks[0], r2=h2.ranks[1],
                     method=h2.method, **mem, **kw)


def _build_time(h2) -> float:
    """Everything except HiDR: tree, lists, rank calibration, bases, blocks."""
    t = h2.timings
    return sum(t.get(k, 0.0) for k in ("tree", "ranks", "build"))


def run_build(dataset="cube", n=4000, kernel="coulomb", epsilon=1e-4, tau=0.5, q=128,
              reduct="volume", method="dd", k=6, seed=0, ranks=None, error=True,
              save=None) -> RunRecord:
    """One build, one timed matvec and (optionally) the error."""
    pts = gen_dataset(dataset, n, seed) if isinstance(dataset, str) else PointSet(dataset)
    ker = _kernel(kernel)
    cfg = BuildConfig(epsilon=epsilon, tau=tau, q=q, method=reduct, ranks=ranks, seed=seed)
    if method == "dd":
        h2 = build_h2(pts, ker, cfg)
    elif method == "interp":
        h2 = build_h2_interp(pts, ker, k, cfg)
    else:
        raise ConfigurationError(f"unknown method {method!r}; use dd or interp")
    z = np.random.default_rng(seed).standard_normal(pts.n)
    t_mv, _ = _median_time(lambda: matvec(h2, z), 1)
    if save:
        from .h2core import save_h2
        save_h2(save, h2)
    err = _error(h2, ker, pts, seed) if error else ""
    rec = _record(h2, experiment="build", dataset=dataset if isinstance(dataset, str) else "array",
                  n=pts.n, kernel=ker.spec(), reduct=cfg.method.variant if method == "dd" else "",
                  epsilon=epsilon if method == "dd" else "", k=k if method == "interp" else "",
                  t_hidr=h2.timings.get("hidr", 0.0), t_build=_build_time(h2),
                  t_matvec=t_mv, error=err)
    if h2.reps is not None:
        rec.mean_ystar = h2.reps.mean_ystar()
        rec.extra["bounds"] = check_o1_bounds(h2.tree, h2.reps, strict=False)
    return rec


def loglog_slope(x, y) -> float | str:
    """Least-squares slope of log y against log x ('' for fewer than 2 points)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2 or np.ptp(x) == 0:
        return ""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_scaling(dataset="cube", kernel="coulomb", epsilon=1e-4, ns=(50_000, 100_000),
                out=None, tau=0.5, q=128, reduct="volume", reps=3, seed=0, error=False):
    """Median-of-``reps`` timings per n plus a slope footer row.

    The dataset is regenerated for every n with the same seed. Blocks are
    kept in memory only when they fit (``store="auto"``).
    """
    ker = _kernel(kernel)
    records = []
    for n in ns:
        pts = gen_dataset(dataset, n, seed)
        cfg = BuildConfig(epsilon=epsilon, tau=tau, q=q, method=reduct, seed=seed)
        t_hidr, t_build = [], []
        for _ in range(max(1, reps)):
            h2 = None  # release the previous build first
            h2 = build_h2(pts, ker, cfg)
            t_hidr.append(h2.timings["hidr"])
            t_build.append(_build_time(h2))
        z = np.random.default_rng(seed).standard_normal(pts.n)
        t_mv, _ = _median_time(lambda: matvec(h2, z), reps)
        rec = _record(h2, experiment="scaling", dataset=dataset, n=pts.n, kernel=ker.spec(),
                      reduct=cfg.method.variant, epsilon=epsilon,
                      t_hidr=float(np.median(t_hidr)), t_build=float(np.median(t_build)),
                      t_matvec=t_mv, mean_ystar=h2.reps.mean_ystar(),
                      error=_error(h2, ker, pts, seed) if error else "")
        rec.extra["bounds"] = check_o1_bounds(h2.tree, h2.reps, strict=False)
        records.append(rec)
        h2 = None
    nn = [r.n for r in records]
    footer = {"experiment": "slope", "dataset": dataset, "kernel": ker.spec(),
              "t_hidr": loglog_slope(nn, [r.t_hidr for r in records]),
              "t_build": loglog_slope(nn, [r.t_build for r in records]),
              "t_matvec": loglog_slope(nn, [r.t_matvec for r in records])}
    if out is not None:
        write_csv(out, records, footer)
    return records, footer


def run_once_for_all(dataset="three-spheres", n=20_000, kernels=TABLE1, r2s=(8, 16, 32, 64),
                     out=None, r1=None, tau=0.5, q=128, reduct="volume", epsilon=1e-6,
                     seed=0, error=True):
    """One tree and one HiDR run per r2 (r1 = r2 unless given), reused for
    every kernel."""
    pts = gen_dataset(dataset, n, seed) if isinstance(dataset, str) else PointSet(dataset)
    kers = [_kernel(k) for k in kernels]
    tree = build_tree(pts, q, tau)
    records = []
    for r2 in r2s:
        t0 = time.perf_counter()
        reps = hidr_run(tree, ReductParams(r1 or r2, r2, reduct))
        t_hidr = time.perf_counter() - t0
        for ker in kers:
            cfg = BuildConfig(epsilon=epsilon, tau=tau, q=q, method=reduct, seed=seed)
            h2 = build_h2_from_representors(tree, reps, ker, cfg)
            rec = _record(h2, experiment="once-for-all",
                          dataset=dataset if isinstance(dataset, str) else "array", n=pts.n,
                          kernel=ker.spec(), reduct=reps.params.method.variant,
                          epsilon=epsilon, mean_ystar=reps.mean_ystar(), t_hidr=t_hidr,
                          t_build=h2.timings["build"],
                          error=_error(h2, ker, pts, seed) if error else "")
            records.append(rec)
            del h2
    if out is not None:
        write_csv(out, records)
    return records


def run_err_vs_mem(dataset="three-spheres", n=20_000, kernel="coulomb",
                   epsilons=(1e-3, 1e-4, 1e-5, 1e-6), ks=(3, 4, 5, 6), out=None,
                   tau=0.5, q=128, reduct="volume", seed=0):
    """DD over an epsilon sweep and interpolation over a k sweep."""
    pts = gen_dataset(dataset, n, seed) if isinstance(dataset, str) else PointSet(dataset)
    ker = _kernel(kernel)
    name = dataset if isinstance(dataset, str) else "array"
    records = []
    for eps in epsilons:
        h2 = build_h2(pts, ker, BuildConfig(epsilon=eps, tau=tau, q=q, method=reduct, seed=seed))
        records.append(_record(h2, experiment="err-vs-mem", dataset=name, n=pts.n,
                               kernel=ker.spec(), reduct=reduct, epsilon=eps,
                               t_hidr=h2.timings["hidr"], t_build=_build_time(h2),
                               error=_error(h2, ker, pts, seed)))
        del h2
    for k in ks:
        h2 = build_h2_interp(pts, ker, k, BuildConfig(tau=tau, q=q, seed=seed))
        records.append(_record(h2, experiment="err-vs-mem", dataset=name, n=pts.n,
                               kernel=ker.spec(), k=k, t_build=_build_time(h2),
                               error=_error(h2, ker, pts, seed)))
        del h2
    if out is not None:
        write_csv(out, records)
    return records


REDUCT_KERNELS = ("coulomb", "gaussian:L=30", "power:p=11")


def run_reduct_compare(pair=None, kernels=REDUCT_KERNELS, ks=(8, 16, 32, 64, 128),
                       methods=("fps", "volume", "surface"), out=None, tol=1e-12, seed=0):
    """Relative 2-norm error of K_XY ~ U K[X_skel, Y] where the interpolative
    basis U comes from K[X, Y*] and Y* is each method's reduction of Y."""
    X, Y = pair if pair is not None else separated_pair(seed=seed)
    records = []
    for spec in kernels:
        ker = _kernel(spec)
        for method in methods:
            for k in ks:
                err = representor_error(ker, X, Y, k, method, tol=tol)
                records.append(RunRecord(experiment="reduct-compare", dataset="separated-pair",
                                         n=len(Y), kernel=ker.spec(), method="dd",
                                         reduct=method, k=k, error=err))
    if out is not None:
        write_csv(out, records)
    return records


# command line

def _list(conv):
    def parse(text):
        return [conv(v) for v in str(text).split(",") if v.strip()]
    return parse


def _parser():
    p = argparse.ArgumentParser(prog="ddh2-bench", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, many_n=False, many_kernels=False):
        sp.add_argument("--dataset", default="cube")
        sp.add_argument("--n", type=_list(int) if many_n else int, default=None)
        if many_kernels:
            sp.add_argument("--kernel", action="append", default=None,
                            help="repeat for several kernels")
        else:
            sp.add_argument("--kernel", default="coulomb")
        sp.add_argument("--tau", type=float, default=0.5)
        sp.add_argument("--leaf", type=int, default=128, help="leaf capacity q")
        sp.add_argument("--reduct", choices=("fps", "volume", "surface"), default="volume")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None)

    g = sub.add_parser("gen", help="write a dataset as a point file")
    g.add_argument("--dataset", default="cube")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)

    b = sub.add_parser("build", help="build one H2 matrix and report a CSV row")
    common(b)
    b.add_argument("--eps", type=float, default=1e-6)
    b.add_argument("--method", choices=("dd", "interp"), default="dd")
    b.add_argument("--k", type=int, default=6, help="interpolation nodes per dimension")
    b.add_argument("--save", default=None, help="write the H2 matrix container here")
    b.add_argument("--no-error", action="store_true")

    s = sub.add_parser("scaling", help="timings over a list of n with slope footer")
    common(s, many_n=True)
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--reps", type=int, default=3)
    s.add_argument("--error", action="store_true", help="also estimate the matvec error")

    o = sub.add_parser("once-for-all", help="one HiDR per r2, reused across kernels")
    common(o, many_kernels=True)
    o.add_argument("--eps", type=float, default=1e-6)
    o.add_argument("--r2", type=_list(int), default=[8, 16, 32, 64])

    e = sub.add_parser("err-vs-mem", help="DD epsilon sweep against interpolation k sweep")
    common(e)
    e.add_argument("--eps", type=_list(float), default=[1e-3, 1e-4, 1e-5, 1e-6])
    e.add_argument("--k", type=_list(int), default=[3, 4, 5, 6])

    r = sub.add_parser("reduct-compare", help="data reduction methods on a separated pair")
    r.add_argument("--kernel", action="append", default=None)
    r.add_argument("--k", type=_list(int), default=[8, 16, 32, 64, 128])
    r.add_argument("--diameter", type=float, default=58.21)
    r.add_argument("--distance", type=float, default=21.275)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "gen":
            pts = gen_dataset(args.dataset, args.n, args.seed)
            if args.out:
                save_points(args.out, pts)
            else:
                np.savetxt(sys.stdout, pts.coords, fmt="%.17g")
        elif args.cmd == "build":
            rec = run_build(args.dataset, args.n or 4000, args.kernel, args.eps, args.tau,
                            args.leaf, args.reduct, args.method, args.k, args.seed,
                            error=not args.no_error, save=args.save)
            write_csv(args.out, [rec])
        elif args.cmd == "scaling":
            run_scaling(args.dataset, args.kernel, args.eps, args.n or [50_000, 100_000],
                        args.out or "-", args.tau, args.leaf, args.reduct, args.reps,
                        args.seed, args.error)
        elif args.cmd == "once-for-all":
            run_once_for_all(args.dataset, args.n or 20_000, args.kernel or list(TABLE1),
                             args.r2, args.out or "-", tau=args.tau, q=args.leaf,
                             reduct=args.reduct, epsilon=args.eps, seed=args.seed)
        elif args.cmd == "err-vs-mem":
            run_err_vs_mem(args.dataset, args.n or 20_000, args.kernel, args.eps, args.k,
                           args.out or "-", args.tau, args.leaf, args.reduct, args.seed)
        elif args.cmd == "reduct-compare":
            pair = separated_pair(diameter=args.diameter, distance=args.distance, seed=args.seed)
            run_reduct_compare(pair, args.kernel or list(REDUCT_KERNELS), args.k,
                               out=args.out or "-", seed=args.seed)
    except (H2Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
