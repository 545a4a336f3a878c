import csv

import numpy as np
import pytest

from ddh2 import bench
from ddh2.bench import (
    CSV_HEADER,
    SPHERE_CENTERS,
    RunRecord,
    gen_dataset,
    loglog_slope,
    read_csv,
    run_build,
    run_once_for_all,
    run_reduct_compare,
    run_scaling,
    separated_pair,
    write_csv,
)
from ddh2.errors import ConfigurationError, InvalidInputError
from ddh2.partition import save_points

TIMING = {"t_hidr", "t_build", "t_matvec"}


def test_cube_dataset():
    pts = gen_dataset("cube", 10, 0)
    assert pts.n == 10 and np.all((pts.coords >= 0) & (pts.coords <= 1))


def test_three_spheres():
    P = gen_dataset("three-spheres", 3000, 1).coords
    d = np.linalg.norm(P[:, None, :] - SPHERE_CENTERS[None], axis=2)
    assert np.all(np.min(np.abs(d - 1.0), axis=1) <= 1e-12)
    side = np.linalg.norm(SPHERE_CENTERS[:, None] - SPHERE_CENTERS[None], axis=2)
    assert np.allclose(side[np.triu_indices(3, 1)], 1.0)
    counts = np.bincount(np.argmin(np.abs(d - 1.0), axis=1), minlength=3)
    assert counts.max() - counts.min() <= 1


def test_file_dataset(tmp_path):
    P = np.random.default_rng(0).random((5, 3))
    path = tmp_path / "five.txt"
    save_points(path, P)
    assert np.array_equal(gen_dataset(f"file:{path}", None).coords, P)
    sub = gen_dataset(f"file:{path}", 3, 0).coords
    assert sub.shape == (3, 3)
    with pytest.raises(InvalidInputError):
        gen_dataset(f"file:{tmp_path / 'none.txt'}", 3)
    with pytest.raises(ConfigurationError):
        gen_dataset("torus", 3)


def test_separated_pair_geometry():
    X, Y = separated_pair()
    assert X.shape == (198, 3) and Y.shape == (1577, 3)
    assert np.allclose(np.linalg.norm(X, axis=1), 50.0)
    assert np.allclose(np.linalg.norm(Y, axis=1), 50.0)
    diam = max(np.linalg.norm(a - b) for a in X for b in X)
    gap = np.min(np.linalg.norm(X[:, None] - Y[None], axis=2))
    assert 0.95 * 58.21 <= diam <= 58.21
    assert 21.275 <= gap <= 1.1 * 21.275


def test_record_validation():
    with pytest.raises(InvalidInputError):
        RunRecord(t_build=-1.0)
    with pytest.raises(InvalidInputError):
        RunRecord(error=float("nan"))


def test_csv_schema(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(path, [RunRecord(experiment="x", n=5, error=0.5)], {"experiment": "slope"})
    with open(path) as fh:
        header = next(csv.reader(fh))
    assert header == CSV_HEADER
    rows = read_csv(path)
    assert rows[0]["n"] == "5" and rows[0]["error"] == "0.5" and rows[1]["experiment"] == "slope"


def test_loglog_slope():
    assert loglog_slope([1], [1]) == ""
    assert loglog_slope([1, 2, 4], [3, 6, 12]) == pytest.approx(1.0)


def test_single_n_scaling(tmp_path):
    path = tmp_path / "s.csv"
    records, footer = run_scaling("cube", "coulomb", 1e-3, [3000], out=path, reps=1)
    rows = read_csv(path)
    assert len(rows) == 2 and rows[-1]["experiment"] == "slope"
    assert all(rows[-1][c] == "" for c in TIMING)
    assert records[0].extra["bounds"].ok


def test_build_record():
    rec = run_build("cube", 2000, "gaussian", 1e-4, q=64)
    assert rec.error <= 5e-4 and rec.t_build >= 0 and rec.mem_total > 0
    assert rec.extra["bounds"].ok
    interp = run_build("cube", 2000, "gaussian", method="interp", k=4, q=64)
    assert interp.method == "interp" and interp.k == 4
    with pytest.raises(ConfigurationError):
        run_build("cube", 100, method="other")


def test_once_for_all_rows():
    recs = run_once_for_all("cube", 2000, ["coulomb"], [8], q=64)
    assert len(recs) == 1 and recs[0].r2 == 8 and recs[0].mean_ystar > 0


def test_once_for_all_bandwidths():
    Ls = (0.01, 0.1, 1.0, 10.0, 100.0)
    recs = run_once_for_all("three-spheres", 3000, [f"gaussian:L={L}" for L in Ls],
                            [8, 27, 64], q=64)
    for L in Ls:
        errs = [r.error for r in recs if r.kernel == f"gaussian:L={L}"]
        assert errs[-1] <= 1.1 * errs[0]
        assert all(b <= 1.1 * a + 1e-14 for a, b in zip(errs, errs[1:]))


def test_reduct_compare_full_budget():
    X, Y = separated_pair(nx=60, ny=90)
    recs = run_reduct_compare((X, Y), ["coulomb"], [90, 200], tol=1e-12)
    assert len(recs) == 6
    assert all(r.error <= 1e-10 for r in recs)


def without_timings(path):
    return [{k: v for k, v in r.items() if k not in TIMING} for r in read_csv(path)]


def test_reproducible_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert bench.main(["build", "--dataset", "cube", "--n", "1500", "--kernel", "cosdot",
                           "--eps", "1e-4", "--leaf", "64", "--out", str(p)]) == 0
    assert without_timings(a) == without_timings(b)


def test_cli_subcommands(tmp_path, capsys):
    pts = tmp_path / "pts.txt"
    assert bench.main(["gen", "--dataset", "three-spheres", "--n", "30", "--out", str(pts)]) == 0
    assert np.loadtxt(pts).shape == (30, 3)
    out = tmp_path / "o.csv"
    cases = [
        ["build", "--dataset", f"file:{pts}", "--n", "30", "--method", "interp", "--k", "3"],
        ["scaling", "--n", "1000,2000", "--eps", "1e-3", "--reps", "1", "--leaf", "64"],
        ["once-for-all", "--dataset", "cube", "--n", "1500", "--kernel", "coulomb",
         "--r2", "8,16", "--leaf", "64"],
        ["err-vs-mem", "--dataset", "cube", "--n", "1500", "--eps", "1e-3", "--k", "3",
         "--leaf", "64"],
        ["reduct-compare", "--kernel", "coulomb", "--k", "8,16"],
    ]
    for argv in cases:
        assert bench.main(argv + ["--out", str(out)]) == 0
        rows = read_csv(out)
        assert rows and list(rows[0]) == CSV_HEADER
    assert bench.main(["build", "--kernel", "nope", "--n", "100"]) == 2
    assert "error:" in capsys.readouterr().err
