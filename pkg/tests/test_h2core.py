import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddh2.errors import AccuracyUnreachableError, InvalidInputError, KernelDomainError
from ddh2.h2core import (
    BuildConfig,
    build_h2,
    build_h2_from_representors,
    dense_matvec,
    determine_ranks,
    load_h2,
    matvec,
    memory_report,
    rel_matvec_error,
    representor_error,
    save_h2,
    validate_h2,
    _separated_boxes,
)
from ddh2.hidr import ReductParams, hidr_run
from ddh2.kernels import TABLE1, Kernel, builtin, parse_kernel
from ddh2.partition import build_tree


def cube(n, seed=0, d=3):
    return np.random.default_rng(seed).random((n, d))


def sphere(n, seed=0):
    g = np.random.default_rng(seed).standard_normal((n, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def dense(kernel, P):
    return kernel.block(P, P)


@pytest.mark.parametrize("eps", [1e-3, 1e-6])
@pytest.mark.parametrize("geometry", ["cube", "sphere"])
@pytest.mark.parametrize("name", TABLE1)
def test_dense_oracle(name, geometry, eps):
    k = builtin(name)
    worst = 0.0
    for seed in range(10):
        P = cube(2000, seed) if geometry == "cube" else sphere(2000, seed)
        h = build_h2(P, k, BuildConfig(epsilon=eps, q=64, seed=seed))
        worst = max(worst, rel_matvec_error(h, seed=seed))
    assert worst <= 5 * eps


@pytest.mark.xfail(strict=True, reason="two-box rank calibration picks r=27 for Coulomb, "
                                       "which under-resolves the cube farfield at this epsilon")
def test_dense_oracle_coulomb_mid_epsilon():
    k = builtin("coulomb")
    h = build_h2(cube(3000), k, BuildConfig(epsilon=1e-5, q=64))
    assert rel_matvec_error(h, nseeds=5) <= 5e-5


@pytest.mark.parametrize("name", [
    pytest.param("coulomb", marks=pytest.mark.xfail(strict=True, reason="calibrated r=27 is too small")),
    "gaussian", "cosdot", "bump"])
def test_cube_4000_epsilon_1e4(name):
    h = build_h2(cube(4000, 21), builtin(name), BuildConfig(epsilon=1e-4))
    assert rel_matvec_error(h, seed=21) <= 1e-4


@pytest.mark.xfail(strict=True, reason="calibration stops at r=64, the matrix needs r=125")
def test_tight_epsilon_coulomb():
    k = builtin("coulomb")
    h = build_h2(cube(3000, 4), k, BuildConfig(epsilon=1e-8, q=64))
    assert rel_matvec_error(h, seed=4) <= 1e-7


def test_tight_epsilon_coulomb_explicit_ranks():
    k = builtin("coulomb")
    h = build_h2(cube(3000, 4), k, BuildConfig(epsilon=1e-8, q=64, ranks=(125, 125)))
    assert rel_matvec_error(h, seed=4) <= 1e-7


def test_single_leaf_is_dense():
    P = cube(100)
    k = builtin("coulomb")
    h = build_h2(P, k, BuildConfig(epsilon=1e-6, q=128))
    assert h.tree.n_nodes == 1
    K = dense(k, P)
    z = np.random.default_rng(0).standard_normal(100)
    assert np.linalg.norm(matvec(h, z) - K @ z) <= 1e-14 * np.linalg.norm(K, 2) * np.linalg.norm(z)
    mem = memory_report(h)
    assert mem.entries["nearfield"] == 100 * 100 and mem.total == 100 * 100


def test_zero_vector_and_linearity():
    P = cube(2500, 1)
    h = build_h2(P, builtin("gaussian"), BuildConfig(epsilon=1e-6, q=64))
    assert np.all(matvec(h, np.zeros(2500)) == 0.0)
    rng = np.random.default_rng(2)
    z1, z2 = rng.standard_normal(2500), rng.standard_normal(2500)
    a, b = 1.7, -0.3
    lhs = matvec(h, a * z1 + b * z2)
    rhs = a * matvec(h, z1) + b * matvec(h, z2)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)
    Z = np.stack([z1, z2], axis=1)
    assert np.allclose(matvec(h, Z), np.stack([matvec(h, z1), matvec(h, z2)], axis=1),
                       rtol=1e-13, atol=1e-13)
    with pytest.raises(InvalidInputError):
        matvec(h, np.zeros(10))


def test_permutation_invariance():
    P = cube(2000, 3)
    k = builtin("coulomb")
    cfg = BuildConfig(epsilon=1e-6, q=64)
    rng = np.random.default_rng(4)
    pi = rng.permutation(2000)
    z = rng.standard_normal(2000)
    y = matvec(build_h2(P, k, cfg), z)
    yp = matvec(build_h2(P[pi], k, cfg), z[pi])
    assert np.linalg.norm(yp - y[pi]) <= 10 * 1e-6 * np.linalg.norm(z)


def skeleton_tree():
    P = sphere(2000, 5)
    return build_h2(P, builtin("coulomb"), BuildConfig(epsilon=1e-6, q=32))


def test_nested_basis_identity():
    h = skeleton_tree()
    t = h.tree
    checked = 0
    for p in range(t.n_nodes):
        if t.is_leaf(p) or h.U[p] is None:
            continue
        full = h.basis_matrix(p)
        stacked = np.vstack([h.basis_matrix(c) @ h.transferR(c) for c in t.children(p)])
        assert np.linalg.norm(full - stacked) <= 1e-12 * np.linalg.norm(full)
        # interpolative: the skeleton rows of the expanded basis are the identity
        rows = h.skel_row[p] - t.begin[p]
        assert np.allclose(full[rows], np.eye(rows.size), atol=1e-12)
        checked += 1
    assert checked > 0


def test_skeleton_containment():
    h = skeleton_tree()
    t = h.tree
    r2 = h.ranks[1]
    for i in range(t.n_nodes):
        if h.U[i] is None:
            continue
        if t.is_leaf(i):
            xbar = set(range(t.begin[i], t.end[i]))
        else:
            xbar = set(np.concatenate([h.skel_row[c] for c in t.children(i)]).tolist())
        own = set(range(t.begin[i], t.end[i]))
        skel = set(h.skel_row[i].tolist())
        assert skel <= xbar <= own
        assert len(skel) <= r2


def test_basis_compresses_farfield():
    h = skeleton_tree()
    t, k = h.tree, h.kernel
    from ddh2.partition import farfield_indices
    for i in range(1, t.n_nodes, 7):
        far = farfield_indices(i, t)
        if far.size == 0 or h.U[i] is None:
            continue
        A = k.block(t.coords[t.begin[i]:t.end[i]], t.coords[far])
        approx = h.basis_matrix(i) @ k.block(t.coords[h.skel_row[i]], t.coords[far])
        assert np.linalg.norm(A - approx, 2) <= 1e-4 * np.linalg.norm(A, 2)


def test_lists_and_blocks_correspond():
    h = skeleton_tree()
    t = h.tree
    for i in range(t.n_nodes):
        for j in t.interaction(i):
            B = h.coupling_block(i, j)
            assert np.array_equal(B, h.kernel.block(t.coords[h.skel_row[i]], t.coords[h.skel_col[j]]))
        if t.is_leaf(i):
            for j in t.nearfield(i):
                N = h.nearfield_block(i, j)
                assert N.shape == (t.size(i), t.size(j))
    with pytest.raises(KeyError):
        h.coupling_block(0, 0)


def test_store_modes_agree():
    P = cube(3000, 6)
    k = builtin("cosdot")
    z = np.random.default_rng(6).standard_normal(3000)
    a = build_h2(P, k, BuildConfig(epsilon=1e-6, q=64, store=True))
    b = build_h2(P, k, BuildConfig(epsilon=1e-6, q=64, store=False))
    assert a.stored and not b.stored
    ya, yb = matvec(a, z), matvec(b, z)
    assert np.linalg.norm(ya - yb) <= 1e-13 * np.linalg.norm(ya)
    assert memory_report(a).entries == memory_report(b).entries


def test_non_symmetric_kernel():
    P = cube(2000, 7, d=2)
    k = parse_kernel("multiquadric:c=1,a=0.3;0.7")
    h = build_h2(P, k, BuildConfig(epsilon=1e-6, q=32, ranks=(64, 64)))
    assert any(u is not v for u, v in zip(h.U, h.V))
    assert rel_matvec_error(h, nseeds=5) <= 5e-6


def test_deterministic_and_from_representors():
    P = sphere(2500, 8)
    k = builtin("gaussian")
    cfg = BuildConfig(epsilon=1e-6, q=64)
    a = build_h2(P, k, cfg)
    b = build_h2(P, k, cfg)
    c = build_h2_from_representors(a.tree, a.reps, k, cfg)
    z = np.random.default_rng(0).standard_normal(2500)
    ya = matvec(a, z)
    for other in (b, c):
        assert np.array_equal(ya, matvec(other, z))
        assert all(np.array_equal(x, y) for x, y in zip(a.U, other.U) if x is not None)
    assert rel_matvec_error(a, seed=3) == rel_matvec_error(b, seed=3)


def test_from_representors_mismatch():
    t1 = build_tree(cube(1000), 32)
    t2 = build_tree(cube(3000), 32)
    reps = hidr_run(t1, ReductParams(8, 8))
    with pytest.raises(InvalidInputError):
        build_h2_from_representors(t2, reps, builtin("coulomb"))


def test_memory_doubling_ratio():
    k = builtin("coulomb")
    cfg = BuildConfig(epsilon=1e-4, q=64, store=False)
    m1 = memory_report(build_h2(cube(20000, 9), k, cfg)).total
    m2 = memory_report(build_h2(cube(40000, 9), k, cfg)).total
    assert m2 / m1 <= 2.5


def test_sampled_error_estimate():
    P = cube(3000, 10)
    h = build_h2(P, builtin("coulomb"), BuildConfig(epsilon=1e-6, q=64))
    exact = rel_matvec_error(h, nseeds=3)
    est = rel_matvec_error(h, sample=256, nseeds=3)
    assert 0.3 * exact <= est <= 3.0 * exact


def test_dense_matvec_rows():
    P = cube(500, 11)
    k = builtin("gaussian")
    z = np.random.default_rng(0).standard_normal(500)
    full = dense_matvec(k, P, z, chunk=1000)
    assert np.allclose(full, dense(k, P) @ z)
    assert np.allclose(dense_matvec(k, P, z, rows=[3, 7]), full[[3, 7]])


def test_determine_ranks_examples():
    assert determine_ranks(builtin("gaussian", L=0.01), 1e-6, 3) == (1, 1)
    # a wide Gaussian is dominated by its first singular value
    wide = builtin("gaussian", L=10.0)
    Z1, Z2 = _separated_boxes(3, 0.5, np.random.default_rng(0), 256)
    s = np.linalg.svd(wide.block(Z1, Z2), compute_uv=False)
    assert s[1] / s[0] < 1e-2 * 0.5
    r1, r2 = determine_ranks(wide, 0.5, 3)
    assert r1 <= 4 and r2 <= 4
    k = builtin("coulomb")
    r, _ = determine_ranks(k, 1e-6, 3)
    Z1, Z2 = _separated_boxes(3, 0.5, np.random.default_rng(12345), 256)
    assert representor_error(k, Z1, Z2, r, tol=1e-10) < 1e-8


def test_determine_ranks_unreachable():
    def noise(X, Y):
        return np.random.default_rng(len(X) * 7919 + len(Y)).standard_normal((len(X), len(Y)))

    k = Kernel("noise", noise, symmetric=False)
    # the full block is reproduced exactly unless truncation is looser than the target
    with pytest.raises(AccuracyUnreachableError) as info:
        determine_ranks(k, 1e-6, 3, tol=0.5)
    assert info.value.best_error is not None and info.value.best_error > 1e-8


def test_kernel_error_names_node():
    P = np.vstack([cube(300, 13), cube(300, 14) + 20.0])

    def far_nan(X, Y):
        return np.where(np.abs(X[:, :1] - Y[:, :1].T) > 15, np.nan, 1.0)

    with pytest.raises(KernelDomainError, match="node"):
        build_h2(P, Kernel("far-nan", far_nan), BuildConfig(epsilon=1e-3, q=32, ranks=(8, 8)))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        BuildConfig(epsilon=0.0)
    with pytest.raises(InvalidInputError):
        BuildConfig(q=0)
    with pytest.raises(InvalidInputError):
        BuildConfig(store="sometimes")


@pytest.mark.parametrize("store", [True, False])
def test_serialization_round_trip(tmp_path, store):
    P = sphere(2000, 15)
    h = build_h2(P, builtin("bump"), BuildConfig(epsilon=1e-4, q=64, store=store))
    path = tmp_path / "h.ddh2"
    save_h2(path, h)
    back = load_h2(path)
    z = np.random.default_rng(1).standard_normal(2000)
    assert np.array_equal(matvec(h, z), matvec(back, z))
    assert back.ranks == h.ranks and back.stored == h.stored
    assert memory_report(back).entries == memory_report(h).entries


def test_serialization_non_symmetric(tmp_path):
    h = build_h2(cube(1500, 16, d=2), parse_kernel("multiquadric:c=1,a=0.3;0.7"),
                 BuildConfig(epsilon=1e-5, q=32))
    save_h2(tmp_path / "h.ddh2", h)
    back = load_h2(tmp_path / "h.ddh2")
    z = np.random.default_rng(2).standard_normal(1500)
    assert np.array_equal(matvec(h, z), matvec(back, z))


def test_corrupt_containers(tmp_path):
    h = build_h2(cube(1200, 17), builtin("coulomb"), BuildConfig(epsilon=1e-4, q=64))
    path = tmp_path / "h.ddh2"
    save_h2(path, h)
    raw = path.read_bytes()

    bad = tmp_path / "bad.ddh2"
    bad.write_bytes(b"NOTH2MAT" + raw[8:])
    with pytest.raises(InvalidInputError):
        load_h2(bad)
    bad.write_bytes(raw[:8] + (99).to_bytes(4, "little") + raw[12:])
    with pytest.raises(InvalidInputError):
        load_h2(bad)
    bad.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(InvalidInputError):
        load_h2(bad)


def test_validate_rejects_bad_basis():
    h = build_h2(cube(1500, 18), builtin("coulomb"), BuildConfig(epsilon=1e-4, q=32))
    validate_h2(h)
    i = next(i for i in range(h.tree.n_nodes) if h.U[i] is not None and h.tree.is_leaf(i))
    h.U[i] = h.U[i][:-1]
    with pytest.raises(InvalidInputError):
        validate_h2(h)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(40, 800), st.integers(8, 64), st.integers(0, 2**31 - 1),
       st.sampled_from(["coulomb", "gaussian", "cosdot", "bump"]))
def test_matvec_linear_property(d, n, q, seed, name):
    P = np.random.default_rng(seed).random((n, d))
    h = build_h2(P, builtin(name), BuildConfig(epsilon=1e-6, q=q, ranks=(8, 8)))
    rng = np.random.default_rng(seed + 1)
    z1, z2 = rng.standard_normal(n), rng.standard_normal(n)
    lhs = matvec(h, z1 + 2.0 * z2)
    rhs = matvec(h, z1) + 2.0 * matvec(h, z2)
    assert np.linalg.norm(lhs - rhs) <= 1e-11 * max(1.0, np.linalg.norm(rhs))
