"""
Representor sets depend only on geometry, so one HiDR pass serves many
kernels. Here a single set is reused for Gaussians of very different
bandwidth and for the four benchmark kernels.
"""

import time

from ddh2.bench import gen_dataset
from ddh2.h2core import BuildConfig, build_h2_from_representors, rel_matvec_error
from ddh2.hidr import ReductParams, hidr_run
from ddh2.kernels import TABLE1, builtin
from ddh2.partition import build_tree

pts = gen_dataset("three-spheres", 6000, seed=2)
tree = build_tree(pts, q=128, tau=0.5)

for r in (8, 27, 64):
    t0 = time.perf_counter()
    reps = hidr_run(tree, ReductParams(r, r))
    t_hidr = time.perf_counter() - t0
    print(f"r={r}: HiDR {t_hidr:.2f}s, mean |Y*| = {reps.mean_ystar():.1f}")
    for L in (0.01, 0.1, 1.0, 10.0):
        k = builtin("gaussian", L=L)
        h2 = build_h2_from_representors(tree, reps, k, BuildConfig())
        print(f"    gaussian L={L:<5} error {rel_matvec_error(h2):.1e}")
    for name in TABLE1[:1] + TABLE1[2:]:
        h2 = build_h2_from_representors(tree, reps, builtin(name), BuildConfig())
        print(f"    {name:<9}        error {rel_matvec_error(h2):.1e}")
