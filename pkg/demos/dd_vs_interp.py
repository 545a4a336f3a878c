"""
Memory needed by the data-driven construction and by tensor Chebyshev
interpolation at comparable accuracy. Interpolation spends k^3 nodes per box
whatever the local geometry, which hurts on surface data.
"""

from ddh2.bench import run_err_vs_mem

recs = run_err_vs_mem("three-spheres", 6000, "coulomb", epsilons=(1e-3, 1e-5, 1e-7), ks=(3, 4, 5))
print(f"{'method':<8}{'eps / k':>9}{'error':>11}{'entries':>14}")
for r in recs:
    knob = r.epsilon if r.method == "dd" else r.k
    print(f"{r.method:<8}{knob:>9}{r.error:11.1e}{r.mem_total:14,}")
