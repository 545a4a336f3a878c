"""
How well does each subset selection method stand in for a large farfield?
Y is a curved patch of a sphere well separated from a cap X; each method
picks k points of Y, an interpolative basis is fitted on K(X, Y*) and the
error is measured on the full block K(X, Y).
"""

from ddh2.bench import REDUCT_KERNELS, run_reduct_compare, separated_pair

X, Y = separated_pair(seed=0)
recs = run_reduct_compare((X, Y), REDUCT_KERNELS, ks=(8, 16, 32, 64, 128))

ks = sorted({r.k for r in recs})
for kernel in dict.fromkeys(r.kernel for r in recs):
    print(kernel)
    print("    k      " + "".join(f"{k:>10}" for k in ks))
    for method in ("fps", "volume", "surface"):
        errs = [r.error for r in recs if r.kernel == kernel and r.reduct == method]
        print(f"    {method:<8} " + "".join(f"{e:10.1e}" for e in errs))
