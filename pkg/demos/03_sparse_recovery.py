"""
When does the lasso find the right support?
===========================================

Mutual coherence below 1/(2s-1) is a sufficient condition.  Plant a
2-sparse vector in Gaussian designs of decreasing height and watch both
the certificate and the recovery.
"""
import numpy as np

from causal_pinn.sparse import certify_recovery, lambda_sweep

rng = np.random.default_rng(0)
for n in (200, 60, 30, 15):
    cert_ok = found = 0
    for _ in range(40):
        A = rng.normal(size=(n, 10))
        a = np.zeros(10)
        idx = rng.choice(10, 2, replace=False)
        a[idx] = rng.choice([-1, 1], 2) * rng.uniform(0.5, 2, 2)
        c = certify_recovery(A, 2)
        cert_ok += c.satisfied
        found += lambda_sweep(A, A @ a).best.support == frozenset(idx.tolist())
    print(f"n={n:3d}: certified {cert_ok:2d}/40, recovered {found:2d}/40")

# the certificate is only sufficient: short designs often recover
# the support even when mu exceeds the bound
