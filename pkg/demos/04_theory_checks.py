"""
Error bound and adjoint sensitivities
=====================================

Two numerical checks of the theory.  First, for -u'' = f on (0, 1), the
H1 error of any trial function is bounded by its H^-1 residual over the
coercivity constant.  Second, the discrete adjoint of the explicit solver
returns the gradient of a terminal observable in one backward sweep.
"""
import numpy as np

from causal_pinn.diagnostics import (COERCIVITY_1D, adjoint_sensitivity, bound_check_suite,
                                     fd_observable_derivative)
from causal_pinn.model import SpaceTimeDomain, StructuralModel

checks = bound_check_suite(20)
ratios = np.array([c.lhs / c.rhs for c in checks])
print(f"coercivity alpha = {COERCIVITY_1D:.4f}")
print(f"bound holds {sum(c.passed for c in checks)}/20, lhs/rhs in [{ratios.min():.3f}, {ratios.max():.3f}]")

model = StructuralModel.from_dict({"U": 1.0, "U2": -1.0})
dom = SpaceTimeDomain(1, (0.0,), (1.0,), 1.0, (21,), 101)
ic = "0.2 + 0.5*sin(pi*x)"
for j in model.names:
    adj = adjoint_sensitivity(model, ic, dom, j)
    fd = fd_observable_derivative(model, ic, dom, j)
    print(f"d/dalpha_{j:3s} int u(x,T) dx: adjoint {adj:+.8f}  central FD {fd:+.8f}")
