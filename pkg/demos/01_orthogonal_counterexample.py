"""
A residual metric that points at the wrong term
===============================================

The heat solution u = exp(-pi^2 t) sin(pi x) also satisfies u_t = -pi^2 u.
Add a small forcing eps*sin(2 pi x) to that reaction model and the
residual is exactly -eps*sin(2 pi x), so every residual-based score says
the forcing matters.  Solving the PDE with and without it says otherwise,
at least for the first sine mode.
"""
import numpy as np

from causal_pinn.diagnostics import counterfactual_deviation, diagnose, residual_metrics
from causal_pinn.model import Intervention, StructuralModel
from causal_pinn.operators import AnalyticField
from causal_pinn.solvers import get_benchmark, solve_counterfactual, solve_fd

spec = get_benchmark("orthogonal1d")
eps = spec.contaminated["SOURCE(sin(2*pi*x))"]
model = StructuralModel(spec.library, (-np.pi ** 2, eps))
print(model)

# residual on the initial slice: the whole of it is the forcing term
x = spec.colloc_axes()[0]
csi0, infl0, r0 = residual_metrics(AnalyticField(spec.exact), model, (x, np.array([0.0])))
print(f"||R(t=0)|| = {r0:.6f}   eps/sqrt(2) = {eps / np.sqrt(2):.6f}")
print(f"CSI of the forcing at t=0: {csi0[1]:.3f}")

# now intervene on the solved model
fact = solve_fd(model, spec.ic, spec.domain)
cf = solve_counterfactual(model, Intervention.zero("SOURCE"), spec.ic, spec.domain)
print(f"deviation, full field    : {counterfactual_deviation(fact, cf):.2e}")
print(f"deviation, first mode    : {counterfactual_deviation(fact, cf, 'mode1'):.2e}")

# the two-threshold rule flags exactly this pattern
report = diagnose(AnalyticField(spec.exact), model, spec.ic, spec.domain, spec.colloc_axes(),
                  deviation_mode="mode1")
for r in report.operators:
    print(f"{r.id:22s} CSI={r.csi:6.3f}  delta={r.deviation:.1e}  relevant={r.relevant}  "
          f"misattributed={r.misattributed}")
