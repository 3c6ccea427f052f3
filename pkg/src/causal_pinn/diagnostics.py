"""Causal metrics on fitted models and numerical checks of the theory.

Residual metrics (CSI, causal influence) are evaluated on a surrogate or any
object with a ``jets`` method.  Counterfactual deviations, causal derivatives
and adjoint sensitivities use the finite-difference solver as the solution
map, so they do not depend on how well a network was trained.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .model import Intervention, SpaceTimeDomain, StructuralModel, apply_intervention
from .operators import assemble_design, grid_points, l2_norm, quadrature_weights
from .solvers import FDRightHandSide, GriddedField, solve_fd, stability_limit
from .sparse import certify_recovery

DELTA_STAB = 1e-12
EPS_CSI = 0.05
ETA_DEV = 0.01


class DiagnosticsError(ValueError):
    pass


# -- residual based metrics -------------------------------------------------

def _terms(field, model: StructuralModel, colloc_axes):
    """Columns ``T_j[u]`` and the anchored residual on a collocation grid."""
    D = assemble_design(model, field, grid_points(colloc_axes))
    r = D.b - D.A @ model.coeffs
    return D.A, r


def causal_influence(field, model: StructuralModel, colloc_axes, j) -> float:
    """``||alpha_j T_j[u]||``: how much the residual moves when term j is dropped."""
    j = model.index(j) if isinstance(j, str) else int(j)
    A, _ = _terms(field, model, colloc_axes)
    return abs(model.coeffs[j]) * l2_norm(A[:, j], colloc_axes)


def csi(field, model: StructuralModel, colloc_axes, j, delta_stab: float = DELTA_STAB) -> float:
    """Causal sensitivity index ``||alpha_j T_j|| / (||R|| + delta_stab)``."""
    j = model.index(j) if isinstance(j, str) else int(j)
    A, r = _terms(field, model, colloc_axes)
    num = abs(model.coeffs[j]) * l2_norm(A[:, j], colloc_axes)
    return num / (l2_norm(r, colloc_axes) + delta_stab)


def residual_metrics(field, model: StructuralModel, colloc_axes, delta_stab: float = DELTA_STAB):
    """CSI and influence for every operator from one jet evaluation.

    Returns ``(csi, influence, residual_norm)``.
    """
    A, r = _terms(field, model, colloc_axes)
    rn = l2_norm(r, colloc_axes)
    infl = np.array([abs(a) * l2_norm(A[:, k], colloc_axes) for k, a in enumerate(model.coeffs)])
    return infl / (rn + delta_stab), infl, rn


# -- counterfactual deviation -------------------------------------------------

def _mode1_shape(space_axes):
    """Unit-L2 first Dirichlet mode on the spatial box, flattened."""
    shape = np.ones(1)
    for x in space_axes:
        x = np.asarray(x, dtype=float)
        lo, L = x[0], x[-1] - x[0]
        shape = np.multiply.outer(shape, np.sqrt(2.0 / L) * np.sin(np.pi * (x - lo) / L)).ravel()
    return shape


def mode1_amplitudes(values, axes) -> np.ndarray:
    """Projection of each time slice of a tensor-grid field on the first sine mode."""
    space = list(axes[:-1])
    w = quadrature_weights(space)
    v = np.asarray(values, dtype=float).reshape(-1, len(axes[-1]))
    return (w * _mode1_shape(space)) @ v


def mode1_amplitude(gf: GriddedField) -> np.ndarray:
    return mode1_amplitudes(gf.values, gf.axes)


def mode1_distance(a, b, axes) -> float:
    """L2 distance of the first-sine-mode components of two fields on ``axes``."""
    da = mode1_amplitudes(a, axes) - mode1_amplitudes(b, axes)
    return l2_norm(da, [axes[-1]])


def counterfactual_deviation(factual: GriddedField, cf: GriddedField, mode: str = "full") -> float:
    """Quadrature L2 distance of two fields over space and time.

    ``mode="mode1"`` measures only the first-sine-mode component of the
    difference, which is the part an orthogonal forcing cannot reach.
    """
    if factual.domain.shape != cf.domain.shape or factual.domain != cf.domain:
        raise DiagnosticsError(f"grid mismatch: {factual.domain.shape} vs {cf.domain.shape}")
    if mode == "full":
        return l2_norm(factual.values - cf.values, factual.axes)
    if mode == "mode1":
        return mode1_distance(factual.values, cf.values, factual.axes)
    raise DiagnosticsError(f"unknown deviation mode {mode!r}")


def stable_domain(model: StructuralModel, domain: SpaceTimeDomain, courant: float = 0.25,
                  margin: float = 0.9) -> SpaceTimeDomain:
    """Same box with enough time levels for an explicit solve of ``model``.

    The step respects the diffusion limit (times ``margin``) and keeps the
    advective Courant number below ``courant``; the number of levels is
    never reduced.
    """
    dt = domain.t_end / (domain.nt - 1)
    limit = stability_limit(model, domain) * margin
    speed = 0.0
    for a, spec in zip(model.coeffs, model.library):
        if spec.id in ("DX", "DY"):
            speed = max(speed, abs(a) / domain.dx[0 if spec.id == "DX" else 1])
    if speed > 0:
        limit = min(limit, courant / speed)
    if dt <= limit:
        return domain
    nt = int(np.ceil(domain.t_end / limit)) + 1
    return domain.with_grid(nt=nt)


def fd_deviations(model: StructuralModel, ic, domain: SpaceTimeDomain, mode: str = "full"):
    """Deviation of each zeroing intervention, plus the factual field.

    Returns ``(deltas, factual)``; operators whose coefficient is already
    zero have deviation exactly 0 without a solve.
    """
    factual = solve_fd(model, ic, domain)
    out = []
    for name, a in zip(model.names, model.coeffs):
        if a == 0.0:
            out.append(0.0)
            continue
        cf = solve_fd(apply_intervention(model, Intervention.zero(name)), ic, domain)
        out.append(counterfactual_deviation(factual, cf, mode))
    return np.array(out), factual


# -- causal derivative and adjoint --------------------------------------------

def _perturbed(model: StructuralModel, j: int, h: float) -> StructuralModel:
    a = model.coeffs.copy()
    a[j] += h
    return model.with_alpha(a)


def causal_derivative(model: StructuralModel, ic, domain: SpaceTimeDomain, j,
                      fd_step: float = 1e-4) -> GriddedField:
    """Central difference of the solution map in coefficient ``j``.

    The step is ``fd_step * max(|alpha_j|, 1)``.
    """
    j = model.index(j) if isinstance(j, str) else int(j)
    h = fd_step * max(abs(model.coeffs[j]), 1.0)
    up = solve_fd(_perturbed(model, j, h), ic, domain)
    dn = solve_fd(_perturbed(model, j, -h), ic, domain)
    return GriddedField(domain, (up.values - dn.values) / (2 * h))


def terminal_integral(gf: GriddedField) -> float:
    """Observable ``O[u] = int u(x, T) dx``."""
    w = quadrature_weights(gf.domain.space_axes())
    return float(w @ gf.values[..., -1].ravel())


def adjoint_sensitivity(model: StructuralModel, ic, domain: SpaceTimeDomain, j,
                        field: Optional[GriddedField] = None) -> float:
    """``dO/dalpha_j`` for the terminal integral, by the discrete adjoint.

    The adjoint runs backward through the explicit scheme
    ``u^{n+1} = u^n + dt F(u^n)``:

        phi^N = w,   phi^n = phi^{n+1} + dt J(u^n)^T phi^{n+1}

    and the sensitivity is ``sum_n dt <phi^{n+1}, T_j[u^n]>``.  This is the
    exact gradient of the discrete observable.
    """
    j = model.index(j) if isinstance(j, str) else int(j)
    if field is None:
        field = solve_fd(model, ic, domain)
    rhs = FDRightHandSide(model, domain)
    dt = domain.dt
    t = domain.t_axis()
    U = field.values.reshape(-1, domain.nt)
    phi = quadrature_weights(domain.space_axes()).copy()
    spec = model.library[j]
    grad = 0.0
    for n in range(domain.nt - 2, -1, -1):
        u = U[:, n]
        dF = rhs.term(spec, u, t[n])
        dF = np.where(rhs.interior, dF, 0.0)
        grad += dt * float(phi @ dF)
        phi = phi + dt * (rhs.jacobian(u).T @ phi)
    return grad


def fd_observable_derivative(model: StructuralModel, ic, domain: SpaceTimeDomain, j,
                             fd_step: float = 1e-4) -> float:
    """Central difference of the terminal integral; oracle for the adjoint."""
    j = model.index(j) if isinstance(j, str) else int(j)
    h = fd_step * max(abs(model.coeffs[j]), 1.0)
    up = terminal_integral(solve_fd(_perturbed(model, j, h), ic, domain))
    dn = terminal_integral(solve_fd(_perturbed(model, j, -h), ic, domain))
    return (up - dn) / (2 * h)


# -- residual error bound -------------------------------------------------------

COERCIVITY_1D = 1.0 / (1.0 + 1.0 / np.pi ** 2)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    residual_dual_norm: float
    coercivity: float
    passed: bool

    def as_dict(self) -> dict:
        return asdict(self)


def _p1_matrices(x):
    """Stiffness and consistent mass of P1 elements on interior nodes."""
    h = np.diff(x)
    n = x.size
    main = np.zeros(n)
    main[:-1] += 1 / h
    main[1:] += 1 / h
    K = sps.diags([main, -1 / h, -1 / h], [0, 1, -1], format="csr")
    mm = np.zeros(n)
    mm[:-1] += h / 3
    mm[1:] += h / 3
    M = sps.diags([mm, h / 6, h / 6], [0, 1, -1], format="csr")
    inner = slice(1, n - 1)
    return K[inner, inner], M[inner, inner]


def check_residual_bound(x, u, v, coercivity_alpha: float = COERCIVITY_1D, f=None,
                         rtol: float = 1e-6) -> BoundCheck:
    """Check ``||v - u||_{H1} <= ||N[v]||_{H^-1} / alpha`` for ``-u'' = f``.

    ``u`` and ``v`` are nodal values of piecewise-linear functions on ``x``
    with zero end values.  The residual functional is ``K v - M f``; when
    ``f`` is omitted the load consistent with ``u`` is used, ``M f = K u``.
    Its dual norm is the H1_0 seminorm of the Riesz representer ``w`` with
    ``K w = r``.
    """
    x, u, v = (np.asarray(a, dtype=float) for a in (x, u, v))
    if abs(u[0]) + abs(u[-1]) + abs(v[0]) + abs(v[-1]) > 1e-12:
        raise DiagnosticsError("both fields must vanish at the end points")
    K, M = _p1_matrices(x)
    ui, vi = u[1:-1], v[1:-1]
    load = K @ ui if f is None else M @ np.asarray(f, dtype=float)[1:-1]
    r = K @ vi - load
    try:
        w = spla.spsolve(sps.csc_matrix(K), r)
    except RuntimeError as exc:
        raise DiagnosticsError(f"singular Riesz solve: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise DiagnosticsError("singular Riesz solve")
    dual = float(np.sqrt(max(w @ (K @ w), 0.0)))
    e = vi - ui
    lhs = float(np.sqrt(max(e @ (M @ e) + e @ (K @ e), 0.0)))
    rhs = dual / coercivity_alpha
    return BoundCheck(lhs, rhs, dual, coercivity_alpha, bool(lhs <= rhs * (1 + rtol)))


def random_perturbation(x, rng, n_modes: int = 6, scale: float = 0.1) -> np.ndarray:
    """Smooth random function vanishing at both ends of ``x``."""
    L = x[-1] - x[0]
    k = np.arange(1, n_modes + 1)
    c = rng.normal(0.0, scale, n_modes) / k
    return np.sin(np.pi * np.outer((x - x[0]) / L, k)) @ c


def bound_check_suite(n_checks: int = 20, n_nodes: int = 201, seed: int = 0) -> list:
    """Run the bound on random perturbations of ``u = sin(pi x)``."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_nodes)
    u = np.sin(np.pi * x)
    u[[0, -1]] = 0.0
    out = []
    for _ in range(n_checks):
        v = u + random_perturbation(x, rng)
        v[[0, -1]] = 0.0
        out.append(check_residual_bound(x, u, v, f=np.pi ** 2 * np.sin(np.pi * x)))
    return out


# -- relevance report -----------------------------------------------------------

@dataclass
class OperatorRecord:
    id: str
    alpha_hat: float
    csi: float
    influence: float
    deviation: float
    relevant: bool
    misattributed: bool


@dataclass
class DiagnosticsReport:
    operators: list
    support: list
    certificate: dict = field(default_factory=dict)
    bound_checks: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    u_norm: float = 0.0
    residual_norm: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def misattributed(self) -> list:
        return [r.id for r in self.operators if r.misattributed]

    def record(self, name) -> OperatorRecord:
        for r in self.operators:
            if r.id == name:
                return r
        raise KeyError(name)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["misattributed"] = self.misattributed
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(_jsonable(self.as_dict()), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


REPORT_SCHEMA = {
    "type": "object",
    "required": ["operators", "support", "certificate", "bound_checks", "config"],
    "properties": {
        "operators": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "alpha_hat", "csi", "influence", "deviation", "relevant", "misattributed"],
                "properties": {
                    "id": {"type": "string"},
                    "alpha_hat": {"type": "number"},
                    "csi": {"type": "number", "minimum": 0},
                    "influence": {"type": "number", "minimum": 0},
                    "deviation": {"type": "number", "minimum": 0},
                    "relevant": {"type": "boolean"},
                    "misattributed": {"type": "boolean"},
                },
            },
        },
        "support": {"type": "array", "items": {"type": "string"}},
        "certificate": {"type": "object"},
        "bound_checks": {"type": "array", "items": {"type": "object"}},
        "config": {"type": "object"},
    },
}


def classify_relevance(names: Sequence[str], alpha, csi_values, influence, deviations, u_norm: float,
                       eps: float = EPS_CSI, eta: float = ETA_DEV, **extra) -> DiagnosticsReport:
    """Two-threshold relevance: ``CSI > eps`` and ``delta > eta * ||u||``.

    Terms passing the CSI test but not the deviation test are flagged as
    misattributed.
    """
    thr = eta * u_norm
    recs = []
    for n, a, c, i, d in zip(names, alpha, csi_values, influence, deviations):
        hi = bool(c > eps)
        moves = bool(d > thr)
        recs.append(OperatorRecord(str(n), float(a), float(c), float(i), float(d), hi and moves, hi and not moves))
    cfg = dict(extra.pop("config", {}))
    cfg.update(eps=eps, eta=eta)
    return DiagnosticsReport(recs, [r.id for r in recs if r.relevant], config=cfg, u_norm=float(u_norm), **extra)


def diagnose(field, model: StructuralModel, ic, domain: SpaceTimeDomain, colloc_axes,
             eps: float = EPS_CSI, eta: float = ETA_DEV, deviation_mode: str = "full",
             delta_stab: float = DELTA_STAB, certificate_sparsity: Optional[int] = None,
             n_bound_checks: int = 0, config: Optional[dict] = None) -> DiagnosticsReport:
    """All per-operator metrics for one fitted model.

    ``field`` supplies jets for the residual metrics (a trained net or an
    analytic field).  Deviations come from explicit solves of ``model`` and
    its single-term zeroings on a time grid made stable for ``model``.
    """
    csis, infl, rn = residual_metrics(field, model, colloc_axes, delta_stab)
    fd_dom = stable_domain(model, domain)
    devs, factual = fd_deviations(model, ic, fd_dom, deviation_mode)
    u_norm = l2_norm(factual.values, factual.axes)
    pts = grid_points(colloc_axes)
    D = assemble_design(model, field, pts)
    sw = np.sqrt(quadrature_weights(colloc_axes))
    s = certificate_sparsity or max(1, len(model.support()))
    try:
        cert = certify_recovery(D.A * sw[:, None], s).as_dict()
    except ValueError as exc:
        cert = {"error": str(exc)}
    checks = [b.as_dict() for b in bound_check_suite(n_bound_checks)] if n_bound_checks else []
    cfg = dict(config or {})
    cfg.update(delta_stab=delta_stab, deviation_mode=deviation_mode, fd_nt=fd_dom.nt)
    return classify_relevance(model.names, model.coeffs, csis, infl, devs, u_norm, eps, eta,
                              certificate=cert, bound_checks=checks, residual_norm=rn, config=cfg)
