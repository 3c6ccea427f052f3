"""Ground-truth fields: explicit finite differences, closed forms and the
benchmark registry.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sps

from .model import (Intervention, ModelError, SampleSet, SpaceTimeDomain, StructuralModel,
                    apply_intervention, compile_source, library_of, validate_model)
from .operators import AnalyticField, grid_points


class SolverError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class GriddedField:
    domain: SpaceTimeDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.domain.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("gridded field has non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def axes(self) -> list:
        return self.domain.axes()

    def at_time(self, n: int) -> np.ndarray:
        return self.values[..., n]


# -- spatial difference matrices ---------------------------------------------

def _interior_mask(nx) -> np.ndarray:
    m = np.ones(tuple(nx), dtype=bool)
    for k in range(len(nx)):
        idx = [slice(None)] * len(nx)
        idx[k] = 0
        m[tuple(idx)] = False
        idx[k] = -1
        m[tuple(idx)] = False
    return m.ravel()


def _axis_matrix(n, h, kind):
    if kind == 1:
        M = sps.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * h)
    else:
        M = sps.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2
    return sps.csr_matrix(M)


def difference_matrices(domain: SpaceTimeDomain) -> dict:
    """Central-difference operators on the flattened spatial grid.

    Boundary rows are zeroed: boundary nodes carry Dirichlet data and are
    never updated.
    """
    nx, hs = domain.nx, domain.dx
    eye = [sps.identity(n, format="csr") for n in nx]
    keep = sps.diags(_interior_mask(nx).astype(float))

    def along(k, kind):
        mats = [eye[i] for i in range(len(nx))]
        mats[k] = _axis_matrix(nx[k], hs[k], kind)
        out = mats[0]
        for M in mats[1:]:
            out = sps.kron(out, M, format="csr")
        return out

    D = {"DX": along(0, 1), "DXX": along(0, 2)}
    if domain.dim == 2:
        D["DY"] = along(1, 1)
        D["DYY"] = along(1, 2)
        D["DXY"] = D["DX"] @ D["DY"]
        D["LAP"] = D["DXX"] + D["DYY"]
    else:
        D["LAP"] = D["DXX"]
    return {k: sps.csr_matrix(keep @ v) for k, v in D.items()}


class FDRightHandSide:
    """``F(u, t) = sum_j alpha_j T_j[u]`` on the spatial grid, with its Jacobian."""

    def __init__(self, model: StructuralModel, domain: SpaceTimeDomain):
        problems = validate_model(model, domain)
        if problems:
            raise ModelError("; ".join(problems))
        self.model = model
        self.domain = domain
        self.D = difference_matrices(domain)
        self.interior = _interior_mask(domain.nx)
        mesh = np.meshgrid(*domain.space_axes(), indexing="ij")
        self.coords = [m.ravel() for m in mesh]

    def term(self, spec, u, t):
        i = spec.id
        if i == "U":
            return u
        if i == "U2":
            return u * u
        if i == "U3":
            return u ** 3
        if i == "ADV_X":
            return u * (self.D["DX"] @ u)
        if i == "ADV_Y":
            return u * (self.D["DY"] @ u)
        if i == "SOURCE":
            x = self.coords[0]
            y = self.coords[1] if self.domain.dim == 2 else None
            return spec.source_fn(x, np.full_like(x, t), y)
        return self.D[i] @ u

    def term_jacobian(self, spec, u):
        """d T[u] / du as a sparse matrix (zero for sources)."""
        i = spec.id
        n = u.size
        if i == "U":
            return sps.identity(n, format="csr")
        if i == "U2":
            return sps.diags(2 * u)
        if i == "U3":
            return sps.diags(3 * u * u)
        if i in ("ADV_X", "ADV_Y"):
            Dk = self.D["DX" if i == "ADV_X" else "DY"]
            return sps.diags(Dk @ u) + sps.diags(u) @ Dk
        if i == "SOURCE":
            return sps.csr_matrix((n, n))
        return self.D[i]

    def __call__(self, u, t, alpha=None):
        alpha = self.model.coeffs if alpha is None else alpha
        out = np.zeros_like(u)
        for a, spec in zip(alpha, self.model.library):
            if a != 0.0:
                out += a * self.term(spec, u, t)
        out[~self.interior] = 0.0
        return out

    def jacobian(self, u):
        n = u.size
        J = sps.csr_matrix((n, n))
        for a, spec in zip(self.model.coeffs, self.model.library):
            if a != 0.0:
                J = J + a * self.term_jacobian(spec, u)
        keep = sps.diags(self.interior.astype(float))
        return sps.csr_matrix(keep @ J @ keep)


def stability_limit(model: StructuralModel, domain: SpaceTimeDomain) -> float:
    """Largest forward-Euler step allowed by the diffusive terms (inf if none)."""
    hs = domain.dx
    axx = ayy = axy = 0.0
    for a, spec in zip(model.coeffs, model.library):
        if spec.id in ("DXX", "LAP"):
            axx += abs(a)
        if spec.id in ("DYY",) or (spec.id == "LAP" and domain.dim == 2):
            ayy += abs(a)
        if spec.id == "DXY":
            axy += abs(a)
    rate = axx / hs[0] ** 2
    if domain.dim == 2:
        rate += ayy / hs[1] ** 2 + axy / (hs[0] * hs[1])
    return np.inf if rate == 0 else 1.0 / (2.0 * rate)


def initial_values(ic, domain: SpaceTimeDomain) -> np.ndarray:
    """Evaluate an initial condition (expression, callable or array) on the grid."""
    mesh = np.meshgrid(*domain.space_axes(), indexing="ij")
    if isinstance(ic, str):
        f = compile_source(ic)
        y = mesh[1] if domain.dim == 2 else None
        v = f(mesh[0], np.zeros_like(mesh[0]), y)
    elif callable(ic):
        v = ic(*mesh)
    else:
        v = ic
    v = np.broadcast_to(np.asarray(v, dtype=float), tuple(domain.nx)).copy()
    return v


def solve_fd(model: StructuralModel, ic, domain: SpaceTimeDomain, blowup: float = 1e6) -> GriddedField:
    """Forward Euler in time, central differences in space, Dirichlet data
    frozen at the initial boundary trace."""
    rhs = FDRightHandSide(model, domain)
    dt = domain.dt
    limit = stability_limit(model, domain)
    if dt > limit:
        raise SolverError(f"explicit step dt={dt:.3e} exceeds diffusion limit {limit:.3e}; "
                          f"increase nt to at least {int(np.ceil(domain.t_end / limit)) + 1}", step=0)
    u = initial_values(ic, domain).ravel()
    out = np.empty((u.size, domain.nt))
    out[:, 0] = u
    t = domain.t_axis()
    for n in range(domain.nt - 1):
        u = u + dt * rhs(u, t[n])
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > blowup:
            raise SolverError(f"solution blew up at step {n + 1} (t={t[n + 1]:.4g})", step=n + 1)
        out[:, n + 1] = u
    return GriddedField(domain, out.reshape(tuple(domain.nx) + (domain.nt,)))


def solve_counterfactual(model: StructuralModel, iv: Intervention, ic, domain: SpaceTimeDomain) -> GriddedField:
    """Solve the intervened model with the factual initial and boundary data."""
    return solve_fd(apply_intervention(model, iv), ic, domain)


def evaluate_exact(expr: str, domain: SpaceTimeDomain) -> GriddedField:
    f = AnalyticField(expr, domain.dim)
    vals = f(grid_points(domain.axes()))
    return GriddedField(domain, vals.reshape(domain.shape))


# -- benchmarks -------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkSpec:
    """A synthetic discovery problem: truth, candidate library and sampling."""

    name: str
    true_model: StructuralModel
    library: tuple
    ic: str
    domain: SpaceTimeDomain
    n_samples: int
    noise_sigma: float = 0.0
    exact: Optional[str] = None
    colloc_shape: tuple = ()
    identifiability: str = "exact recovery"
    contaminated: Optional[dict] = None
    deviation_mode: str = "full"
    notes: str = ""

    def __post_init__(self):
        names = [s.name for s in self.library]
        for n in self.true_model.names:
            if n not in names:
                raise ModelError(f"true operator {n} missing from the candidate library")

    @property
    def true_support(self) -> list:
        return self.true_model.support()

    def embedded_truth(self) -> StructuralModel:
        """True coefficients laid out over the full candidate library."""
        coeffs = self.true_model.as_dict()
        return StructuralModel(self.library, tuple(coeffs.get(s.name, 0.0) for s in self.library))

    def colloc_axes(self) -> tuple:
        d = self.domain
        shape = self.colloc_shape or tuple(min(n, 21) for n in d.nx) + (min(d.nt, 21),)
        axes = [np.linspace(d.x_lo[k], d.x_hi[k], shape[k]) for k in range(d.dim)]
        axes.append(np.linspace(0.0, d.t_end, shape[-1]))
        return tuple(axes)


def _reaction1d(n=500, noise=0.0, kappa=1.0):
    u0 = "0.6*sin(pi*x) - 0.3*sin(2*pi*x) - 0.2"
    exact = f"({u0})*exp({kappa}*t)/(1 + ({u0})*(exp({kappa}*t) - 1))"
    return BenchmarkSpec(
        name="reaction1d",
        true_model=StructuralModel.from_dict({"U": kappa, "U2": -kappa}),
        library=library_of(["U", "U2", "DXX"]),
        ic=u0, exact=exact,
        domain=SpaceTimeDomain(1, (0.0,), (1.0,), 1.0, (101,), 101),
        n_samples=n, noise_sigma=noise, colloc_shape=(41, 21),
        notes="logistic reaction u_t = k u (1 - u), no diffusion")


def _advdiff2d(n=2500, noise=0.0):
    ax, ay, c = -0.6, -0.3, -0.5
    bump = lambda X, Y: f"exp(-(({X}) - 0.35)**2/0.045 - (({Y}) - 0.4)**2/0.06)"
    u0 = bump("x", "y")
    exact = f"exp({c}*t)*" + bump(f"x + ({ax})*t", f"y + ({ay})*t")
    return BenchmarkSpec(
        name="advdiff2d",
        true_model=StructuralModel.from_dict({"U": c, "DX": ax, "DY": ay}),
        library=library_of(["U", "DX", "DY", "LAP"]),
        ic=u0, exact=exact,
        domain=SpaceTimeDomain(2, (0.0, 0.0), (1.0, 1.0), 0.5, (41, 41), 26),
        n_samples=n, noise_sigma=noise, colloc_shape=(15, 15, 9),
        notes="linear advection with decay, diffusion as distractor")


def _orthogonal1d(n=300, noise=0.0, eps=0.1):
    lam = float(np.pi ** 2)
    return BenchmarkSpec(
        name="orthogonal1d",
        true_model=StructuralModel.from_dict({"U": -lam}),
        library=(library_of(["U"])[0], library_of(["SOURCE(sin(2*pi*x))"])[0]),
        ic="sin(pi*x)", exact="exp(-pi**2*t)*sin(pi*x)",
        domain=SpaceTimeDomain(1, (0.0,), (1.0,), 0.2, (101,), 101),
        n_samples=n, noise_sigma=noise, colloc_shape=(41, 21),
        identifiability="non-identifiable residual",
        contaminated={"U": -lam, "SOURCE(sin(2*pi*x))": eps},
        deviation_mode="mode1",
        notes="orthogonal forcing: residual differs, sin(pi x) mode does not")


def _heat1d(n=500, noise=0.0):
    return BenchmarkSpec(
        name="heat1d",
        true_model=StructuralModel.from_dict({"DXX": 1.0}),
        library=library_of(["U", "DXX"]),
        ic="sin(pi*x)", exact="exp(-pi**2*t)*sin(pi*x)",
        domain=SpaceTimeDomain(1, (0.0,), (1.0,), 0.1, (51,), 501),
        n_samples=n, noise_sigma=noise, colloc_shape=(41, 21))


def _reacdiff2d(n=2500, noise=0.0, kappa=1.0):
    return BenchmarkSpec(
        name="reacdiff2d",
        true_model=StructuralModel.from_dict({"U": kappa, "U2": -kappa}),
        library=library_of(["DXX", "DYY", "U", "U2"]),
        ic="0.5*sin(pi*x)*sin(pi*y)", exact=None,
        domain=SpaceTimeDomain(2, (0.0, 0.0), (1.0, 1.0), 1.0, (31, 31), 201),
        n_samples=n, noise_sigma=noise, colloc_shape=(16, 16, 11),
        notes="pure reaction with diffusion terms as aliasing distractors")


BENCHMARKS = {
    "reaction1d": _reaction1d,
    "advdiff2d": _advdiff2d,
    "orthogonal1d": _orthogonal1d,
    "heat1d": _heat1d,
    "reacdiff2d": _reacdiff2d,
}

SUITE_ROWS = ("reaction1d", "advdiff2d", "orthogonal1d")


def get_benchmark(name: str, **overrides) -> BenchmarkSpec:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    return BENCHMARKS[name](**overrides)


def truth_field(spec: BenchmarkSpec) -> GriddedField:
    if spec.exact is not None:
        return evaluate_exact(spec.exact, spec.domain)
    return solve_fd(spec.true_model, spec.ic, spec.domain)


def sample_field(truth: GriddedField, n: int, seed: int, noise_sigma: float = 0.0, colloc_axes=None):
    """Draw ``n`` distinct interior grid nodes and return them as a SampleSet."""
    d = truth.domain
    interior = tuple(np.arange(1, s - 1) for s in d.shape)
    sizes = [a.size for a in interior]
    total = int(np.prod(sizes))
    if n > total:
        raise ValueError(f"requested {n} samples but the grid has only {total} interior nodes")
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=n, replace=False))
    idx = np.unravel_index(flat, sizes)
    idx = tuple(interior[k][idx[k]] for k in range(len(sizes)))
    axes = d.axes()
    coords = [axes[k][idx[k]] for k in range(len(axes))]
    u = truth.values[idx]
    if noise_sigma > 0:
        u = u + rng.normal(0.0, noise_sigma, size=u.shape)
    pts = np.column_stack(coords + [u])
    if colloc_axes is None:
        colloc_axes = tuple(axes)
    return SampleSet(pts, tuple(colloc_axes), noise_sigma), idx


def generate_benchmark(spec: BenchmarkSpec, seed: int = 0):
    """Return ``(samples, truth)`` for a benchmark."""
    truth = truth_field(spec)
    samples, _ = sample_field(truth, spec.n_samples, seed, spec.noise_sigma, spec.colloc_axes())
    return samples, truth
