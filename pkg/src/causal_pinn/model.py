"""Domain types: space-time domains, operator libraries, structural models,
interventions and observation sets.

A structural model is always read in anchored form

    du/dt = sum_j alpha_j * T_j[u]

so a coefficient vector of all zeros means "nothing drives the field", never
"the equation is trivially satisfied".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

# id -> (order, is_linear, spatial axes needed)
OPERATOR_TABLE = {
    "U": (0, True, ()),
    "U2": (0, False, ()),
    "U3": (0, False, ()),
    "DX": (1, True, (0,)),
    "DY": (1, True, (1,)),
    "DXX": (2, True, (0,)),
    "DYY": (2, True, (1,)),
    "DXY": (2, True, (0, 1)),
    "LAP": (2, True, (0,)),
    "ADV_X": (1, False, (0,)),
    "ADV_Y": (1, False, (1,)),
    "SOURCE": (0, True, ()),
}

_SOURCE_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh",
                 "sinh", "cosh", "pi", "e")
}


class ModelError(ValueError):
    """Raised when a model, intervention or domain is malformed."""


def compile_source(expr: str) -> Callable:
    """Compile a closed-form source expression in ``x``, ``y``, ``t``.

    Only numpy elementary functions are visible; the result broadcasts over
    array arguments.
    """
    code = compile(expr, "<source>", "eval")
    for name in code.co_names:
        if name not in _SOURCE_NAMESPACE and name not in ("x", "y", "t"):
            raise ModelError(f"source expression {expr!r} uses unknown name {name!r}")

    def f(x, t, y=None):
        env = dict(_SOURCE_NAMESPACE)
        env.update(x=x, t=t, y=0.0 if y is None else y)
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, t).shape).copy()

    return f


@dataclass(frozen=True)
class OperatorSpec:
    id: str
    source_expr: Optional[str] = None

    def __post_init__(self):
        if self.id not in OPERATOR_TABLE:
            raise ModelError(f"unknown operator id {self.id!r}")
        if (self.id == "SOURCE") != (self.source_expr is not None):
            raise ModelError("SOURCE operators carry a source expression, all others none")
        if self.source_expr is not None:
            compile_source(self.source_expr)

    @property
    def name(self) -> str:
        if self.id == "SOURCE":
            return f"SOURCE({self.source_expr})"
        return self.id

    @property
    def order(self) -> int:
        return OPERATOR_TABLE[self.id][0]

    @property
    def is_linear(self) -> bool:
        return OPERATOR_TABLE[self.id][1]

    @property
    def axes(self) -> tuple:
        return OPERATOR_TABLE[self.id][2]

    @property
    def source_fn(self) -> Optional[Callable]:
        if self.source_expr is None:
            return None
        return compile_source(self.source_expr)

    def required_dim(self) -> int:
        return 1 + max(self.axes, default=0)

    @classmethod
    def parse(cls, name: str) -> "OperatorSpec":
        name = name.strip()
        if name.startswith("SOURCE(") and name.endswith(")"):
            return cls("SOURCE", name[len("SOURCE("):-1])
        return cls(name)


def op(name: str) -> OperatorSpec:
    return OperatorSpec.parse(name)


def source(expr: str) -> OperatorSpec:
    return OperatorSpec("SOURCE", expr)


@dataclass(frozen=True)
class SpaceTimeDomain:
    """Tensor-product domain  prod_k [x_lo[k], x_hi[k]] x [0, t_end]."""

    dim: int = 1
    x_lo: tuple = (0.0,)
    x_hi: tuple = (1.0,)
    t_end: float = 1.0
    nx: tuple = (101,)
    nt: int = 101

    def __post_init__(self):
        for name in ("x_lo", "x_hi", "nx"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        problems = self.violations()
        if problems:
            raise ModelError("; ".join(problems))

    def violations(self) -> list:
        out = []
        if self.dim not in (1, 2):
            out.append(f"spatial dim must be 1 or 2, got {self.dim}")
            return out
        if not (len(self.x_lo) == len(self.x_hi) == len(self.nx) == self.dim):
            out.append("per-axis bounds and counts must match dim")
            return out
        for k in range(self.dim):
            if not self.x_hi[k] > self.x_lo[k]:
                out.append(f"axis {k}: x_hi must exceed x_lo")
            if self.nx[k] < 3:
                out.append(f"axis {k}: grid count must be >= 3")
        if not self.t_end > 0:
            out.append("t_end must be positive")
        if self.nt < 3:
            out.append("nt must be >= 3")
        return out

    def space_axes(self) -> list:
        return [np.linspace(self.x_lo[k], self.x_hi[k], self.nx[k]) for k in range(self.dim)]

    def t_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.nt)

    def axes(self) -> list:
        return self.space_axes() + [self.t_axis()]

    @property
    def shape(self) -> tuple:
        return tuple(self.nx) + (self.nt,)

    @property
    def dx(self) -> tuple:
        return tuple((self.x_hi[k] - self.x_lo[k]) / (self.nx[k] - 1) for k in range(self.dim))

    @property
    def dt(self) -> float:
        return self.t_end / (self.nt - 1)

    def with_grid(self, nx=None, nt=None) -> "SpaceTimeDomain":
        return replace(self, nx=tuple(nx) if nx is not None else self.nx,
                       nt=nt if nt is not None else self.nt)

    def contains(self, pts: np.ndarray, atol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = np.ones(len(pts), dtype=bool)
        for k in range(self.dim):
            ok &= (pts[:, k] >= self.x_lo[k] - atol) & (pts[:, k] <= self.x_hi[k] + atol)
        ok &= (pts[:, self.dim] >= -atol) & (pts[:, self.dim] <= self.t_end + atol)
        return ok


@dataclass(frozen=True)
class StructuralModel:
    library: tuple
    alpha: tuple

    def __post_init__(self):
        object.__setattr__(self, "library", tuple(self.library))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.library) != len(self.alpha):
            raise ModelError("library and alpha lengths differ")

    @classmethod
    def from_dict(cls, coeffs: dict) -> "StructuralModel":
        """``{"DXX": 0.0, "U": 1.0}`` -> model (insertion order kept)."""
        return cls(tuple(op(k) for k in coeffs), tuple(coeffs.values()))

    @property
    def m(self) -> int:
        return len(self.library)

    @property
    def names(self) -> list:
        return [s.name for s in self.library]

    @property
    def coeffs(self) -> np.ndarray:
        return np.array(self.alpha, dtype=float)

    def index(self, name: str) -> int:
        names = self.names
        if name in names:
            return names.index(name)
        # bare "SOURCE" is allowed when the library has exactly one source
        hits = [i for i, s in enumerate(self.library) if s.id == name]
        if len(hits) == 1:
            return hits[0]
        raise ModelError(f"operator {name!r} is not in the library {names}")

    def coef(self, name: str) -> float:
        return self.alpha[self.index(name)]

    def with_alpha(self, alpha) -> "StructuralModel":
        return StructuralModel(self.library, tuple(np.asarray(alpha, dtype=float)))

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.alpha))

    def support(self, tol: float = 0.0) -> list:
        return [n for n, a in zip(self.names, self.alpha) if abs(a) > tol]

    def __str__(self):
        terms = " + ".join(f"{a:.4g}*{n}" for n, a in zip(self.names, self.alpha))
        return f"u_t = {terms}"


def validate_model(model: StructuralModel, domain: SpaceTimeDomain) -> list:
    """Return every invariant violation of ``model`` on ``domain`` (empty if valid)."""
    out = list(domain.violations())
    if model.m < 1:
        out.append("library is empty")
    seen = set()
    for spec in model.library:
        if spec.name in seen:
            out.append(f"duplicate operator id {spec.name}")
        seen.add(spec.name)
        if spec.order > 2:
            out.append(f"{spec.name}: order above 2")
        if spec.required_dim() > domain.dim:
            out.append(f"{spec.name}: needs spatial axis y but domain has dim={domain.dim}")
    for name, a in zip(model.names, model.alpha):
        if not math.isfinite(a):
            out.append(f"{name}: non-finite coefficient")
    return out


@dataclass(frozen=True)
class Intervention:
    target: str
    action: str = "zero"
    factor: float = 1.0
    replacement: Optional[OperatorSpec] = None

    def __post_init__(self):
        if self.action not in ("zero", "scale", "replace"):
            raise ModelError(f"unknown intervention action {self.action!r}")
        if self.action == "scale" and not math.isfinite(self.factor):
            raise ModelError("scale factor must be finite")
        if self.action == "replace" and self.replacement is None:
            raise ModelError("replace needs a replacement operator")

    @classmethod
    def zero(cls, target: str) -> "Intervention":
        return cls(target, "zero")

    @classmethod
    def scale(cls, target: str, c: float) -> "Intervention":
        return cls(target, "scale", float(c))

    @classmethod
    def swap(cls, target: str, new: OperatorSpec) -> "Intervention":
        return cls(target, "replace", replacement=new)


def apply_intervention(model: StructuralModel, iv: Intervention) -> StructuralModel:
    """Return a new model with ``iv`` applied; ``model`` is left untouched."""
    j = model.index(iv.target)
    alpha = list(model.alpha)
    library = list(model.library)
    if iv.action == "zero":
        alpha[j] = 0.0
    elif iv.action == "scale":
        alpha[j] = alpha[j] * iv.factor
    else:
        library[j] = iv.replacement
    return StructuralModel(tuple(library), tuple(alpha))


@dataclass(frozen=True)
class SampleSet:
    """Observations plus the tensor collocation grid used for residual quadrature.

    ``points`` has columns ``x[, y], t, u``; ``colloc_axes`` holds one 1D
    array per spatial axis followed by the time axis.
    """

    points: np.ndarray
    colloc_axes: tuple
    noise_sigma: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] < 3:
            raise ModelError("points must be an (N, dim+2) array")
        if not np.all(np.isfinite(pts)):
            raise ModelError("observation values must be finite")
        axes = tuple(np.asarray(a, dtype=float) for a in self.colloc_axes)
        if len(axes) != pts.shape[1] - 1 or any(a.size == 0 for a in axes):
            raise ModelError("collocation grid must be nonempty with one axis per input")
        if self.noise_sigma < 0:
            raise ModelError("noise_sigma must be >= 0")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colloc_axes", axes)

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 2

    @property
    def inputs(self) -> np.ndarray:
        return self.points[:, :-1]

    @property
    def values(self) -> np.ndarray:
        return self.points[:, -1]

    @property
    def colloc(self) -> np.ndarray:
        mesh = np.meshgrid(*self.colloc_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def colloc_shape(self) -> tuple:
        return tuple(a.size for a in self.colloc_axes)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class CoefficientEstimate:
    alpha_hat: tuple
    prune_tol: float = 1e-3
    names: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "alpha_hat", tuple(float(a) for a in self.alpha_hat))
        object.__setattr__(self, "names", tuple(self.names))
        if not self.prune_tol > 0:
            raise ModelError("prune_tol must be positive")

    @property
    def support(self) -> frozenset:
        return frozenset(j for j, a in enumerate(self.alpha_hat) if abs(a) > self.prune_tol)

    @property
    def support_names(self) -> list:
        return [self.names[j] for j in sorted(self.support)] if self.names else []

    @property
    def coeffs(self) -> np.ndarray:
        return np.array(self.alpha_hat)

    def pruned(self) -> np.ndarray:
        a = self.coeffs
        a[np.abs(a) <= self.prune_tol] = 0.0
        return a


def library_of(names: Sequence[str]) -> tuple:
    return tuple(op(n) for n in names)
