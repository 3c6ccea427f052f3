"""Library operators on jets, design matrices, residuals and quadrature norms."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sp

from .model import OperatorSpec, StructuralModel
from .surrogate import Jet2


class OperatorError(ValueError):
    pass


def apply_operator(spec: OperatorSpec, jet: Jet2, point):
    """Evaluate ``T[u]`` from a jet.  ``point`` rows are ``x[, y], t``."""
    point = np.asarray(point, dtype=float)
    dim = point.shape[-1] - 1
    if spec.required_dim() > dim:
        raise OperatorError(f"{spec.name} needs axis y, point has {dim} spatial coordinate(s)")
    u = jet.u
    i = spec.id
    if i == "U":
        return u
    if i == "U2":
        return u * u
    if i == "U3":
        return u * u * u
    if i == "DX":
        return jet.u_x
    if i == "DY":
        return jet.u_y
    if i == "DXX":
        return jet.u_xx
    if i == "DYY":
        return jet.u_yy
    if i == "DXY":
        return jet.u_xy
    if i == "LAP":
        return jet.u_xx if dim == 1 else jet.u_xx + jet.u_yy
    if i == "ADV_X":
        return u * jet.u_x
    if i == "ADV_Y":
        return u * jet.u_y
    # SOURCE
    x, t = point[..., 0], point[..., -1]
    y = point[..., 1] if dim == 2 else None
    out = spec.source_fn(x, t, y)
    return out if np.ndim(out) else float(out)


def _needs_second(model: StructuralModel) -> bool:
    return any(s.order == 2 for s in model.library)


# -- field adapters ---------------------------------------------------------

class AnalyticField:
    """Closed-form field ``u(x[, y], t)`` given as a sympy-parsable string.

    Exposes the same ``jets`` interface as :class:`SurrogateNet`, so any
    library or residual computation can be checked against exact calculus.
    """

    def __init__(self, expr: str, dim: int = 1):
        self.expr_text = expr
        self.dim = dim
        xs = sp.symbols("x y")[:dim]
        t = sp.Symbol("t")
        self._syms = (*xs, t)
        e = sp.sympify(expr, locals={"x": xs[0], "t": t, **({"y": xs[1]} if dim == 2 else {})})
        parts = {"u": e, "u_t": sp.diff(e, t), "u_x": sp.diff(e, xs[0]), "u_xx": sp.diff(e, xs[0], 2)}
        if dim == 2:
            parts.update(u_y=sp.diff(e, xs[1]), u_yy=sp.diff(e, xs[1], 2), u_xy=sp.diff(e, xs[0], xs[1]))
        self._fns = {k: sp.lambdify(self._syms, v, "numpy") for k, v in parts.items()}

    def _eval(self, key, X):
        cols = [X[:, k] for k in range(X.shape[1])]
        return np.broadcast_to(np.asarray(self._fns[key](*cols), dtype=float), (X.shape[0],)).copy()

    def __call__(self, X):
        return self._eval("u", np.atleast_2d(np.asarray(X, dtype=float)))

    def jets(self, X, second: bool = True) -> Jet2:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        jet = Jet2(u=self._eval("u", X), u_t=self._eval("u_t", X), u_x=self._eval("u_x", X))
        if second:
            jet.u_xx = self._eval("u_xx", X)
        if self.dim == 2:
            jet.u_y = self._eval("u_y", X)
            if second:
                jet.u_yy = self._eval("u_yy", X)
                jet.u_xy = self._eval("u_xy", X)
        return jet


class GridFieldAdapter:
    """Jets of gridded values by second-order finite differences.

    Only grid nodes can be queried; interior nodes use central stencils,
    edge nodes one-sided second-order stencils.
    """

    def __init__(self, axes, values):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.dim = len(self.axes) - 1

    @staticmethod
    def _d2(v, h, axis):
        out = np.empty_like(v)
        sl = lambda a, b: tuple(slice(a, b) if k == axis else slice(None) for k in range(v.ndim))
        out[sl(1, -1)] = (v[sl(2, None)] - 2 * v[sl(1, -1)] + v[sl(None, -2)]) / h**2
        n = v.shape[axis]
        if n >= 4:
            take = lambda i: v[sl(i, i + 1 if i != -1 else None)]
            out[sl(0, 1)] = (2 * take(0) - 5 * take(1) + 4 * take(2) - take(3)) / h**2
            out[sl(n - 1, n)] = (2 * take(-1) - 5 * take(-2) + 4 * take(-3) - take(-4)) / h**2
        else:
            out[sl(0, 1)] = out[sl(1, 2)]
            out[sl(n - 1, n)] = out[sl(n - 2, n - 1)]
        return out

    @cached_property
    def _grid_jets(self) -> dict:
        v = self.values
        hs = [a[1] - a[0] for a in self.axes]
        d = {"u": v, "u_t": np.gradient(v, hs[-1], axis=self.dim, edge_order=2),
             "u_x": np.gradient(v, hs[0], axis=0, edge_order=2), "u_xx": self._d2(v, hs[0], 0)}
        if self.dim == 2:
            d["u_y"] = np.gradient(v, hs[1], axis=1, edge_order=2)
            d["u_yy"] = self._d2(v, hs[1], 1)
            d["u_xy"] = np.gradient(d["u_x"], hs[1], axis=1, edge_order=2)
        return d

    def _index(self, X):
        idx = []
        for k, a in enumerate(self.axes):
            h = a[1] - a[0]
            i = np.rint((X[:, k] - a[0]) / h).astype(int)
            if np.any(i < 0) or np.any(i >= a.size) or np.any(np.abs(a[np.clip(i, 0, a.size - 1)] - X[:, k]) > 1e-9 * max(1.0, abs(h))):
                raise OperatorError("grid adapter can only be queried at grid nodes")
            idx.append(i)
        return tuple(idx)

    def jets(self, X, second: bool = True) -> Jet2:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = self._index(X)
        g = self._grid_jets
        pick = {k: v[idx] for k, v in g.items()}
        return Jet2(**{k: pick.get(k) for k in ("u", "u_t", "u_x", "u_y", "u_xx", "u_yy", "u_xy")})

    def __call__(self, X):
        return self.jets(X).u


# -- design matrices --------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    A: np.ndarray
    b: np.ndarray
    points: np.ndarray
    names: tuple

    @property
    def shape(self):
        return self.A.shape

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.names) + ["b"])
            for row, bi in zip(self.A, self.b):
                w.writerow([repr(float(v)) for v in row] + [repr(float(bi))])


def operator_columns(model: StructuralModel, jet: Jet2, points: np.ndarray) -> np.ndarray:
    cols = []
    for spec in model.library:
        v = apply_operator(spec, jet, points)
        cols.append(np.broadcast_to(np.asarray(v, dtype=float), (points.shape[0],)))
    return np.stack(cols, axis=1)


def assemble_design(model: StructuralModel, field, points) -> DesignMatrix:
    """Rows ``T_j[u](x_i, t_i)`` with target ``b_i = du/dt(x_i, t_i)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0 or points.shape[0] == 0:
        raise OperatorError("cannot assemble a design matrix on an empty point list")
    jet = field.jets(points, second=_needs_second(model))
    A = operator_columns(model, jet, points)
    b = np.asarray(jet.u_t, dtype=float)
    bad = ~np.isfinite(A)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise OperatorError(f"non-finite value of {model.names[j]} at point {points[i].tolist()}")
    if not np.all(np.isfinite(b)):
        i = int(np.argmax(~np.isfinite(b)))
        raise OperatorError(f"non-finite time derivative at point {points[i].tolist()}")
    return DesignMatrix(A, b, points, tuple(model.names))


# -- quadrature -------------------------------------------------------------

def trapezoid_weights_1d(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    if a.size == 1:
        return np.ones(1)
    w = np.zeros(a.size)
    h = np.diff(a)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def quadrature_weights(axes) -> np.ndarray:
    """Flat tensor-product trapezoid weights (``ij`` ordering).

    A length-one axis is a slice and gets weight 1, so ``(x_axis, [t0])``
    integrates over space at the fixed time ``t0``.
    """
    w = np.ones(1)
    for a in axes:
        w = np.multiply.outer(w, trapezoid_weights_1d(a)).ravel()
    return w


def l2_norm(values, axes) -> float:
    """Trapezoid L2 norm of ``values`` sampled on the tensor grid ``axes``."""
    v = np.asarray(values, dtype=float).ravel()
    w = quadrature_weights(axes)
    if v.size != w.size:
        raise OperatorError(f"{v.size} values do not fit a grid of {w.size} nodes")
    return float(np.sqrt(np.sum(w * v * v)))


def grid_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class ResidualField:
    values: np.ndarray
    axes: tuple

    @property
    def norm(self) -> float:
        return l2_norm(self.values, self.axes)


def residual_field(model: StructuralModel, field, colloc_axes) -> ResidualField:
    """Anchored residual ``u_t - sum_j alpha_j T_j[u]`` on a tensor grid."""
    pts = grid_points(colloc_axes)
    D = assemble_design(model, field, pts)
    r = D.b - D.A @ model.coeffs
    return ResidualField(r, tuple(np.asarray(a) for a in colloc_axes))


def mutual_coherence(A) -> float:
    """Largest absolute cosine between two distinct columns of ``A``."""
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise OperatorError(f"column {int(zero[0])} of the design matrix is zero")
    if A.shape[1] < 2:
        return 0.0
    G = np.abs((A / norms).T @ (A / norms))
    np.fill_diagonal(G, 0.0)
    return float(min(G.max(), 1.0))
