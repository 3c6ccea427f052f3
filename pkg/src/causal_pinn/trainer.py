"""Joint fitting of the surrogate and the operator coefficients.

Each epoch takes one full-batch Adam step on the network parameters against

    data + lambda_r * ||u_t - sum_j alpha_j T_j[u]||^2 + lambda_s * ||alpha||_1

and every ``alpha_update_period`` epochs the coefficients are refreshed by
ISTA on the design matrix assembled from the current network.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import (CoefficientEstimate, Intervention, SampleSet, StructuralModel,
                    apply_intervention)
from .operators import operator_columns, quadrature_weights
from .sparse import LassoProblem, ista_solve
from .surrogate import SurrogateNet, _channels_to_jet, _pairs_for, backward, forward, init_net

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    lambda_r: float = 1.0
    lambda_s: float = 0.01
    lr: float = 1e-3
    epochs: int = 5000
    alpha_update_period: int = 50
    warmup_epochs: int = 2000
    seed: int = 0
    conv_tol: float = 1e-6
    patience: int = 50
    hidden: tuple = (32, 32, 32)
    omega0: float = 3.0
    prune_tol: float = 1e-3
    alpha_init: float = 1.0
    ista_max_iter: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cf_epochs: int = 2000
    cf_anchor_weight: float = 10.0
    cf_warm_start: bool = True
    normalize_design: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("lambda_r", "lambda_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lr <= 0 or self.epochs < 0 or self.alpha_update_period < 1:
            raise ValueError("lr must be > 0, epochs >= 0 and alpha_update_period >= 1")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainTrace:
    names: tuple
    data: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    total: list = field(default_factory=list)
    alpha: list = field(default_factory=list)

    def record(self, parts, alpha):
        self.data.append(parts.data)
        self.residual.append(parts.residual)
        self.l1.append(parts.l1)
        self.total.append(parts.total)
        self.alpha.append(np.array(alpha, dtype=float))

    def __len__(self):
        return len(self.total)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "data", "residual", "l1", "total"] + [f"alpha[{n}]" for n in self.names])
            for e in range(len(self)):
                w.writerow([e] + [repr(float(v)) for v in (self.data[e], self.residual[e], self.l1[e], self.total[e])]
                           + [repr(float(a)) for a in self.alpha[e]])


@dataclass(frozen=True)
class LossParts:
    total: float
    data: float
    residual: float
    l1: float


class _Problem:
    """Cached geometry of one fit: data points, collocation grid, weights."""

    def __init__(self, samples: SampleSet, model: StructuralModel):
        self.samples = samples
        self.dim = samples.dim
        self.Xd = samples.inputs
        self.ud = samples.values
        self.Xc = samples.colloc
        self.w = quadrature_weights(samples.colloc_axes)
        self.pairs = _pairs_for(self.dim) if any(s.order == 2 for s in model.library) else []

    def colloc_jets(self, net):
        ch, cache = forward(net, self.Xc, pairs=self.pairs)
        return _channels_to_jet(ch, self.dim), cache

    def design(self, net, model):
        jet, _ = self.colloc_jets(net)
        return operator_columns(model, jet, self.Xc), np.asarray(jet.u_t)


def _residual_seeds(model: StructuralModel, jet, g, dim) -> dict:
    """Channel seeds for ``sum g * r`` where ``r = u_t - sum alpha_j T_j``."""
    t = dim
    seeds = {("d", t): g.copy(), "u": np.zeros_like(g)}

    def add(key, val):
        seeds[key] = seeds.get(key, 0.0) - val

    u = jet.u
    for a, spec in zip(model.coeffs, model.library):
        if a == 0.0:
            continue
        ga = g * a
        i = spec.id
        if i == "U":
            add("u", ga)
        elif i == "U2":
            add("u", ga * 2 * u)
        elif i == "U3":
            add("u", ga * 3 * u * u)
        elif i == "DX":
            add(("d", 0), ga)
        elif i == "DY":
            add(("d", 1), ga)
        elif i == "DXX":
            add(("dd", 0, 0), ga)
        elif i == "DYY":
            add(("dd", 1, 1), ga)
        elif i == "DXY":
            add(("dd", 0, 1), ga)
        elif i == "LAP":
            add(("dd", 0, 0), ga)
            if dim == 2:
                add(("dd", 1, 1), ga)
        elif i == "ADV_X":
            add("u", ga * jet.u_x)
            add(("d", 0), ga * u)
        elif i == "ADV_Y":
            add("u", ga * jet.u_y)
            add(("d", 1), ga * u)
    return seeds


def _loss_and_grad(net, model, prob: _Problem, lambda_r, lambda_s, with_data=True, grad=True,
                   anchor=None, ramp=1.0):
    if not isinstance(net, SurrogateNet):
        if grad:
            raise TypeError("parameter gradients need a SurrogateNet")
        return _loss_of_field(net, model, prob, lambda_r, lambda_s, with_data), 0.0
    theta_grad = 0.0
    data = 0.0
    if with_data and prob.Xd.shape[0]:
        ch, cache = forward(net, prob.Xd, firsts=False)
        err = ch["u"] - prob.ud
        data = float(np.mean(err * err))
        if grad:
            theta_grad = theta_grad + backward(net, cache, {"u": 2.0 * err / err.size})
    jet, cache = prob.colloc_jets(net)
    A = operator_columns(model, jet, prob.Xc)
    r = jet.u_t - A @ model.coeffs
    residual = float(np.sum(prob.w * r * r))
    if grad and lambda_r * ramp > 0:
        g = 2.0 * lambda_r * ramp * prob.w * r
        theta_grad = theta_grad + backward(net, cache, _residual_seeds(model, jet, g, prob.dim))
    extra = 0.0
    if anchor is not None:
        Xa, ua, wa = anchor
        ch, cache = forward(net, Xa, firsts=False)
        err = ch["u"] - ua
        extra = float(wa * np.mean(err * err))
        if grad:
            theta_grad = theta_grad + backward(net, cache, {"u": 2.0 * wa * err / err.size})
    l1 = float(np.sum(np.abs(model.coeffs)))
    total = data + lambda_r * residual + lambda_s * l1 + extra
    parts = LossParts(total, data, residual, l1)
    if not np.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss: data={data}, residual={residual}, l1={l1}")
    return parts, theta_grad


def _loss_of_field(field, model, prob: _Problem, lambda_r, lambda_s, with_data=True) -> LossParts:
    """Loss terms for any object with ``__call__`` and ``jets`` (no gradients)."""
    data = 0.0
    if with_data and prob.Xd.shape[0]:
        err = field(prob.Xd) - prob.ud
        data = float(np.mean(err * err))
    jet = field.jets(prob.Xc, second=bool(prob.pairs))
    r = np.asarray(jet.u_t) - operator_columns(model, jet, prob.Xc) @ model.coeffs
    residual = float(np.sum(prob.w * r * r))
    l1 = float(np.sum(np.abs(model.coeffs)))
    return LossParts(data + lambda_r * residual + lambda_s * l1, data, residual, l1)


def loss(net, model: StructuralModel, samples: SampleSet, cfg: TrainConfig) -> LossParts:
    """Data misfit, quadrature residual, l1 norm and their weighted total."""
    parts, _ = _loss_and_grad(net, model, _Problem(samples, model), cfg.lambda_r, cfg.lambda_s, grad=False)
    return parts


def loss_grad(net: SurrogateNet, model: StructuralModel, samples: SampleSet, cfg: TrainConfig) -> np.ndarray:
    """Gradient of the total loss with respect to the network parameters."""
    _, g = _loss_and_grad(net, model, _Problem(samples, model), cfg.lambda_r, cfg.lambda_s)
    return g


class Adam:
    def __init__(self, n, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps

    def step(self, theta, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def alpha_subproblem(A, b, lam, normalize=True):
    """Lasso problem for the coefficients plus the map back to ``alpha``.

    With ``normalize`` the columns of ``A`` and the target ``b`` are scaled
    to unit norm first, so ``lam`` acts on the same scale for every operator
    and every dataset.  Returns ``(problem, scale)`` with
    ``alpha = beta * scale`` for a solution ``beta``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if not normalize:
        return LassoProblem(A, b, lam), np.ones(A.shape[1])
    c = np.linalg.norm(A, axis=0)
    c = np.where(c > 0, c, 1.0)
    bn = np.linalg.norm(b)
    bn = bn if bn > 0 else 1.0
    return LassoProblem(A / c, b / bn, lam), bn / c


def refresh_alpha(net, model, prob: _Problem, cfg: TrainConfig, alpha0=None) -> CoefficientEstimate:
    """ISTA on the quadrature-weighted design matrix of the current network."""
    A, b = prob.design(net, model)
    sw = np.sqrt(prob.w)
    lam = cfg.lambda_s / cfg.lambda_r if cfg.lambda_r > 0 else 0.0
    p, scale = alpha_subproblem(A * sw[:, None], b * sw, lam, cfg.normalize_design)
    p.max_iter, p.tol = cfg.ista_max_iter, 1e-12
    beta0 = None if alpha0 is None else np.asarray(alpha0, dtype=float) / scale
    est = ista_solve(p, alpha0=beta0, prune_tol=cfg.prune_tol, names=tuple(model.names))
    return CoefficientEstimate(est.coeffs * scale, cfg.prune_tol, tuple(model.names))


def _converged(totals, tol, patience) -> bool:
    if len(totals) <= patience:
        return False
    recent = np.asarray(totals[-patience - 1:])
    rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[:-1]), 1e-300)
    return bool(np.all(rel < tol))


def _fit(samples, model, cfg, learn_alpha, net=None):
    prob = _Problem(samples, model)
    if net is None:
        net = init_net([prob.dim + 1, *cfg.hidden, 1], cfg.omega0, cfg.seed)
    theta = net.params()
    opt = Adam(theta.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    trace = TrainTrace(tuple(model.names))
    lam_s = cfg.lambda_s if learn_alpha else 0.0
    warmup = min(cfg.warmup_epochs, cfg.epochs)
    for epoch in range(cfg.epochs):
        if learn_alpha and epoch >= warmup and (epoch - warmup) % cfg.alpha_update_period == 0:
            est = refresh_alpha(net, model, prob, cfg, alpha0=model.coeffs)
            model = model.with_alpha(est.alpha_hat)
        # data-only warm-up: coefficients are meaningless on an unfitted net
        ramp = 1.0 if epoch >= warmup else 0.0
        parts, g = _loss_and_grad(net, model, prob, cfg.lambda_r, lam_s, ramp=ramp)
        trace.record(parts, model.alpha)
        if parts.total > 1e8:
            raise TrainingDivergence(f"total loss {parts.total:.3e} at epoch {epoch}", trace)
        if epoch > warmup + cfg.patience and _converged(trace.total, cfg.conv_tol, cfg.patience):
            log.info("converged at epoch %d", epoch)
            break
        theta = opt.step(theta, g)
        net = net.with_params(theta)
    return net, model, trace, prob


def train(samples: SampleSet, library, cfg: Optional[TrainConfig] = None):
    """Discover coefficients over ``library`` from ``samples``.

    Returns ``(net, estimate, trace)``.  The coefficients start at
    ``cfg.alpha_init`` and receive a last ISTA refresh against the final
    network.
    """
    cfg = cfg or TrainConfig()
    library = tuple(library)
    model = StructuralModel(library, tuple([cfg.alpha_init] * len(library)))
    net, model, trace, prob = _fit(samples, model, cfg, learn_alpha=True)
    est = refresh_alpha(net, model, prob, cfg, alpha0=model.coeffs)
    return net, est, trace


def train_baseline_pinn(samples: SampleSet, model: StructuralModel, cfg: Optional[TrainConfig] = None):
    """Standard PINN: the operator is fixed, only the network is fitted."""
    cfg = cfg or TrainConfig()
    net, _, trace, _ = _fit(samples, model, cfg, learn_alpha=False)
    return net, trace


def field_on_grid(net, axes) -> np.ndarray:
    from .operators import grid_points
    return net(grid_points(axes))


def _anchor_points(axes):
    """Initial-time slice plus the spatial boundary of a collocation grid."""
    from .operators import grid_points
    X = grid_points(axes)
    dim = len(axes) - 1
    on = np.isclose(X[:, dim], axes[-1][0])
    for k in range(dim):
        on |= np.isclose(X[:, k], axes[k][0]) | np.isclose(X[:, k], axes[k][-1])
    return X[on]


def retrain_counterfactual(net: SurrogateNet, model: StructuralModel, iv: Intervention,
                           samples: SampleSet, cfg: Optional[TrainConfig] = None):
    """Refit the surrogate under an intervened operator.

    Coefficients are frozen at their intervened values and no observations
    enter the loss.  Initial and boundary values are pinned to those of the
    factual network on the collocation grid.  Returns ``(cf_net, delta)``
    with ``delta`` the quadrature L2 distance of the two fields.
    """
    cfg = cfg or TrainConfig()
    cf_model = apply_intervention(model, iv)
    axes = samples.colloc_axes
    u_fact = field_on_grid(net, axes)
    if cf_model == model:
        return net, 0.0
    prob = _Problem(samples, cf_model)
    Xa = _anchor_points(axes)
    anchor = (Xa, net(Xa), cfg.cf_anchor_weight)
    start = net if cfg.cf_warm_start else init_net(net.widths, cfg.omega0, cfg.seed)
    theta = start.params()
    cur = start
    opt = Adam(theta.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best, best_theta = np.inf, theta
    for epoch in range(cfg.cf_epochs):
        parts, g = _loss_and_grad(cur, cf_model, prob, 1.0, 0.0, with_data=False, anchor=anchor)
        if parts.total < best:
            best, best_theta = parts.total, theta
        if parts.total > 1e8:
            raise TrainingDivergence(f"counterfactual loss {parts.total:.3e} at epoch {epoch}")
        theta = opt.step(theta, g)
        cur = cur.with_params(theta)
    cf_net = start.with_params(best_theta)
    from .operators import l2_norm
    delta = l2_norm(field_on_grid(cf_net, axes) - u_fact, axes)
    return cf_net, delta
