"""l1-regularised coefficient estimation on a fixed design matrix.

The problem solved throughout is

    min_a  ||b - A a||_2^2 + lam * ||a||_1

by ISTA with step 1/L, L the top eigenvalue of A^T A.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import CoefficientEstimate
from .operators import mutual_coherence


class SparseError(ArithmeticError):
    pass


def soft_threshold(x, lam):
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


@dataclass
class LassoProblem:
    A: np.ndarray
    b: np.ndarray
    lam: float = 0.01
    max_iter: int = 10000
    tol: float = 1e-10

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.A.shape[0] != self.b.size:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {self.b.size} entries")
        if self.A.size == 0:
            raise ValueError("empty design matrix")

    def objective(self, a) -> float:
        r = self.b - self.A @ a
        return float(r @ r + self.lam * np.sum(np.abs(a)))


def power_iteration(M: np.ndarray, n_iter: int = 100) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    v = np.ones(M.shape[0]) / np.sqrt(M.shape[0])
    lam = 0.0
    for _ in range(n_iter):
        w = M @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        lam = float(v @ M @ v)
    return lam


@dataclass
class IstaResult:
    estimate: CoefficientEstimate
    objective: list
    n_iter: int
    converged: bool


def ista_solve(p: LassoProblem, alpha0=None, prune_tol: float = 1e-3,
               names: Sequence[str] = (), history: bool = False):
    """Proximal gradient descent for :class:`LassoProblem`.

    Returns the coefficient estimate, or an :class:`IstaResult` when
    ``history`` is set (objective recorded at every iterate).
    """
    A, b = p.A, p.b
    AtA = A.T @ A
    Atb = A.T @ b
    L = power_iteration(AtA, 100)
    m = A.shape[1]
    a = np.zeros(m) if alpha0 is None else np.asarray(alpha0, dtype=float).copy()
    if L == 0.0:
        a = np.zeros(m)
        est = CoefficientEstimate(a, prune_tol, tuple(names))
        return IstaResult(est, [p.objective(a)], 0, True) if history else est
    step = 1.0 / L
    # halved threshold: the squared loss carries no 1/2 factor
    thresh = 0.5 * p.lam * step
    objs = [p.objective(a)] if history else []
    converged = False
    it = 0
    for it in range(1, p.max_iter + 1):
        a_new = soft_threshold(a - step * (AtA @ a - Atb), thresh)
        if not np.all(np.isfinite(a_new)):
            raise SparseError(f"ISTA iterate became non-finite at iteration {it}; rescale the design matrix")
        delta = np.max(np.abs(a_new - a))
        a = a_new
        if history:
            objs.append(p.objective(a))
        if delta < p.tol:
            converged = True
            break
    est = CoefficientEstimate(a, prune_tol, tuple(names))
    if history:
        return IstaResult(est, objs, it, converged)
    return est


def lambda_max(A, b) -> float:
    """Smallest lambda whose solution is identically zero."""
    return float(2.0 * np.max(np.abs(np.asarray(A).T @ np.asarray(b))))


@dataclass
class SweepResult:
    lambdas: np.ndarray
    estimates: list
    rel_residuals: np.ndarray
    chosen: int

    @property
    def best(self) -> CoefficientEstimate:
        return self.estimates[self.chosen]

    def supports(self) -> list:
        return [e.support for e in self.estimates]


def lambda_sweep(A, b, n: int = 10, ratio: float = 1e-4, slack: float = 0.05,
                 prune_tol: float = 1e-3, names: Sequence[str] = (), lambdas=None,
                 max_iter: int = 20000, tol: float = 1e-12) -> SweepResult:
    """Solve on a log grid of lambdas and keep the sparsest acceptable fit.

    A fit is acceptable when its relative residual ||b - A a|| / ||b|| is
    within ``slack`` of the unregularised one.  Ties in support size go to
    the smaller residual.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    bnorm = max(np.linalg.norm(b), np.finfo(float).tiny)
    if lambdas is None:
        lmax = lambda_max(A, b)
        lambdas = np.geomspace(lmax * ratio, lmax, n) if lmax > 0 else np.zeros(1)
    lambdas = np.asarray(lambdas, dtype=float)
    a0, *_ = np.linalg.lstsq(A, b, rcond=None)
    r0 = np.linalg.norm(b - A @ a0) / bnorm
    ests, rels = [], []
    warm = None
    for lam in lambdas[::-1]:
        est = ista_solve(LassoProblem(A, b, lam, max_iter, tol), alpha0=warm, prune_tol=prune_tol, names=names)
        warm = est.coeffs
        ests.append(est)
        rels.append(np.linalg.norm(b - A @ est.coeffs) / bnorm)
    ests, rels = ests[::-1], np.array(rels[::-1])
    ok = np.flatnonzero(rels <= r0 + slack)
    if ok.size == 0:
        ok = np.array([int(np.argmin(rels))])
    chosen = min(ok, key=lambda i: (len(ests[i].support), rels[i]))
    return SweepResult(lambdas, ests, rels, int(chosen))


@dataclass(frozen=True)
class RecoveryCertificate:
    mu: float
    bound: float
    rank: int
    n_cols: int
    sparsity: int
    satisfied: bool
    note: str = "coherence is the only condition checked; RIP is not certified"

    def as_dict(self) -> dict:
        return {"mu": self.mu, "bound": self.bound, "rank": self.rank, "n_cols": self.n_cols,
                "sparsity": self.sparsity, "coherence_satisfied": self.satisfied,
                "full_rank": self.rank == self.n_cols, "note": self.note}


def certify_recovery(A, s: int) -> RecoveryCertificate:
    """Mutual-coherence certificate ``mu < 1/(2s-1)`` plus a numerical rank."""
    if s < 1:
        raise ValueError("sparsity must be >= 1")
    A = np.asarray(A, dtype=float)
    mu = mutual_coherence(A)
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0])) if sv.size and sv[0] > 0 else 0
    bound = 1.0 / (2 * s - 1)
    return RecoveryCertificate(mu, bound, rank, A.shape[1], s, bool(mu < bound))
