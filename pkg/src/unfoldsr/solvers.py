"""Classical proximal-gradient solvers for the l1 and l1-l1 problems.

These are the ground-truth iterations that the unfolded encoders replicate
stage for stage:

    l1:    minimize 0.5*||y - D a||^2 + lam * ||a||_1
    l1-l1: minimize 0.5*||y - D a||^2 + lam * (||a||_1 + ||a - side||_1)

Both solvers start from a = 0, take gradient steps of size 1/L with L the
largest eigenvalue of D^T D, and apply the matching proximal map
(``soft_threshold`` with gamma = lam/L, or ``lesita_prox`` with mu = lam/L).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceWarning,
    DegenerateInputError,
    DimensionMismatchError,
    InvalidParameterError,
)
from .proximal import lesita_prox, soft_threshold

__all__ = [
    "Dictionary",
    "SparseProblem",
    "SideInfoProblem",
    "SolverReport",
    "lipschitz",
    "ista_solve",
    "l1l1_solve",
    "objective_l1",
    "objective_l1l1",
]


@dataclass(frozen=True)
class Dictionary:
    """Dense synthesis dictionary, one atom per column."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise InvalidParameterError(f"dictionary must be a 2-D matrix, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise InvalidParameterError("dictionary entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def n_y(self) -> int:
        return self.entries.shape[0]

    @property
    def n_alpha(self) -> int:
        return self.entries.shape[1]


def _check_problem_vector(y, length, name):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != length:
        raise DimensionMismatchError(f"{name} has length {y.shape[0]}, expected {length}")
    if not np.all(np.isfinite(y)):
        raise InvalidParameterError(f"{name} must be finite")
    return y


def _check_lambda(lam):
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 0.0:
        raise InvalidParameterError(f"lambda must be a positive real, got {lam!r}")
    return lam


@dataclass(frozen=True)
class SparseProblem:
    """One instance of the l1 synthesis problem."""

    dict: Dictionary
    y: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "y", _check_problem_vector(self.y, self.dict.n_y, "y"))
        object.__setattr__(self, "lam", _check_lambda(self.lam))


@dataclass(frozen=True)
class SideInfoProblem:
    """One instance of the l1-l1 problem with side information ``side``."""

    dict: Dictionary
    y: np.ndarray
    lam: float
    side: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _check_problem_vector(self.y, self.dict.n_y, "y"))
        object.__setattr__(self, "lam", _check_lambda(self.lam))
        object.__setattr__(self, "side", _check_problem_vector(self.side, self.dict.n_alpha, "side"))

    def drop_side(self) -> SparseProblem:
        """The plain l1 problem on the same data (side information ignored)."""
        return SparseProblem(self.dict, self.y, self.lam)


@dataclass
class SolverReport:
    """Solution plus the per-iteration objective trace."""

    solution: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = True


def lipschitz(dictionary: Dictionary, tol: float = 1e-9, max_iters: int = 1000) -> float:
    """Largest eigenvalue of D^T D, estimated by power iteration.

    Uses a deterministic start vector (all ones plus a tiny index ramp, so
    it is never exactly orthogonal to the leading eigenvector of the test
    matrices we care about).  The returned value is inflated by half the
    requested tolerance: a slight overestimate keeps gradient steps of size
    1/L on the safe side of the descent inequality while staying within
    ``tol`` of the true eigenvalue.
    """
    if tol <= 0.0:
        raise InvalidParameterError("tol must be positive")
    entries = dictionary.entries
    if not np.any(entries):
        raise DegenerateInputError("all-zero dictionary has no Lipschitz scale")
    gram = entries.T @ entries
    n = gram.shape[0]
    v = np.ones(n) + np.arange(n) / max(n, 1) * 1e-3
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    lam = 0.0
    converged = False
    for _ in range(max_iters):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # Start vector sits in the null space; nudge deterministically.
            v = np.zeros(n)
            v[int(np.argmax(np.sum(gram * gram, axis=0)))] = 1.0
            continue
        lam = float(v @ w)
        v = w / norm_w
        if abs(lam - lam_prev) <= 0.01 * tol * max(abs(lam), np.finfo(float).tiny):
            converged = True
            break
        lam_prev = lam
    if not converged:
        warnings.warn(
            f"power iteration did not converge in {max_iters} iterations; returning best estimate",
            ConvergenceWarning,
        )
    return lam * (1.0 + 0.5 * tol)


def objective_l1(problem: SparseProblem, alpha) -> float:
    """0.5*||y - D a||^2 + lam*||a||_1."""
    alpha = _check_problem_vector(alpha, problem.dict.n_alpha, "alpha")
    resid = problem.y - problem.dict.entries @ alpha
    return float(0.5 * resid @ resid + problem.lam * np.sum(np.abs(alpha)))


def objective_l1l1(problem: SideInfoProblem, alpha) -> float:
    """0.5*||y - D a||^2 + lam*(||a||_1 + ||a - side||_1)."""
    alpha = _check_problem_vector(alpha, problem.dict.n_alpha, "alpha")
    resid = problem.y - problem.dict.entries @ alpha
    penalty = np.sum(np.abs(alpha)) + np.sum(np.abs(alpha - problem.side))
    return float(0.5 * resid @ resid + problem.lam * penalty)


def ista_solve(problem: SparseProblem, max_iters: int = 10000, tol: float = 1e-10) -> SolverReport:
    """ISTA for the l1 problem: a <- soft_threshold(a - (1/L) D^T (D a - y), lam/L)."""
    D = problem.dict.entries
    L = lipschitz(problem.dict)
    # Fold the 1/L step into the transposed dictionary once, mirroring the
    # unfolded encoders' W = D^T / L.
    Dt_over_L = D.T / L
    gamma = problem.lam / L

    def prox_step(v):
        return soft_threshold(v, gamma)

    def objective(alpha):
        return objective_l1(problem, alpha)

    return _descend(D, problem.y, Dt_over_L, prox_step, objective, max_iters, tol)


def l1l1_solve(problem: SideInfoProblem, max_iters: int = 10000, tol: float = 1e-10) -> SolverReport:
    """Side-information iteration: a <- lesita_prox(a - (1/L) D^T (D a - y); side, lam/L)."""
    D = problem.dict.entries
    L = lipschitz(problem.dict)
    Dt_over_L = D.T / L
    mu = problem.lam / L

    def prox_step(v):
        return lesita_prox(v, problem.side, mu)

    def objective(alpha):
        return objective_l1l1(problem, alpha)

    return _descend(D, problem.y, Dt_over_L, prox_step, objective, max_iters, tol)


def _descend(D, y, Dt_over_L, prox, objective, max_iters, tol):
    if max_iters < 1:
        raise InvalidParameterError("max_iters must be at least 1")
    if tol <= 0.0:
        raise InvalidParameterError("tol must be positive")
    alpha = np.zeros(D.shape[1])
    trace = [objective(alpha)]
    iterations = 0
    converged = False
    for _ in range(max_iters):
        nxt = prox(alpha - Dt_over_L @ (D @ alpha - y))
        step_norm = float(np.linalg.norm(nxt - alpha))
        alpha = nxt
        trace.append(objective(alpha))
        iterations += 1
        rel_change = abs(trace[-2] - trace[-1]) / max(abs(trace[-2]), np.finfo(float).tiny)
        # The step-norm condition bounds the fixed-point residual of the
        # returned iterate (the map is nonexpansive), which the objective
        # plateau alone does not.
        if rel_change < tol and step_norm <= 10.0 * tol:
            converged = True
            break
    return SolverReport(solution=alpha, objective_trace=trace, iterations=iterations, converged=converged)
