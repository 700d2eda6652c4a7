"""Unfolded sparse encoders (LISTA and its side-information variant) and
the linear decoder.

Each encoder runs a fixed number of stages of one recurrence with a single
shared weight pair and a single shared scalar threshold:

    LISTA:   a^0 = phi_gamma(W z),        a^{t+1} = phi_gamma(S a^t + W z)
    LeSITA:  a^0 = xi_mu(R y; side),      a^{t+1} = xi_mu(Q a^t + R y; side)

With the analytic initialization (S or Q = I - (1/L) D^T D, W or R =
(1/L) D^T, threshold = lam/L) stage t reproduces iteration t of the
corresponding solver started from zero, so a T-stage encoder equals T
solver iterations.  Training replaces those matrices with learned ones.

Forward functions accept a single feature vector or a (n_feat, N) matrix
of column vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError
from .proximal import ProxParams, lesita_prox, soft_threshold
from .solvers import Dictionary, lipschitz

__all__ = [
    "ListaEncoderParams",
    "LesitaEncoderParams",
    "LinearDecoderParams",
    "lista_forward",
    "lesita_forward",
    "decode",
    "lista_analytic_init",
    "lesita_analytic_init",
    "lista_random_init",
    "lesita_random_init",
]

RANDOM_INIT_STD = 0.1
RANDOM_INIT_THRESHOLD = 0.15


def _check_encoder_shapes(w, s, stages):
    w = np.asarray(w, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if w.ndim != 2 or s.ndim != 2:
        raise InvalidParameterError("encoder weights must be 2-D matrices")
    n_code = w.shape[0]
    if s.shape != (n_code, n_code):
        raise InvalidParameterError(f"recurrent matrix must be ({n_code}, {n_code}), got {s.shape}")
    if int(stages) < 1:
        raise InvalidParameterError(f"stage count must be >= 1, got {stages}")
    return w, s, int(stages)


@dataclass
class ListaEncoderParams:
    """Tied LISTA weights: input map W, recurrent map S, threshold gamma."""

    W: np.ndarray
    S: np.ndarray
    gamma: float
    stages: int = 1

    def __post_init__(self):
        self.W, self.S, self.stages = _check_encoder_shapes(self.W, self.S, self.stages)
        self.gamma = ProxParams(self.gamma).threshold

    @property
    def n_code(self) -> int:
        return self.W.shape[0]

    @property
    def n_feat(self) -> int:
        return self.W.shape[1]


@dataclass
class LesitaEncoderParams:
    """Tied side-information encoder weights: input map R, recurrent map Q,
    threshold mu."""

    R: np.ndarray
    Q: np.ndarray
    mu: float
    stages: int = 1

    def __post_init__(self):
        self.R, self.Q, self.stages = _check_encoder_shapes(self.R, self.Q, self.stages)
        self.mu = ProxParams(self.mu).threshold

    @property
    def n_code(self) -> int:
        return self.R.shape[0]

    @property
    def n_feat(self) -> int:
        return self.R.shape[1]


def _check_features(z, n_feat, name):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[0] != n_feat:
        raise DimensionMismatchError(f"{name} must have leading dim {n_feat}, got shape {z.shape}")
    return z


def lista_forward(params: ListaEncoderParams, z) -> np.ndarray:
    """Run all LISTA stages on feature vector(s) ``z``."""
    z = _check_features(z, params.n_feat, "z")
    wz = params.W @ z
    alpha = soft_threshold(wz, params.gamma)
    for _ in range(params.stages - 1):
        alpha = soft_threshold(params.S @ alpha + wz, params.gamma)
    return alpha


def lesita_forward(params: LesitaEncoderParams, y_feat, side_code) -> np.ndarray:
    """Run all LeSITA stages on feature vector(s) with side information."""
    y_feat = _check_features(y_feat, params.n_feat, "y_feat")
    side_code = _check_features(side_code, params.n_code, "side_code")
    ry = params.R @ y_feat
    if side_code.shape != ry.shape:
        raise DimensionMismatchError(f"side_code shape {side_code.shape} incompatible with codes {ry.shape}")
    alpha = lesita_prox(ry, side_code, params.mu)
    for _ in range(params.stages - 1):
        alpha = lesita_prox(params.Q @ alpha + ry, side_code, params.mu)
    return alpha


@dataclass
class LinearDecoderParams:
    """Linear decoder Dx mapping codes to output patches: out = Dx @ code."""

    Dx: np.ndarray

    def __post_init__(self):
        dx = np.asarray(self.Dx, dtype=np.float64)
        if dx.ndim != 2:
            raise InvalidParameterError("decoder matrix must be 2-D")
        self.Dx = dx

    @property
    def n_out(self) -> int:
        return self.Dx.shape[0]

    @property
    def n_code(self) -> int:
        return self.Dx.shape[1]


def decode(params: LinearDecoderParams, code) -> np.ndarray:
    """Apply the linear decoder to code vector(s)."""
    code = _check_features(code, params.n_code, "code")
    return params.Dx @ code


def _analytic_pieces(dictionary: Dictionary, lam: float):
    if lam <= 0.0:
        raise InvalidParameterError(f"lambda must be positive, got {lam}")
    L = lipschitz(dictionary)
    w = dictionary.entries.T / L
    s = np.eye(dictionary.n_alpha) - (dictionary.entries.T @ dictionary.entries) / L
    return w, s, lam / L


def lista_analytic_init(dictionary: Dictionary, lam: float, stages: int) -> ListaEncoderParams:
    """W = D^T/L, S = I - D^T D / L, gamma = lam/L."""
    w, s, thr = _analytic_pieces(dictionary, lam)
    return ListaEncoderParams(W=w, S=s, gamma=thr, stages=stages)


def lesita_analytic_init(dictionary: Dictionary, lam: float, stages: int) -> LesitaEncoderParams:
    """R = D^T/L, Q = I - D^T D / L, mu = lam/L."""
    w, s, thr = _analytic_pieces(dictionary, lam)
    return LesitaEncoderParams(R=w, Q=s, mu=thr, stages=stages)


def lista_random_init(n_feat: int, n_code: int, stages: int, seed: int) -> ListaEncoderParams:
    """Seeded Gaussian(0, 0.1^2) weights with gamma = 0.15."""
    rng = np.random.default_rng(seed)
    return ListaEncoderParams(
        W=rng.normal(0.0, RANDOM_INIT_STD, size=(n_code, n_feat)),
        S=rng.normal(0.0, RANDOM_INIT_STD, size=(n_code, n_code)),
        gamma=RANDOM_INIT_THRESHOLD,
        stages=stages,
    )


def lesita_random_init(n_feat: int, n_code: int, stages: int, seed: int) -> LesitaEncoderParams:
    """Seeded Gaussian(0, 0.1^2) weights with mu = 0.15."""
    rng = np.random.default_rng(seed)
    return LesitaEncoderParams(
        R=rng.normal(0.0, RANDOM_INIT_STD, size=(n_code, n_feat)),
        Q=rng.normal(0.0, RANDOM_INIT_STD, size=(n_code, n_code)),
        mu=RANDOM_INIT_THRESHOLD,
        stages=stages,
    )
