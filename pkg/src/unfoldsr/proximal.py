"""Elementwise proximal activations and their piecewise derivatives.

``soft_threshold`` is the l1 proximal map that ISTA and LISTA apply after
each gradient step.  ``lesita_prox`` is the proximal map of
``mu * (|v| + |v - side|)``, i.e. the minimizer over v of

    0.5 * (v - u)**2 + mu * (|v| + |v - side|),

which injects a side-information signal into the iteration.  It is a
five-case piecewise-linear function of u; the case list differs for
``side >= 0`` and ``side < 0``.  Adjacent cases agree in value at their
shared boundary, so the only convention needed is which case supplies the
*derivative* there: we always take the first case whose condition holds,
scanning the cases in a fixed order (the same order used below).

All functions are pure and vectorized: scalars in, scalar out; arrays in,
array out (with NumPy broadcasting between ``u`` and ``side``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "ProxParams",
    "soft_threshold",
    "soft_threshold_grad",
    "soft_threshold_margin",
    "lesita_prox",
    "lesita_prox_grads",
    "lesita_prox_margin",
]

# Branch codes shared by value and derivative computations.
_SHIFT_UP = 0    # output u + 2*mu
_ZERO = 1        # output 0
_PASS = 2        # output u
_CLAMP = 3       # output side
_SHIFT_DOWN = 4  # output u - 2*mu


def _check_threshold(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise InvalidParameterError(f"{name} must be a finite nonnegative real, got {value!r}")
    return value


@dataclass(frozen=True)
class ProxParams:
    """A validated nonnegative scalar threshold (gamma or mu)."""

    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "threshold", _check_threshold(self.threshold, "threshold"))


def _as_result(arr, scalar_input):
    return float(arr) if scalar_input else arr


def soft_threshold(u, gamma):
    """Shrink ``u`` toward zero by ``gamma``: sign(u) * max(|u| - gamma, 0).

    Evaluated as ``u - clip(u, -gamma, gamma)``, which is the same function
    bit for bit (IEEE rounding is sign-symmetric) in two array passes.
    """
    gamma = _check_threshold(gamma, "gamma")
    scalar = np.ndim(u) == 0
    u = np.asarray(u)
    out = np.asarray(u - np.clip(u, -gamma, gamma))
    return _as_result(out, scalar)


def soft_threshold_grad(u, gamma):
    """Piecewise derivatives (d/du, d/dgamma) of ``soft_threshold``.

    Inside the dead zone (|u| <= gamma, boundary included) both are zero;
    outside, d/du = 1 and d/dgamma = -sign(u).
    """
    gamma = _check_threshold(gamma, "gamma")
    scalar = np.ndim(u) == 0
    u = np.asarray(u)
    dtype = u.dtype if u.dtype.kind == "f" else np.float64
    d_du = (np.abs(u) > gamma).astype(dtype)
    d_dgamma = -np.sign(u) * d_du
    return _as_result(d_du, scalar), _as_result(d_dgamma, scalar)


def soft_threshold_margin(u, gamma):
    """Smallest distance of any entry of ``u`` to the shrinkage kink |u| = gamma."""
    gamma = _check_threshold(gamma, "gamma")
    return float(np.min(np.abs(np.abs(np.asarray(u)) - gamma)))


# Case-position -> semantic branch code, one row per sign of ``side``.
_POS_CODES = np.array([_SHIFT_UP, _ZERO, _PASS, _CLAMP, _SHIFT_DOWN], dtype=np.int8)
_NEG_CODES = np.array([_SHIFT_UP, _CLAMP, _PASS, _ZERO, _SHIFT_DOWN], dtype=np.int8)


def _lesita_branches(u, side, mu):
    """First-matching branch code for every element, per the fixed case order.

    For side >= 0 the cases are scanned as
        u < -2mu | -2mu <= u <= 0 | 0 < u < side | side <= u <= side+2mu | rest
    and for side < 0 as
        u < side-2mu | side-2mu <= u <= side | side < u < 0 | 0 <= u <= 2mu | rest.
    The case index is the number of case thresholds that u has passed; ties
    land on the earlier case, which reproduces the first-match convention.
    """
    two_mu = 2.0 * mu
    pos = side >= 0.0
    # side >= 0: thresholds -2mu | 0 | side | side+2mu (middle two coincide
    # when side == 0, where the pass-through case is empty).
    idx_pos = (
        (u >= -two_mu).astype(np.int8)
        + (u > 0.0)
        + ((u >= side) & (u > 0.0))
        + (u > side + two_mu)
    )
    # side < 0: thresholds side-2mu | side | 0 | 2mu.
    idx_neg = (
        (u >= side - two_mu).astype(np.int8)
        + (u > side)
        + (u >= 0.0)
        + (u > two_mu)
    )
    return np.where(pos, _POS_CODES[idx_pos], _NEG_CODES[idx_neg])


def lesita_prox(u, side, mu, branches=None):
    """Proximal operator of mu * (|v| + |v - side|), evaluated at u.

    Returns the unique minimizer of 0.5*(v-u)^2 + mu*(|v| + |v-side|).
    With ``side == 0`` this reduces exactly (bit for bit) to
    ``soft_threshold(u, 2*mu)``.  ``branches`` may carry precomputed
    ``_lesita_branches`` codes so a caller that also needs the derivatives
    evaluates the case logic once.
    """
    mu = _check_threshold(mu, "mu")
    scalar = np.ndim(u) == 0 and np.ndim(side) == 0
    u, side = np.broadcast_arrays(np.asarray(u), np.asarray(side))
    if branches is None:
        branches = _lesita_branches(u, side, mu)
    two_mu = 2.0 * mu
    shift = np.asarray((branches == _SHIFT_UP).astype(u.dtype))
    shift -= branches == _SHIFT_DOWN
    out = np.asarray(u + two_mu * shift)
    np.copyto(out, 0.0, where=np.asarray(branches == _ZERO))
    np.copyto(out, np.asarray(side), where=np.asarray(branches == _CLAMP))
    return _as_result(out, scalar)


def lesita_prox_grads(u, side, mu, branches=None):
    """Branch-wise derivatives (d/du, d/dside, d/dmu) of ``lesita_prox``.

    The derivative at an exact case boundary is inherited from the branch
    ``lesita_prox`` selects there (first matching case).  Shift branches
    give (1, 0, +/-2), the pass-through branch (1, 0, 0), the zero branch
    (0, 0, 0) and the clamp-to-side branch (0, 1, 0).
    """
    mu = _check_threshold(mu, "mu")
    scalar = np.ndim(u) == 0 and np.ndim(side) == 0
    u, side = np.broadcast_arrays(np.asarray(u), np.asarray(side))
    if branches is None:
        branches = _lesita_branches(u, side, mu)
    dtype = u.dtype if u.dtype.kind == "f" else np.float64
    d_du = ((branches != _ZERO) & (branches != _CLAMP)).astype(dtype)
    d_dside = (branches == _CLAMP).astype(dtype)
    d_dmu = (branches == _SHIFT_UP).astype(dtype)
    d_dmu -= branches == _SHIFT_DOWN
    d_dmu *= 2.0
    return (_as_result(d_du, scalar), _as_result(d_dside, scalar), _as_result(d_dmu, scalar))


def lesita_prox_margin(u, side, mu):
    """Smallest distance of any (u, side) pair to a branch boundary.

    Includes the distance of ``side`` itself to zero (where the case list
    switches and the derivative w.r.t. ``side`` may jump), except for side
    entries that are exactly zero: those come from a hard-zero producer
    (e.g. the shrinkage dead zone), stay pinned at zero under small
    upstream perturbations, and are therefore not live kinks.
    """
    mu = _check_threshold(mu, "mu")
    u, side = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(side, dtype=float))
    two_mu = 2.0 * mu
    pos = side >= 0.0
    # Boundaries for side >= 0: u in {-2mu, 0, side, side+2mu}; mirrored for side < 0.
    b0 = np.where(pos, u + two_mu, u - (side - two_mu))
    b1 = np.where(pos, u, u - side)
    b2 = np.where(pos, u - side, u)
    b3 = np.where(pos, u - (side + two_mu), u - two_mu)
    side_dist = np.where(side == 0.0, np.inf, np.abs(side))
    dists = np.min(np.stack([np.abs(b0), np.abs(b1), np.abs(b2), np.abs(b3), side_dist]), axis=0)
    return float(np.min(dists))
