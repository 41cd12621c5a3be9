"""Pointwise projections onto the dual balls and the data-term resolvent."""

from __future__ import annotations

import numpy as np

from .fields import ContractError, pointwise_norm_sym, pointwise_norm_vec

__all__ = ["proj_ball_sym", "proj_ball_vec", "prox_data_dual"]

# projected points are pulled a few ulps inside the sphere so that their
# computed norm never exceeds the radius; this makes projection exactly
# idempotent and the output exactly feasible in floating point
_SHRINK = 1.0 + 4.0 * np.finfo(float).eps


def _check_radius(radius):
    if not radius > 0:
        raise ContractError(f"ball radius must be positive, got {radius}")


def _scale(norm, radius):
    return np.where(norm > radius, norm * (_SHRINK / radius), 1.0)


def proj_ball_vec(p: np.ndarray, radius: float) -> np.ndarray:
    """Project every pixel of a vector field onto the Euclidean ball of ``radius``."""
    _check_radius(radius)
    p = np.asarray(p, dtype=float)
    return p / _scale(pointwise_norm_vec(p), radius)[..., None, :, :]


def proj_ball_sym(q: np.ndarray, radius: float) -> np.ndarray:
    """Project every pixel of a tensor field onto the ball of the xy-doubled norm."""
    _check_radius(radius)
    q = np.asarray(q, dtype=float)
    return q / _scale(pointwise_norm_sym(q), radius)[..., None, :, :]


def prox_data_dual(r: np.ndarray, step: float, residual: np.ndarray) -> np.ndarray:
    """Resolvent of ``step`` times the conjugate of ``0.5*||K u - f||^2``.

    ``residual`` must already be ``step * (K u_bar - f)``.
    """
    r = np.asarray(r, dtype=float)
    residual = np.asarray(residual, dtype=float)
    if r.shape != residual.shape:
        raise ContractError(f"geometry mismatch: {r.shape} vs {residual.shape}")
    if step < 0:
        raise ContractError(f"step must be nonnegative, got {step}")
    return (r + residual) / (1.0 + step)
