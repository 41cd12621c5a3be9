"""Synthetic test images, seeded Gaussian noise and image-quality metrics."""

from __future__ import annotations

import numpy as np

from .fields import ContractError, check_finite

__all__ = [
    "PATTERNS",
    "add_gaussian_noise",
    "gaussian_noise",
    "psnr",
    "rmse",
    "second_difference_mass",
    "synth_pattern",
]

PATTERNS = ("ramp", "disk", "affine", "checker", "step")


def synth_pattern(kind: str, nx: int, ny: int) -> np.ndarray:
    """Deterministic test pattern with values in ``[0, 1]``, shape ``(ny, nx)``.

    ``ramp`` rises linearly from 0 to 1 along x; ``affine`` is ``x + 2y``
    rescaled to ``[0, 1]``; ``disk`` is the indicator of a centred disk of
    radius ``min(nx, ny)/4``; ``checker`` alternates pixel by pixel; ``step``
    jumps from 0 to 1 halfway along x.
    """
    if kind not in PATTERNS:
        raise ContractError(f"unknown pattern {kind!r}; expected one of {PATTERNS}")
    if nx < 2 or ny < 2:
        raise ContractError(f"pattern needs at least 2x2 pixels, got {nx}x{ny}")
    y, x = np.mgrid[0:ny, 0:nx].astype(float)
    if kind == "ramp":
        return x / (nx - 1)
    if kind == "affine":
        return (x + 2.0 * y) / ((nx - 1) + 2.0 * (ny - 1))
    if kind == "disk":
        r = min(nx, ny) / 4.0
        d2 = (x - (nx - 1) / 2.0) ** 2 + (y - (ny - 1) / 2.0) ** 2
        return (d2 <= r * r).astype(float)
    if kind == "checker":
        return ((x + y) % 2).astype(float)
    return (x >= nx // 2).astype(float)


def gaussian_noise(shape, seed: int) -> np.ndarray:
    """Standard normal samples from a Philox counter-based stream via Box-Muller."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u = np.random.Generator(np.random.Philox(seed)).random((2, m))
    # 1 - U lies in (0, 1], keeping the logarithm finite
    rad = np.sqrt(-2.0 * np.log1p(-u[0]))
    ang = 2.0 * np.pi * u[1]
    z = np.concatenate([rad * np.cos(ang), rad * np.sin(ang)])
    return z[:n].reshape(shape)


def add_gaussian_noise(u: np.ndarray, sd: float, seed: int) -> np.ndarray:
    u = check_finite(u, "u")
    if sd < 0:
        raise ContractError(f"noise sd must be >= 0, got {sd}")
    if sd == 0:
        return u.copy()
    return u + sd * gaussian_noise(u.shape, seed)


def _same(u, ref):
    u = np.asarray(u, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if u.shape != ref.shape:
        raise ContractError(f"geometry mismatch: {u.shape} vs {ref.shape}")
    return u, ref


def rmse(u: np.ndarray, ref: np.ndarray) -> float:
    u, ref = _same(u, ref)
    return float(np.sqrt(np.mean((u - ref) ** 2)))


def psnr(u: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    u, ref = _same(u, ref)
    if not peak > 0:
        raise ContractError("peak must be positive")
    mse = float(np.mean((u - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def second_difference_mass(u: np.ndarray, spacing: float = 1.0) -> float:
    """``h^2 * sum |u_xx| + |u_yy|`` over interior pixels (three-point stencils)."""
    u = np.asarray(u, dtype=float)
    h2 = spacing * spacing
    uxx = (u[1:-1, 2:] - 2.0 * u[1:-1, 1:-1] + u[1:-1, :-2]) / h2
    uyy = (u[2:, 1:-1] - 2.0 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / h2
    return float(h2 * (np.abs(uxx).sum() + np.abs(uyy).sum()))
