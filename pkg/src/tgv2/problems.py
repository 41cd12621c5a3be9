"""Concrete problem instances, the TGV value evaluator and kernel checks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .fields import ContractError, GridGeometry, check_finite, pointwise_norm_vec
from .operators import ConvolutionKernel, LinearOperator, grad_cells, sym_div_cells
from .solver import (
    VARIANT_WEIGHT,
    RegParams,
    Regularizer,
    SaddleProblem,
    SolverConfig,
    cp_iterate,
    initial_state,
    optimality_residuals,
    primal_energy,
    resolve_steps,
)

__all__ = [
    "AdmissibilityError",
    "EvaluationError",
    "KernelStats",
    "TGVValue",
    "affine_projection",
    "assemble",
    "assemble_deblur_tgv2",
    "assemble_denoise_infconv",
    "assemble_denoise_tgv2",
    "assemble_denoise_tv",
    "evaluate_tgv2",
    "kernel_stats",
    "total_variation",
]

METHODS = ("tgv2", "tv", "infconv")


class AdmissibilityError(ContractError):
    """The forward operator cannot be used: it may annihilate affine images."""


class EvaluationError(RuntimeError):
    """The evaluator hit its iteration cap before certifying the requested accuracy."""

    def __init__(self, value: float, gap: float, residual: float, iterations: int):
        super().__init__(f"TGV evaluation not certified after {iterations} iterations: "
                         f"best value {value:.6g}, gap {gap:.3g}, residual {residual:.3g}")
        self.value = value
        self.gap = gap
        self.residual = residual
        self.iterations = iterations


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_denoise_tgv2(f: np.ndarray, params: RegParams, spacing: float = 1.0) -> SaddleProblem:
    f = check_finite(f, "f")
    geom = GridGeometry.of(f, spacing)
    return SaddleProblem(Regularizer.tgv2(params), geom, f, LinearOperator.identity(f.shape), u0=f)


def assemble_deblur_tgv2(f: np.ndarray, kernel: ConvolutionKernel, params: RegParams,
                         method: str = "fft") -> SaddleProblem:
    """Deblurring: ``f`` lives on the interior crop left by ``kernel``.

    ``method`` selects how the blur is applied inside the solver; the
    transform path agrees with direct summation to rounding.
    """
    f = check_finite(f, "f")
    stats = kernel_stats(kernel)
    if not stats.injective_on_affines:
        raise AdmissibilityError("kernel has zero mass; the blur does not determine affine images")
    ny, nx = f.shape
    geom = GridGeometry(nx + kernel.width - 1, ny + kernel.height - 1, kernel.spacing)
    K = LinearOperator.convolution(kernel, geom.shape, method)
    u0 = np.pad(f, (kernel.radius[0], kernel.radius[1]), mode="edge")
    return SaddleProblem(Regularizer.tgv2(params), geom, f, K, u0=u0)


def assemble_denoise_tv(f: np.ndarray, lam: float, spacing: float = 1.0) -> SaddleProblem:
    f = check_finite(f, "f")
    geom = GridGeometry.of(f, spacing)
    return SaddleProblem(Regularizer("tv", lam), geom, f, LinearOperator.identity(f.shape), u0=f)


def assemble_denoise_infconv(f: np.ndarray, a: float, b: float, spacing: float = 1.0) -> SaddleProblem:
    """``min 0.5||u - f||^2 + a||D(u - v)|| + b||E D v||`` over ``(u, v)``."""
    f = check_finite(f, "f")
    geom = GridGeometry.of(f, spacing)
    return SaddleProblem(Regularizer("infconv", a, b), geom, f, LinearOperator.identity(f.shape),
                         u0=f)


def assemble(f: np.ndarray, method: str, params: RegParams,
             kernel: Optional[ConvolutionKernel] = None, spacing: float = 1.0) -> SaddleProblem:
    """Build a problem for ``method`` in ``{"tgv2", "tv", "infconv"}``.

    TV uses ``params.alpha1`` as its weight; the infimal convolution uses
    ``alpha1`` on the first-order and ``alpha0`` on the second-order part.
    With a kernel every method becomes a deblurring problem.
    """
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}; expected one of {METHODS}")
    if kernel is not None:
        prob = assemble_deblur_tgv2(f, kernel, params)
        if method == "tv":
            return replace(prob, regularizer=Regularizer("tv", params.alpha1))
        if method == "infconv":
            return replace(prob, regularizer=Regularizer("infconv", params.alpha1, params.alpha0))
        return prob
    if method == "tgv2":
        return assemble_denoise_tgv2(f, params, spacing)
    if method == "tv":
        return assemble_denoise_tv(f, params.alpha1, spacing)
    return assemble_denoise_infconv(f, params.alpha1, params.alpha0, spacing)


# ---------------------------------------------------------------------------
# evaluator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TGVValue:
    """Certified value of the regularizer at a fixed image.

    ``value`` is attained by an explicit auxiliary field, so it is an upper
    bound; ``value - gap`` is a lower bound from a feasible dual point.
    """

    value: float
    gap: float
    residual: float
    iterations: int

    def __float__(self) -> float:
        return self.value

    @property
    def lower(self) -> float:
        return self.value - self.gap


def total_variation(u: np.ndarray, spacing: float = 1.0) -> float:
    """Cell TV: ``h^2 * sum over cells of the mean over corner variants of |D u|``."""
    u = check_finite(u, "u")
    return VARIANT_WEIGHT * spacing**2 * float(np.sum(pointwise_norm_vec(grad_cells(u, spacing))))


def _dual_bound(Du, p, q, params: RegParams, h: float) -> float:
    # move p onto the w-stationarity set sum_s p_s = -sym_div(q), then shrink
    # both duals until p is feasible again (q stays feasible since c <= 1)
    delta = (-sym_div_cells(q, h) - p.sum(axis=0)) / 4.0
    p = p + delta[None]
    pmax = float(np.max(pointwise_norm_vec(p))) if p.size else 0.0
    c = 1.0 if pmax <= params.alpha1 else params.alpha1 / pmax
    return c * VARIANT_WEIGHT * h * h * float(np.sum(Du * p))


def evaluate_tgv2(u: np.ndarray, params: RegParams, tol: float = 1e-6, spacing: float = 1.0,
                  max_iters: int = 200000, check_every: int = 10,
                  config: Optional[SolverConfig] = None) -> TGVValue:
    """Minimize the regularizer over the auxiliary field with ``u`` held fixed.

    Stops once the duality gap is at most ``tol`` (absolute). The returned
    value is the best primal value seen, with ``w = 0`` counted as the first
    candidate, so it never exceeds ``alpha1 * total_variation(u)``. The
    iteration itself starts from the variant-averaged gradient of ``u``.

    Raises
    ------
    EvaluationError
        If the gap is still above ``tol`` after ``max_iters`` iterations.
    """
    if not tol > 0:
        raise ContractError("tol must be positive")
    u = check_finite(u, "u")
    h = spacing
    geom = GridGeometry.of(u, h)
    reg = Regularizer.tgv2(params)
    problem = SaddleProblem(reg, geom, fixed_u=u)
    best = params.alpha1 * total_variation(u, h)
    if min(u.shape) < 2:
        return TGVValue(0.0, 0.0, 0.0, 0)
    base = config if config is not None else SolverConfig(max_iters=max_iters, tol=tol)
    config, _ = resolve_steps(problem, base)
    Du = grad_cells(u, h)
    # start from the variant-averaged gradient, which is exact for affine u
    w0 = Du.mean(axis=0)
    best = min(best, primal_energy(u, w0, problem))
    state = initial_state(problem, w0=w0)
    lower = 0.0
    res = 0.0
    if best - lower <= tol:
        return TGVValue(best, best - lower, res, 0)
    for it in range(1, max_iters + 1):
        state = cp_iterate(state, problem, config)
        if it % check_every and it != max_iters:
            continue
        P, Q, _ = state.ax
        best = min(best, reg.energy(P, Q, h))
        lower = max(lower, _dual_bound(Du, state.p, state.q, params, h))
        if best - lower <= tol:
            res = max(optimality_residuals(state, problem))
            return TGVValue(best, best - lower, res, it)
    res = max(optimality_residuals(state, problem))
    raise EvaluationError(best, best - lower, res, max_iters)


# ---------------------------------------------------------------------------
# affine projection and kernels
# ---------------------------------------------------------------------------

def affine_projection(u: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Least-squares fit ``a1*x + a2*y + b`` over pixel centres ``x = j*h``, ``y = i*h``."""
    u = check_finite(u, "u")
    ny, nx = u.shape
    if u.size == 1:
        return u.copy()
    y, x = np.mgrid[0:ny, 0:nx] * float(spacing)
    A = np.column_stack([np.ones(u.size), x.ravel(), y.ravel()])
    coef, *_ = np.linalg.lstsq(A, u.ravel(), rcond=None)
    return (A @ coef).reshape(u.shape)


@dataclass(frozen=True)
class KernelStats:
    kbar: float
    m: tuple
    injective_on_affines: bool


def kernel_stats(k: ConvolutionKernel) -> KernelStats:
    """Mass ``kbar`` and first moments ``m = (m_x, m_y)`` of a kernel.

    Offsets are measured from the centre tap, ``x`` along columns and ``y``
    along rows. A kernel with nonzero mass maps no nonzero affine image to 0;
    a mass within rounding error of the weights is treated as zero.
    """
    w = k.weights
    h = k.spacing
    a = h * h
    oy, ox = np.mgrid[-k.radius[0]:k.radius[0] + 1, -k.radius[1]:k.radius[1] + 1] * h
    kbar = float(np.sum(w) * a)
    m = (float(np.sum(ox * w) * a), float(np.sum(oy * w) * a))
    # a mass at rounding level of the weights counts as zero
    floor = 8.0 * w.size * np.finfo(float).eps * float(np.sum(np.abs(w)) * a)
    return KernelStats(kbar, m, abs(kbar) > floor)
