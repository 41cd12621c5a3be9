"""First-order primal-dual iteration for ``0.5*||K u - f||^2 + R(u)``.

``R`` is one of three convex regularizers built on the corner-variant cell
operators (every cell carries four gradient variants, each weighted 1/4):

* ``tgv2``    -- ``min_w  alpha1*||D u - w|| + alpha0*||E w||``
* ``tv``      -- ``lam*||D u||``
* ``infconv`` -- ``min_v  a*||D (u - v)|| + b*||H v||`` with ``H = E o D``

The data term is always dualized, so denoising (``K = I``) and deblurring share
one loop. Internally everything is computed in pixel units; energies are
multiplied by ``h**2`` on the way out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .fields import (
    ContractError,
    GridGeometry,
    norm_21_sym,
    norm_21_vec,
)
from .operators import (
    LinearOperator,
    div_cells,
    estimate_operator_norm,
    grad_cells,
    hess_cells,
    hess_cells_adjoint,
    sym_div_cells,
    sym_grad_cells,
)
from .proximal import proj_ball_sym, proj_ball_vec, prox_data_dual

log = logging.getLogger(__name__)

__all__ = [
    "RegParams",
    "Regularizer",
    "SaddleProblem",
    "SolveReport",
    "SolverConfig",
    "SolverDivergence",
    "SolverState",
    "cp_iterate",
    "cp_solve",
    "default_step_ratio",
    "initial_state",
    "optimality_residuals",
    "primal_energy",
    "resolve_steps",
]

# every corner variant is a quadrature rule with weight 1/4
VARIANT_WEIGHT = 0.25
STEP_SAFETY = 1.02
# default tau/sigma: (STEP_SCALE_DENOISE * rms(f))**2 when K = I, otherwise
# (scale * rms / dual scale)**2 with the scales below
STEP_SCALE_DENOISE = 0.1
STEP_SCALE_BLUR = 0.035
STEP_SCALE_FIXED = 0.017


class SolverDivergence(RuntimeError):
    """A non-finite value appeared; usually the step sizes are too large."""

    def __init__(self, variable: str, iteration: int):
        super().__init__(f"non-finite values in {variable!r} at iteration {iteration}")
        self.variable = variable
        self.iteration = iteration


@dataclass(frozen=True)
class RegParams:
    """TGV weights: ``alpha1`` on the first-order term, ``alpha0`` on the second."""

    alpha0: float
    alpha1: float

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.alpha1 > 0):
            raise ContractError(f"alpha0 and alpha1 must be positive, got {self.alpha0}, {self.alpha1}")

    @classmethod
    def from_lambda(cls, lam: float) -> "RegParams":
        return cls(2.0 * lam, lam)

    def scaled(self, c: float) -> "RegParams":
        return RegParams(c * self.alpha0, c * self.alpha1)


@dataclass(frozen=True)
class Regularizer:
    kind: str
    first: float
    second: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("tgv2", "tv", "infconv"):
            raise ContractError(f"unknown regularizer {self.kind!r}")
        if not self.first > 0:
            raise ContractError("regularization weights must be positive")
        if self.kind != "tv" and not (self.second is not None and self.second > 0):
            raise ContractError("regularization weights must be positive")

    @classmethod
    def tgv2(cls, params: RegParams) -> "Regularizer":
        return cls("tgv2", params.alpha1, params.alpha0)

    @property
    def has_aux(self) -> bool:
        return self.kind != "tv"

    @property
    def has_second(self) -> bool:
        return self.kind != "tv"

    def aux_shape(self, shape):
        ny, nx = shape
        if self.kind == "tgv2":
            return (2, ny - 1, nx - 1)
        if self.kind == "infconv":
            return (ny, nx)
        return None

    def dual_shapes(self, shape):
        ny, nx = shape
        p = (4, 2, max(ny - 1, 0), max(nx - 1, 0))
        q = (4, 3, max(ny - 2, 0), max(nx - 2, 0)) if self.has_second else None
        return p, q

    def forward(self, u, z, h):
        """Return ``(P, Q)``: the arguments of the first- and second-order norms."""
        if self.kind == "tgv2":
            return grad_cells(u, h) - z[None], sym_grad_cells(z, h)
        if self.kind == "tv":
            return grad_cells(u, h), None
        return grad_cells(u - z, h), hess_cells(z, h)

    def adjoint(self, p, q, h):
        """Weighted adjoint of :meth:`forward`; returns ``(grad_u, grad_z)``."""
        c = VARIANT_WEIGHT
        gu = -c * div_cells(p, h)
        if self.kind == "tgv2":
            return gu, -c * (p.sum(axis=0) + sym_div_cells(q, h))
        if self.kind == "tv":
            return gu, None
        return gu, -gu + c * hess_cells_adjoint(q, h)

    def energy(self, P, Q, h) -> float:
        e = self.first * VARIANT_WEIGHT * norm_21_vec(P, h)
        if Q is not None:
            e += self.second * VARIANT_WEIGHT * norm_21_sym(Q, h)
        return e

    def project(self, p, q):
        p = proj_ball_vec(p, self.first)
        if q is not None:
            q = proj_ball_sym(q, self.second)
        return p, q


@dataclass(frozen=True, eq=False)
class SaddleProblem:
    """One instance of the min-max problem.

    ``data``/``forward`` may both be ``None``: there is then no data term and
    ``fixed_u`` must be given; only the auxiliary field is optimized (this is
    how the regularizer value itself is evaluated). ``u0`` is the starting
    image (zero when omitted).
    """

    regularizer: Regularizer
    geometry: GridGeometry
    data: Optional[np.ndarray] = None
    forward: Optional[LinearOperator] = None
    fixed_u: Optional[np.ndarray] = None
    u0: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.data is None) != (self.forward is None):
            raise ContractError("data and forward operator must be given together")
        if self.forward is not None:
            if tuple(self.forward.domain_shape) != self.geometry.shape:
                raise ContractError("forward operator domain does not match the image grid")
            if tuple(np.shape(self.data)) != tuple(self.forward.range_shape):
                raise ContractError(
                    f"data shape {np.shape(self.data)} != operator range {self.forward.range_shape}")
        elif self.fixed_u is None:
            raise ContractError("a problem without data term needs fixed_u")
        if self.fixed_u is not None and np.shape(self.fixed_u) != self.geometry.shape:
            raise ContractError("fixed_u does not match the image grid")
        if self.u0 is not None and np.shape(self.u0) != self.geometry.shape:
            raise ContractError("u0 does not match the image grid")

    @property
    def h(self) -> float:
        return self.geometry.spacing

    @property
    def u_free(self) -> bool:
        return self.fixed_u is None


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    tol: float = 1e-6
    tau: Optional[float] = None
    sigma: Optional[float] = None
    theta: float = 1.0
    norm_estimate_iters: int = 100
    seed: int = 0
    # tau/sigma for default steps; None picks a ratio from the data and weights
    step_ratio: Optional[float] = None

    def __post_init__(self):
        if self.max_iters < 0 or not self.tol > 0:
            raise ContractError("max_iters must be >= 0 and tol > 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ContractError("theta must lie in [0, 1]")
        if (self.tau is not None and self.tau <= 0) or (self.sigma is not None and self.sigma < 0):
            raise ContractError("step sizes must be positive")
        if self.step_ratio is not None and not self.step_ratio > 0:
            raise ContractError("step_ratio must be positive")


@dataclass
class SolverState:
    u: np.ndarray
    w: Optional[np.ndarray]
    p: np.ndarray
    q: Optional[np.ndarray]
    r: Optional[np.ndarray]
    u_bar: np.ndarray
    w_bar: Optional[np.ndarray]
    iter: int = 0
    # operator images kept so each iteration needs one forward and one adjoint
    ax: Optional[tuple] = field(default=None, repr=False)
    ax_bar: Optional[tuple] = field(default=None, repr=False)
    aty: Optional[tuple] = field(default=None, repr=False)


@dataclass
class SolveReport:
    state: SolverState
    energy_history: np.ndarray
    residual_history: np.ndarray
    termination: str
    tau: float
    sigma: float
    op_norm: float

    @property
    def u(self) -> np.ndarray:
        return self.state.u

    @property
    def iterations(self) -> int:
        return len(self.energy_history)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def final_energy(self) -> float:
        return float(self.energy_history[-1]) if len(self.energy_history) else float("nan")

    @property
    def final_residuals(self) -> tuple:
        if len(self.residual_history):
            return tuple(float(x) for x in self.residual_history[-1])
        return (float("nan"),) * 3


# ---------------------------------------------------------------------------
# stacked operator
# ---------------------------------------------------------------------------

def _apply(problem: SaddleProblem, u, z):
    P, Q = problem.regularizer.forward(u, z, problem.h)
    R = problem.forward.apply(u) if problem.forward is not None else None
    return P, Q, R


def _apply_adjoint(problem: SaddleProblem, p, q, r):
    gu, gz = problem.regularizer.adjoint(p, q, problem.h)
    if r is not None:
        gu = gu + problem.forward.adjoint(r)
    return gu, gz


def stacked_operator(problem: SaddleProblem) -> LinearOperator:
    """The linear part of ``(u, z) -> (P, Q, K u)`` on flat vectors.

    Range vectors are scaled by the square root of the dual pairing weights,
    so Euclidean norms of this operator equal the norms the step rule needs.
    """
    reg = problem.regularizer
    shape = problem.geometry.shape
    zshape = reg.aux_shape(shape)
    pshape, qshape = reg.dual_shapes(shape)
    rshape = tuple(problem.forward.range_shape) if problem.forward is not None else None
    dom = ([shape] if problem.u_free else []) + ([zshape] if zshape else [])
    rng_ = [pshape] + ([qshape] if qshape else []) + ([rshape] if rshape else [])
    sq = np.sqrt(VARIANT_WEIGHT)
    qscale = sq * np.array([1.0, 1.0, np.sqrt(2.0)]).reshape(1, 3, 1, 1)

    def split(x, shapes):
        out, i = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(x[i:i + n].reshape(s))
            i += n
        return out

    def unpack_dom(x):
        parts = split(x, dom)
        u = parts.pop(0) if problem.u_free else np.zeros(shape)
        z = parts.pop(0) if zshape else None
        return u, z

    def apply(x):
        u, z = unpack_dom(x)
        P, Q = reg.forward(u, z, problem.h)
        out = [sq * P]
        if qshape:
            out.append(qscale * Q)
        if rshape:
            out.append(problem.forward.apply(u))
        return np.concatenate([a.ravel() for a in out])

    def adjoint(y):
        parts = split(y, rng_)
        p = parts.pop(0) / sq
        q = parts.pop(0) / qscale if qshape else None
        r = parts.pop(0) if rshape else None
        gu, gz = _apply_adjoint(problem, p, q, r)
        out = ([gu] if problem.u_free else []) + ([gz] if zshape else [])
        return np.concatenate([a.ravel() for a in out])

    n_dom = sum(int(np.prod(s)) for s in dom)
    n_rng = sum(int(np.prod(s)) for s in rng_)
    return LinearOperator(apply, adjoint, (n_dom,), (n_rng,), "stacked")


def default_step_ratio(problem: SaddleProblem) -> float:
    """Empirical ``tau/sigma`` for a problem, from the data scale and weights.

    Denoising converges well with a ratio growing with the squared data
    scale. A blur has small singular values, so the image must travel far
    on little dual feedback; there the ratio grows with the squared ratio of
    data scale to dual scale, the duals being bounded by the first-order
    weight and, through the optimality conditions, by the data. The fixed
    image case (regularizer evaluation) uses the latter form with its own
    constant.
    """
    ref = problem.data if problem.data is not None else problem.fixed_u
    scale = float(np.sqrt(np.mean(np.square(ref)))) if np.size(ref) else 0.0
    if not scale > 0:
        scale = 1.0
    if problem.forward is not None and problem.forward.name == "identity":
        return (STEP_SCALE_DENOISE * scale) ** 2
    k = STEP_SCALE_BLUR if problem.data is not None else STEP_SCALE_FIXED
    dual = min(problem.regularizer.first, scale)
    return (k * scale / dual) ** 2


def resolve_steps(problem: SaddleProblem, config: SolverConfig) -> tuple[SolverConfig, float]:
    """Fill in default step sizes and enforce ``tau*sigma*L^2 <= 1``.

    A missing step is chosen so that ``tau/sigma = step_ratio`` and
    ``tau*sigma*L^2 = 1``; if only one is given the other completes the product.
    Without an explicit ``step_ratio`` the ratio comes from
    :func:`default_step_ratio`.
    """
    L = estimate_operator_norm(stacked_operator(problem), config.norm_estimate_iters, config.seed)
    L = max(L * STEP_SAFETY, 1e-12)
    ratio = config.step_ratio if config.step_ratio is not None else default_step_ratio(problem)
    c = np.sqrt(ratio)
    tau, sigma = config.tau, config.sigma
    if tau is None and sigma is None:
        tau, sigma = c / L, 1.0 / (c * L)
    elif tau is None:
        tau = 1.0 / (sigma * L * L) if sigma > 0 else c / L
    elif sigma is None:
        sigma = 1.0 / (tau * L * L)
    if tau * sigma * L * L > 1.0 + 1e-12:
        new_sigma = 1.0 / (tau * L * L)
        log.warning("step sizes violate tau*sigma*L^2 <= 1 (L=%.4g); sigma %.4g -> %.4g",
                    L, sigma, new_sigma)
        sigma = new_sigma
    return replace(config, tau=tau, sigma=sigma), L


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------

def initial_state(problem: SaddleProblem, u0=None, w0=None) -> SolverState:
    """Zero duals and auxiliary field; ``u`` from ``u0``, ``problem.u0`` or zero.

    When the image is held fixed ``u`` is ``fixed_u``.
    """
    reg = problem.regularizer
    shape = problem.geometry.shape
    if problem.fixed_u is not None:
        u = np.array(problem.fixed_u, dtype=float)
    elif u0 is not None:
        u = np.array(u0, dtype=float)
    elif problem.u0 is not None:
        u = np.array(problem.u0, dtype=float)
    else:
        u = np.zeros(shape)
    zshape = reg.aux_shape(shape)
    w = None
    if zshape:
        w = np.zeros(zshape) if w0 is None else np.array(w0, dtype=float)
    pshape, qshape = reg.dual_shapes(shape)
    r = np.zeros(problem.forward.range_shape) if problem.forward is not None else None
    return SolverState(u=u, w=w, p=np.zeros(pshape), q=np.zeros(qshape) if qshape else None,
                       r=r, u_bar=u.copy(), w_bar=None if w is None else w.copy())


def cp_iterate(state: SolverState, problem: SaddleProblem, config: SolverConfig,
               check: bool = True) -> SolverState:
    """One primal-dual step; ``config.tau`` and ``config.sigma`` must be set.

    With ``check=False`` the caller takes over detecting non-finite values.
    """
    tau, sigma, theta = config.tau, config.sigma, config.theta
    if tau is None or sigma is None:
        raise ContractError("cp_iterate needs explicit step sizes; see resolve_steps")
    reg = problem.regularizer
    Pb, Qb, Rb = state.ax_bar or _apply(problem, state.u_bar, state.w_bar)

    p = proj_ball_vec(state.p + sigma * Pb, reg.first)
    q = proj_ball_sym(state.q + sigma * Qb, reg.second) if state.q is not None else None
    r = None
    if state.r is not None:
        r = prox_data_dual(state.r, sigma, sigma * (Rb - problem.data))

    gu, gz = _apply_adjoint(problem, p, q, r)
    it = state.iter + 1
    u = state.u - tau * gu if problem.u_free else state.u
    w = state.w - tau * gz if state.w is not None else None
    new = SolverState(u=u, w=w, p=p, q=q, r=r, u_bar=u, w_bar=w, iter=it, aty=(gu, gz))
    if check:
        _check_state(new)
    u_bar = u + theta * (u - state.u) if problem.u_free else u
    w_bar = None if w is None else w + theta * (w - state.w)
    new.u_bar, new.w_bar = u_bar, w_bar
    new.ax = _apply(problem, u, w)
    new.ax_bar = _apply(problem, u_bar, w_bar) if theta != 0 else new.ax
    return new


def _check_state(state: SolverState):
    for name in ("p", "q", "r", "u", "w"):
        a = getattr(state, name)
        if a is not None and not np.all(np.isfinite(a)):
            raise SolverDivergence(name, state.iter)


def _rms(*arrays) -> float:
    n = sum(a.size for a in arrays if a is not None)
    if n == 0:
        return 0.0
    return float(np.sqrt(sum(np.vdot(a, a) for a in arrays if a is not None) / n))


def optimality_residuals(state: SolverState, problem: SaddleProblem) -> tuple[float, float, float]:
    """Root-mean-square first-order optimality residuals ``(res_u, res_w, res_dual)``.

    ``res_dual`` covers the data dual (``r = K u - f``) and the two ball
    constraints (``p = proj(p + P)``, ``q = proj(q + Q)``); all three vanish
    exactly at a saddle point and only there.
    """
    reg = problem.regularizer
    P, Q, R = state.ax or _apply(problem, state.u, state.w)
    gu, gz = state.aty or _apply_adjoint(problem, state.p, state.q, state.r)
    res_u = _rms(gu) if problem.u_free else 0.0
    res_w = _rms(gz) if gz is not None else 0.0
    pp, qq = reg.project(state.p + P, None if Q is None else state.q + Q)
    parts = [state.p - pp]
    if qq is not None:
        parts.append(state.q - qq)
    if state.r is not None:
        parts.append(state.r - (R - problem.data))
    return res_u, res_w, _rms(*parts)


def _energy(problem: SaddleProblem, ax) -> float:
    P, Q, R = ax
    h = problem.h
    e = problem.regularizer.energy(P, Q, h)
    if R is not None:
        d = R - problem.data
        e += 0.5 * h * h * float(np.vdot(d, d))
    return e


def primal_energy(u, w, problem: SaddleProblem) -> float:
    """``0.5*||K u - f||^2 + R(u; w)`` at the given auxiliary field."""
    return _energy(problem, _apply(problem, np.asarray(u, dtype=float), w))


def cp_solve(problem: SaddleProblem, config: SolverConfig = SolverConfig(),
             state: Optional[SolverState] = None,
             callback: Optional[Callable[[SolverState], None]] = None) -> SolveReport:
    """Iterate until every optimality residual is below ``config.tol``."""
    config, L = resolve_steps(problem, config)
    state = state if state is not None else initial_state(problem)
    energies, residuals = [], []
    termination = "max_iters"
    for _ in range(config.max_iters):
        state = cp_iterate(state, problem, config, check=False)
        res = optimality_residuals(state, problem)
        energy = _energy(problem, state.ax)
        if not np.isfinite(energy + sum(res)):
            # any non-finite entry shows up in these sums
            _check_state(state)
        energies.append(energy)
        residuals.append(res)
        if callback is not None:
            callback(state)
        if max(res) <= config.tol:
            termination = "converged"
            break
    log.debug("cp_solve: %s after %d iterations, residuals %s", termination, len(energies),
              residuals[-1] if residuals else None)
    return SolveReport(state=state, energy_history=np.array(energies),
                       residual_history=np.array(residuals).reshape(-1, 3),
                       termination=termination, tau=config.tau, sigma=config.sigma, op_norm=L)
