"""Finite-difference and convolution operators with exact adjoints.

Two families of difference operators live here.

The *pixel* operators (``grad_forward``/``div_vec``, ``sym_grad``/``sym_div``)
act on fields sharing the image grid and use one-sided stencils with fixed
boundary rules. They are general-purpose building blocks.

The *cell* operators (``grad_cells``/``div_cells``,
``sym_grad_cells``/``sym_div_cells``) are what the regularizers are built
from. For every grid cell (the square between four pixel centres) they return
the four corner variants of the forward-difference gradient, so a function of
their pointwise norms averaged over the variants is exactly invariant under
90 degree rotations of the grid, and affine images have an exactly constant
gradient (no boundary rows). Output shapes shrink by one per application:
``(ny, nx) -> (4, 2, ny-1, nx-1)`` and ``(2, m, n) -> (4, 3, m-1, n-1)``.

Every ``div*`` is the exact negative transpose of its gradient; ``sym_div*``
is the negative adjoint under the pairing that counts ``xy`` twice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import signal

from .fields import ContractError, check_finite

__all__ = [
    "CORNERS",
    "ConvolutionKernel",
    "LinearOperator",
    "adjoint_convolve",
    "convolve",
    "div_cells",
    "div_vec",
    "estimate_operator_norm",
    "gaussian_kernel",
    "grad_cells",
    "grad_forward",
    "hess_cells",
    "hess_cells_adjoint",
    "sym_div",
    "sym_div_cells",
    "sym_grad",
    "sym_grad_cells",
]


# ---------------------------------------------------------------------------
# pixel-grid operators
# ---------------------------------------------------------------------------

def grad_forward(u: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Forward differences with a zero last row/column (Neumann)."""
    u = np.asarray(u, dtype=float)
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = (u[:, 1:] - u[:, :-1]) / h
    g[1, :-1, :] = (u[1:, :] - u[:-1, :]) / h
    return g


def div_vec(p: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Negative adjoint of :func:`grad_forward`."""
    p = np.asarray(p, dtype=float)
    px, py = p[0], p[1]
    d = np.zeros(px.shape)
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    d[:-1, :] += py[:-1, :]
    d[1:, :] -= py[:-1, :]
    return d / h


def _back_x(a, h):
    # zero value assumed left of column 0
    d = a.copy()
    d[:, 1:] -= a[:, :-1]
    return d / h


def _back_y(a, h):
    d = a.copy()
    d[1:, :] -= a[:-1, :]
    return d / h


def _back_x_t(g, h):
    d = g.copy()
    d[:, :-1] -= g[:, 1:]
    return d / h


def _back_y_t(g, h):
    d = g.copy()
    d[:-1, :] -= g[1:, :]
    return d / h


def sym_grad(w: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Symmetrized backward-difference gradient with zero padding."""
    w = np.asarray(w, dtype=float)
    w1, w2 = w[0], w[1]
    t = np.empty((3,) + w1.shape)
    t[0] = _back_x(w1, h)
    t[1] = _back_y(w2, h)
    t[2] = 0.5 * (_back_y(w1, h) + _back_x(w2, h))
    return t


def sym_div(q: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Negative adjoint of :func:`sym_grad` (xy paired with weight 2)."""
    q = np.asarray(q, dtype=float)
    v = np.empty((2,) + q.shape[1:])
    v[0] = -(_back_x_t(q[0], h) + _back_y_t(q[2], h))
    v[1] = -(_back_y_t(q[1], h) + _back_x_t(q[2], h))
    return v


# ---------------------------------------------------------------------------
# cell operators (four corner variants per cell)
# ---------------------------------------------------------------------------

# (row used for x-differences, column used for y-differences); 0 = top/left
CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _dx(a, r, h):
    if r == 0:
        return (a[..., :-1, 1:] - a[..., :-1, :-1]) / h
    return (a[..., 1:, 1:] - a[..., 1:, :-1]) / h


def _dy(a, c, h):
    if c == 0:
        return (a[..., 1:, :-1] - a[..., :-1, :-1]) / h
    return (a[..., 1:, 1:] - a[..., :-1, 1:]) / h


def _dx_t(g, r, h, out):
    g = g / h
    if r == 0:
        out[..., :-1, 1:] += g
        out[..., :-1, :-1] -= g
    else:
        out[..., 1:, 1:] += g
        out[..., 1:, :-1] -= g


def _dy_t(g, c, h, out):
    g = g / h
    if c == 0:
        out[..., 1:, :-1] += g
        out[..., :-1, :-1] -= g
    else:
        out[..., 1:, 1:] += g
        out[..., :-1, 1:] -= g


def _xdiff(a, h):
    return (a[..., :, 1:] - a[..., :, :-1]) / h


def _ydiff(a, h):
    return (a[..., 1:, :] - a[..., :-1, :]) / h


def _xdiff_t(g, h, out):
    out[..., :, 1:] += g / h
    out[..., :, :-1] -= g / h


def _ydiff_t(g, h, out):
    out[..., 1:, :] += g / h
    out[..., :-1, :] -= g / h


def grad_cells(u: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Corner-variant forward gradients, shape ``(4, 2, ny-1, nx-1)``."""
    u = np.asarray(u, dtype=float)
    ny, nx = u.shape
    g = np.empty((4, 2, max(ny - 1, 0), max(nx - 1, 0)))
    if g.size == 0:
        return g
    dx, dy = _xdiff(u, h), _ydiff(u, h)
    g[0, 0] = g[1, 0] = dx[:-1]
    g[2, 0] = g[3, 0] = dx[1:]
    g[0, 1] = g[2, 1] = dy[:, :-1]
    g[1, 1] = g[3, 1] = dy[:, 1:]
    return g


def _collect_x(a):
    # transpose of picking top rows for variants 0,1 and bottom rows for 2,3
    m, n = a.shape[-2:]
    g = np.zeros(a.shape[2:-2] + (m + 1, n))
    g[..., :-1, :] += a[0] + a[1]
    g[..., 1:, :] += a[2] + a[3]
    return g


def _collect_y(a):
    # transpose of picking left columns for variants 0,2 and right for 1,3
    m, n = a.shape[-2:]
    g = np.zeros(a.shape[2:-2] + (m, n + 1))
    g[..., :, :-1] += a[0] + a[2]
    g[..., :, 1:] += a[1] + a[3]
    return g


def div_cells(p: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Negative transpose of :func:`grad_cells` (unweighted sum over variants)."""
    p = np.asarray(p, dtype=float)
    m, n = p.shape[-2:]
    out = np.zeros((m + 1, n + 1))
    _xdiff_t(_collect_x(p[:, 0]), h, out)
    _ydiff_t(_collect_y(p[:, 1]), h, out)
    return -out


def sym_grad_cells(w: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Corner-variant symmetrized gradients of a cell field, ``(4, 3, m-1, n-1)``."""
    w = np.asarray(w, dtype=float)
    m, n = w.shape[-2:]
    t = np.empty((4, 3, max(m - 1, 0), max(n - 1, 0)))
    if t.size == 0:
        return t
    dx, dy = _xdiff(w, h), _ydiff(w, h)
    top, bot = dx[:, :-1], dx[:, 1:]
    left, right = dy[:, :, :-1], dy[:, :, 1:]
    for s, (xs, ys) in enumerate(((top, left), (top, right), (bot, left), (bot, right))):
        t[s, 0] = xs[0]
        t[s, 1] = ys[1]
        t[s, 2] = 0.5 * (ys[0] + xs[1])
    return t


def sym_div_cells(q: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Negative adjoint of :func:`sym_grad_cells`; xy counts twice in the pairing."""
    q = np.asarray(q, dtype=float)
    m, n = q.shape[-2:]
    out = np.zeros((2, m + 1, n + 1))
    # 2 (pairing weight) * 1/2 (symmetrization) = 1 on the xy channel
    _xdiff_t(_collect_x(q[:, 0]), h, out[0])
    _xdiff_t(_collect_x(q[:, 2]), h, out[1])
    _ydiff_t(_collect_y(q[:, 1]), h, out[1])
    _ydiff_t(_collect_y(q[:, 2]), h, out[0])
    return -out


def hess_cells(v: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Second differences ``sym_grad_cells(grad_cells(v))`` taken corner by corner.

    Variant ``s`` applies the corner-``s`` symmetrized gradient to the corner-``s``
    gradient only, giving shape ``(4, 3, ny-2, nx-2)``.
    """
    v = np.asarray(v, dtype=float)
    ny, nx = v.shape
    t = np.empty((4, 3, max(ny - 2, 0), max(nx - 2, 0)))
    if t.size == 0:
        return t
    for s, (r, c) in enumerate(CORNERS):
        g1, g2 = _dx(v, r, h), _dy(v, c, h)
        t[s, 0] = _dx(g1, r, h)
        t[s, 1] = _dy(g2, c, h)
        t[s, 2] = 0.5 * (_dy(g1, c, h) + _dx(g2, r, h))
    return t


def hess_cells_adjoint(q: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Transpose of :func:`hess_cells` under the xy-doubled pairing."""
    q = np.asarray(q, dtype=float)
    m, n = q.shape[-2:]
    out = np.zeros((m + 2, n + 2))
    for s, (r, c) in enumerate(CORNERS):
        g1 = np.zeros((m + 1, n + 1))
        g2 = np.zeros((m + 1, n + 1))
        _dx_t(q[s, 0], r, h, g1)
        _dy_t(q[s, 1], c, h, g2)
        _dy_t(q[s, 2], c, h, g1)
        _dx_t(q[s, 2], r, h, g2)
        _dx_t(g1, r, h, out)
        _dy_t(g2, c, h, out)
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvolutionKernel:
    """Odd-sized blur kernel centred on its middle tap.

    ``weights[a, b]`` multiplies the image value at row offset ``a - ry`` and
    column offset ``b - rx`` from the output pixel (convolution, not
    correlation).
    """

    weights: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ContractError(f"kernel must be 2-D with odd sides, got shape {w.shape}")
        check_finite(w, "kernel weights")
        if not self.spacing > 0:
            raise ContractError("kernel spacing must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def radius(self) -> tuple[int, int]:
        return (self.height // 2, self.width // 2)

    def output_shape(self, shape: tuple[int, int]) -> tuple[int, int]:
        ny, nx = shape
        return (ny - self.height + 1, nx - self.width + 1)

    @classmethod
    def delta(cls, spacing: float = 1.0, size: int = 1) -> "ConvolutionKernel":
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0 / spacing**2
        return cls(w, spacing)


def gaussian_kernel(sd: float, size: int, spacing: float = 1.0) -> ConvolutionKernel:
    """Truncated Gaussian normalized to unit mass (sum of weights * h^2 = 1)."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"kernel size must be odd and positive, got {size}")
    if not sd > 0:
        raise ContractError(f"kernel sd must be positive, got {sd}")
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sd) ** 2)
    w = np.outer(g, g)
    return ConvolutionKernel(w / (w.sum() * spacing**2), spacing)


def _check_kernel_fits(shape, k: ConvolutionKernel):
    if shape[0] < k.height or shape[1] < k.width:
        raise ContractError(f"kernel {k.height}x{k.width} larger than image {shape[0]}x{shape[1]}")


def convolve(u: np.ndarray, k: ConvolutionKernel, method: str = "direct") -> np.ndarray:
    """Blur ``u`` and keep only pixels whose full stencil lies inside the image."""
    u = np.asarray(u, dtype=float)
    _check_kernel_fits(u.shape, k)
    area = k.spacing**2
    if method == "direct":
        return signal.convolve2d(u, k.weights, mode="valid") * area
    if method == "fft":
        return signal.fftconvolve(u, k.weights, mode="valid") * area
    raise ValueError(f"unknown convolution method {method!r}")


def adjoint_convolve(r: np.ndarray, k: ConvolutionKernel, method: str = "direct") -> np.ndarray:
    """Exact adjoint of :func:`convolve`: zero-padded correlation back onto the image."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or min(r.shape) < 1:
        raise ContractError(f"adjoint_convolve expects a non-empty 2-D field, got {r.shape}")
    flipped = k.weights[::-1, ::-1]
    area = k.spacing**2
    if method == "direct":
        return signal.convolve2d(r, flipped, mode="full") * area
    if method == "fft":
        return signal.fftconvolve(r, flipped, mode="full") * area
    raise ValueError(f"unknown convolution method {method!r}")


# ---------------------------------------------------------------------------
# generic linear operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearOperator:
    """A linear map given by its action and its adjoint.

    Adjoint means Euclidean transpose unless stated otherwise by the creator.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    domain_shape: tuple
    range_shape: tuple
    name: str = "op"

    def __call__(self, x):
        return self.apply(x)

    @classmethod
    def identity(cls, shape) -> "LinearOperator":
        shape = tuple(shape)
        return cls(lambda x: np.array(x, dtype=float), lambda y: np.array(y, dtype=float),
                   shape, shape, "identity")

    @classmethod
    def convolution(cls, k: ConvolutionKernel, shape, method: str = "direct") -> "LinearOperator":
        shape = tuple(shape)
        _check_kernel_fits(shape, k)
        return cls(lambda x: convolve(x, k, method), lambda y: adjoint_convolve(y, k, method),
                   shape, k.output_shape(shape), "convolution")

    @classmethod
    def gradient(cls, shape, h: float = 1.0) -> "LinearOperator":
        shape = tuple(shape)
        return cls(lambda x: grad_forward(x, h), lambda y: -div_vec(y, h),
                   shape, (2,) + shape, "grad_forward")

    def scaled(self, c: float) -> "LinearOperator":
        return LinearOperator(lambda x: c * self.apply(x), lambda y: c * self.adjoint(y),
                              self.domain_shape, self.range_shape, f"{c}*{self.name}")


def estimate_operator_norm(op: LinearOperator, iterations: int = 100, seed: int = 0) -> float:
    """Largest singular value of ``op`` by power iteration on ``op* op``.

    The estimate is a Rayleigh quotient, so it never exceeds the true norm and
    does not decrease with more iterations.
    """
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    for attempt in range(8):
        rng = np.random.default_rng(seed + attempt)
        x = rng.standard_normal(op.domain_shape)
        nx = np.linalg.norm(x)
        if nx > 0:
            break
    else:
        return 0.0
    x /= nx
    est = 0.0
    for _ in range(iterations):
        ax = op.apply(x)
        est = float(np.vdot(ax, ax))
        y = op.adjoint(ax)
        ny_ = np.linalg.norm(y)
        if ny_ == 0:
            # x fell into the null space; the last quotient is still valid
            break
        x = y / ny_
    return float(np.sqrt(est))
