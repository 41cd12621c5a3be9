"""Independent oracles and adjoint checks.

Nothing here calls the primal-dual engine or the projection routines. The
oracles rebuild every difference operator as an explicit sparse matrix from
per-entry loops, so a shared indexing mistake cannot hide in both paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import sparse

from .fields import SYM_WEIGHTS, check_finite, field_kind
from .operators import (
    LinearOperator,
    div_cells,
    div_vec,
    grad_cells,
    grad_forward,
    hess_cells,
    hess_cells_adjoint,
    sym_div,
    sym_div_cells,
    sym_grad,
    sym_grad_cells,
)

__all__ = [
    "Check",
    "adjoint_check",
    "cell_operator_matrices",
    "certification_report",
    "denoise_oracle_exact_prox",
    "operator_pairs",
    "run_certification",
    "tgv_oracle_small",
]

ORACLE_MAX_SIDE = 6


# ---------------------------------------------------------------------------
# adjoint checks
# ---------------------------------------------------------------------------

def _pair(a: np.ndarray, b: np.ndarray) -> float:
    """Pairing used by every operator here: Euclidean, xy channel doubled."""
    try:
        kind = field_kind(a)
    except ValueError:
        kind = "scalar"
    if kind == "sym" and a.ndim >= 3:
        w = SYM_WEIGHTS.reshape(3, 1, 1)
        return float(np.sum(w * a * b))
    return float(np.sum(a * b))


def adjoint_check(op: LinearOperator, trials: int = 20, seed: int = 0,
                  pairing: Optional[Callable[[np.ndarray, np.ndarray], float]] = None) -> float:
    """Largest relative defect ``|<Ax, y> - <x, A*y>| / (|Ax| |y| + eps)`` over random pairs.

    ``pairing`` defaults to the Euclidean pairing with the ``xy`` channel of
    symmetric tensor fields counted twice.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pair = pairing or _pair
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.domain_shape)
        y = rng.standard_normal(op.range_shape)
        ax = op.apply(x)
        lhs = pair(ax, y)
        rhs = pair(x, op.adjoint(y))
        scale = np.sqrt(abs(pair(ax, ax)) * abs(pair(y, y)))
        worst = max(worst, abs(lhs - rhs) / (scale + 1e-300))
    return worst


def operator_pairs(shape: tuple, h: float = 1.0) -> dict:
    """Operator/adjoint pairs on an image of ``shape``, keyed by name."""
    ny, nx = shape
    cell = (2, ny - 1, nx - 1)
    return {
        "grad/div": LinearOperator(lambda u: grad_forward(u, h), lambda p: -div_vec(p, h),
                                   (ny, nx), (2, ny, nx), "grad"),
        "sym_grad/sym_div": LinearOperator(lambda w: sym_grad(w, h), lambda q: -sym_div(q, h),
                                           (2, ny, nx), (3, ny, nx), "sym_grad"),
        "grad_cells/div_cells": LinearOperator(lambda u: grad_cells(u, h), lambda p: -div_cells(p, h),
                                               (ny, nx), (4, 2, ny - 1, nx - 1), "grad_cells"),
        "sym_grad_cells/sym_div_cells": LinearOperator(
            lambda w: sym_grad_cells(w, h), lambda q: -sym_div_cells(q, h),
            cell, (4, 3, ny - 2, nx - 2), "sym_grad_cells"),
        "hess_cells": LinearOperator(lambda v: hess_cells(v, h), lambda q: hess_cells_adjoint(q, h),
                                     (ny, nx), (4, 3, ny - 2, nx - 2), "hess_cells"),
    }


# ---------------------------------------------------------------------------
# explicit sparse operators
# ---------------------------------------------------------------------------

def _diff_matrix(m: int, n: int, axis: str, pick: int, h: float) -> sparse.csr_matrix:
    """Forward difference on an ``m x n`` grid, one output per cell.

    ``axis="x"`` differences along a row, taking row ``i + pick`` of cell
    ``(i, j)``; ``axis="y"`` differences along a column ``j + pick``.
    """
    rows, cols, vals = [], [], []
    for i in range(m - 1):
        for j in range(n - 1):
            k = i * (n - 1) + j
            if axis == "x":
                a, b = (i + pick) * n + j, (i + pick) * n + j + 1
            else:
                a, b = i * n + j + pick, (i + 1) * n + j + pick
            rows += [k, k]
            cols += [a, b]
            vals += [-1.0 / h, 1.0 / h]
    return sparse.csr_matrix((vals, (rows, cols)), shape=((m - 1) * (n - 1), m * n))


@dataclass(frozen=True)
class CellMatrices:
    """Per-variant sparse blocks of the cell gradient and symmetrized gradient.

    ``D[s]`` maps an image to the ``(x, y)`` gradient of variant ``s`` stacked
    channel-major; ``E[s]`` maps a cell field (``x`` block then ``y`` block) to
    ``(xx, yy, xy)`` stacked channel-major.
    """

    D: tuple
    E: tuple
    image_shape: tuple


def cell_operator_matrices(shape: tuple, h: float = 1.0) -> CellMatrices:
    ny, nx = shape
    variants = [(0, 0), (0, 1), (1, 0), (1, 1)]
    D, E = [], []
    for r, c in variants:
        D.append(sparse.vstack([_diff_matrix(ny, nx, "x", r, h),
                                _diff_matrix(ny, nx, "y", c, h)]).tocsr())
        m, n = ny - 1, nx - 1
        dx = _diff_matrix(m, n, "x", r, h)
        dy = _diff_matrix(m, n, "y", c, h)
        z = sparse.csr_matrix(dx.shape)
        E.append(sparse.bmat([[dx, z], [z, dy], [0.5 * dy, 0.5 * dx]]).tocsr())
    return CellMatrices(tuple(D), tuple(E), (ny, nx))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def tgv_oracle_small(u: np.ndarray, params, spacing: float = 1.0) -> float:
    """Minimum over the auxiliary field of the TGV objective, by conic programming.

    The objective is written out as a second-order cone program over the
    explicit sparse operators and handed to an interior-point solver, which
    shares no code with the primal-dual engine. Intended for grids up to
    6 x 6.
    """
    import cvxpy as cp

    u = check_finite(u, "u")
    ny, nx = u.shape
    if max(ny, nx) > ORACLE_MAX_SIDE:
        raise ValueError(f"oracle is limited to {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE} grids")
    if min(ny, nx) < 2:
        return 0.0
    h = spacing
    mats = cell_operator_matrices(u.shape, h)
    ncell = (ny - 1) * (nx - 1)
    w = cp.Variable(2 * ncell)
    uv = u.ravel()
    scale = np.array([1.0, 1.0, np.sqrt(2.0)])
    terms = []
    for Ds, Es in zip(mats.D, mats.E):
        g = (Ds @ uv).reshape(2, ncell)
        first = cp.reshape(g.ravel() - w, (2, ncell), order="C")
        terms.append(params.alpha1 * cp.sum(cp.norm(first, 2, axis=0)))
        if ncell and (ny - 2) * (nx - 2):
            ew = cp.reshape(Es @ w, (3, (ny - 2) * (nx - 2)), order="C")
            terms.append(params.alpha0 * cp.sum(cp.norm(cp.multiply(scale[:, None], ew), 2, axis=0)))
    prob = cp.Problem(cp.Minimize(0.25 * h * h * cp.sum(terms)))
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10,
               max_iter=500)
    return max(float(prob.value), 0.0)


def _ball(y: np.ndarray, radius: float, groups: int) -> np.ndarray:
    # rows are channel-major blocks; normalize each column of the block matrix
    Y = y.reshape(groups, -1)
    nrm = np.sqrt(np.sum(Y * Y, axis=0))
    f = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)
    return (Y * f).ravel()


def denoise_oracle_exact_prox(f: np.ndarray, params, iters: int = 200000, tol: float = 1e-10,
                              spacing: float = 1.0, step_ratio: float = 0.005) -> np.ndarray:
    """TGV denoising with the data term handled by its exact proximal map.

    A primal-dual iteration over ``(u, w)`` with a plain matrix
    ``A = [D_s u - w ; E_s w]`` (variant weights and the ``sqrt 2`` on ``xy``
    folded into the rows), so the dual balls are ordinary Euclidean ones.
    Steps come from the bound ``||A||^2 <= ||A||_1 ||A||_inf``. Runs until the
    change per iteration, in root-mean-square, drops below ``tol`` or
    ``iters`` is reached.
    """
    f = check_finite(f, "f")
    ny, nx = f.shape
    if min(ny, nx) < 2:
        return f.copy()
    mats = cell_operator_matrices(f.shape, spacing)
    npx = ny * nx
    nw = 2 * (ny - 1) * (nx - 1)
    n2 = (ny - 2) * (nx - 2)
    I_w = sparse.identity(nw, format="csr")
    srow = sparse.diags(np.repeat([0.25, 0.25, 0.25 * np.sqrt(2.0)], n2))
    blocks_p = [sparse.hstack([0.25 * Ds, -0.25 * I_w]) for Ds in mats.D]
    blocks_q = [sparse.hstack([sparse.csr_matrix((3 * n2, npx)), srow @ Es]) for Es in mats.E]
    A = sparse.vstack(blocks_p + blocks_q).tocsr()
    At = A.T.tocsr()
    np_rows = 4 * nw
    bound = np.sqrt(abs(A).sum(axis=0).max() * abs(A).sum(axis=1).max())
    tau = np.sqrt(step_ratio) / bound
    sigma = 1.0 / (np.sqrt(step_ratio) * bound)

    x = np.zeros(npx + nw)
    xbar = x.copy()
    y = np.zeros(A.shape[0])
    fv = f.ravel()
    a1, a0 = params.alpha1, params.alpha0
    for _ in range(iters):
        y = y + sigma * (A @ xbar)
        yp = y[:np_rows].reshape(4, nw)
        for s in range(4):
            yp[s] = _ball(yp[s], a1, 2)
        yq = y[np_rows:].reshape(4, 3 * n2)
        for s in range(4):
            yq[s] = _ball(yq[s], a0, 3)
        y = np.concatenate([yp.ravel(), yq.ravel()])
        g = At @ y
        xn = x - tau * g
        xn[:npx] = (xn[:npx] + tau * fv) / (1.0 + tau)
        xbar = 2.0 * xn - x
        step = np.sqrt(np.mean((xn - x) ** 2)) / tau
        x = xn
        if step <= tol:
            break
    return x[:npx].reshape(f.shape)


# ---------------------------------------------------------------------------
# certification report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    metric: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.metric <= self.threshold)

    def line(self) -> str:
        return f"{self.name}\t{self.metric:.3e}\t{self.threshold:.1e}\t{'PASS' if self.passed else 'FAIL'}"


def certification_report(checks: Iterable[Check]) -> str:
    """One line per check: name, metric, threshold, PASS/FAIL (tab separated)."""
    lines = ["# check\tmetric\tthreshold\tresult"]
    lines += [c.line() for c in checks]
    return "\n".join(lines) + "\n"


def run_certification(seed: int = 0, trials: int = 20,
                      shapes: tuple = ((3, 3), (5, 7), (16, 16))) -> list:
    """Adjoint checks of every difference operator and the convolution."""
    from .operators import gaussian_kernel

    checks = []
    for shape in shapes:
        for name, op in operator_pairs(shape).items():
            d = adjoint_check(op, trials, seed)
            checks.append(Check(f"adjoint {name} {shape[0]}x{shape[1]}", d, 1e-10))
        if min(shape) >= 3:
            k = gaussian_kernel(1.0, 3)
            op = LinearOperator.convolution(k, shape)
            d = adjoint_check(op, trials, seed)
            checks.append(Check(f"adjoint convolve {shape[0]}x{shape[1]}", d, 1e-10))
    return checks
