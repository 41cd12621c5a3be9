"""Grid geometry, field layouts and the discrete Radon-type norms.

Fields are plain numpy arrays with a fixed channel layout:

* scalar field  -- shape ``(ny, nx)``
* vector field  -- shape ``(2, ny, nx)``, channels ``(x, y)``
* sym tensor    -- shape ``(3, ny, nx)``, channels ``(xx, yy, xy)``

The ``xy`` channel of a symmetric tensor is stored once and counted twice in
every norm and inner product. Leading batch axes are allowed on vector and
tensor fields (e.g. ``(4, 2, ny, nx)``); norms sum over them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContractError",
    "GridGeometry",
    "check_finite",
    "field_kind",
    "inner_product",
    "norm_21_sym",
    "norm_21_vec",
    "pointwise_norm_sym",
    "pointwise_norm_vec",
]

# weights applied to (xx, yy, xy) in sums of squares
SYM_WEIGHTS = np.array([1.0, 1.0, 2.0])


class ContractError(ValueError):
    """Raised when an operation's precondition on its inputs is violated."""


@dataclass(frozen=True)
class GridGeometry:
    """Regular pixel grid with square cells of side ``spacing``."""

    width: int
    height: int
    spacing: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContractError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.spacing > 0:
            raise ContractError(f"spacing must be positive, got {self.spacing}")

    @classmethod
    def of(cls, u: np.ndarray, spacing: float = 1.0) -> "GridGeometry":
        ny, nx = np.shape(u)[-2:]
        return cls(nx, ny, spacing)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def cell_area(self) -> float:
        return self.spacing**2


def check_finite(a: np.ndarray, name: str = "field") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains non-finite values")
    return a


def field_kind(a: np.ndarray) -> str:
    """Return ``"scalar"``, ``"vector"`` or ``"sym"`` from the array layout."""
    a = np.asarray(a)
    if a.ndim == 2:
        return "scalar"
    if a.ndim >= 3 and a.shape[-3] == 2:
        return "vector"
    if a.ndim >= 3 and a.shape[-3] == 3:
        return "sym"
    raise ContractError(f"cannot interpret array of shape {a.shape} as a field")


def inner_product(a: np.ndarray, b: np.ndarray, h: float = 1.0) -> float:
    """Cell-weighted L2 pairing; the xy channel of tensor fields counts twice."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"geometry mismatch: {a.shape} vs {b.shape}")
    kind = field_kind(a)
    if kind == "sym":
        w = SYM_WEIGHTS.reshape(3, 1, 1)
        return float(h * h * np.sum(w * a * b))
    return float(h * h * np.sum(a * b))


def pointwise_norm_vec(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0, :, :], p[..., 1, :, :]
    return np.sqrt(x * x + y * y)


def pointwise_norm_sym(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    xx, yy, xy = q[..., 0, :, :], q[..., 1, :, :], q[..., 2, :, :]
    return np.sqrt(xx * xx + yy * yy + 2.0 * xy * xy)


def norm_21_vec(p: np.ndarray, h: float = 1.0) -> float:
    """h^2 * sum of pointwise Euclidean norms of a vector field."""
    return float(h * h * np.sum(pointwise_norm_vec(p)))


def norm_21_sym(q: np.ndarray, h: float = 1.0) -> float:
    """h^2 * sum of pointwise Frobenius norms of a symmetric tensor field."""
    return float(h * h * np.sum(pointwise_norm_sym(q)))
