"""Flat parameter vectors and the few linear-algebra kernels the protocol needs.

All sums run left to right in a fixed column order so that results are
bit-reproducible; ``dot`` uses a sequential cumulative sum instead of BLAS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Shape = tuple[int, ...]


class LayoutError(ValueError):
    """Raised when two parameter objects do not share a layout."""


def layout_size(layout: Sequence[Shape]) -> int:
    return sum(math.prod(shape) for shape in layout)


def _freeze(values: np.ndarray) -> np.ndarray:
    values.flags.writeable = False
    return values


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: tuple[Shape, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        layout = tuple(tuple(int(d) for d in shape) for shape in self.layout)
        if values.size != layout_size(layout):
            raise LayoutError(
                f"{values.size} values do not fit layout {layout} ({layout_size(layout)} elements)"
            )
        if not np.isfinite(values).all():
            raise ValueError("parameter vector contains NaN or Inf")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "layout", layout)

    @classmethod
    def zeros(cls, layout: Sequence[Shape]) -> "ParamVector":
        return cls(np.zeros(layout_size(layout)), tuple(layout))

    def __len__(self) -> int:
        return self.values.size

    def tensors(self) -> list[np.ndarray]:
        """Views of the flat buffer, one per layout entry."""
        out = []
        offset = 0
        for shape in self.layout:
            n = math.prod(shape)
            out.append(self.values[offset : offset + n].reshape(shape))
            offset += n
        return out

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def tolist(self) -> list[float]:
        return self.values.tolist()


@dataclass(frozen=True, eq=False)
class ParamMatrix:
    """M parameter vectors sharing one layout, stored row-wise as an (M, n) array."""

    data: np.ndarray
    layout: tuple[Shape, ...]

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("ParamMatrix data must be two-dimensional")
        layout = tuple(tuple(int(d) for d in shape) for shape in self.layout)
        if data.shape[1] != layout_size(layout):
            raise LayoutError(f"column length {data.shape[1]} does not fit layout {layout}")
        if not np.isfinite(data).all():
            raise ValueError("parameter matrix contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "layout", layout)

    @classmethod
    def from_columns(cls, columns: Sequence[ParamVector]) -> "ParamMatrix":
        if not columns:
            raise ValueError("ParamMatrix needs at least one column")
        layout = columns[0].layout
        for j, col in enumerate(columns):
            if col.layout != layout:
                raise LayoutError(f"column {j} layout {col.layout} differs from {layout}")
        return cls(np.stack([c.values for c in columns]), layout)

    @property
    def num_columns(self) -> int:
        return self.data.shape[0]

    def column(self, j: int) -> ParamVector:
        return ParamVector(self.data[j].copy(), self.layout)

    @property
    def columns(self) -> list[ParamVector]:
        return [self.column(j) for j in range(self.num_columns)]

    def replace_column(self, j: int, v: ParamVector) -> "ParamMatrix":
        _check_layout(self.layout, v.layout)
        data = self.data.copy()
        data[j] = v.values
        return ParamMatrix(data, self.layout)

    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.sum(self.data * self.data)))

    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.data, 2))


def _check_layout(a: tuple[Shape, ...], b: tuple[Shape, ...]) -> None:
    if a != b:
        raise LayoutError(f"layout mismatch: {a} vs {b}")


def weighted_sum(params: ParamMatrix, weights: Sequence[float]) -> ParamVector:
    """Return sum_j weights[j] * column j, accumulated in column order."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != params.num_columns:
        raise ValueError(
            f"got {w.size} weights for a matrix with {params.num_columns} columns"
        )
    acc = np.zeros(params.data.shape[1])
    for j in range(params.num_columns):
        acc = acc + w[j] * params.data[j]
    return ParamVector(acc, params.layout)


def delta(a: ParamVector, b: ParamVector) -> ParamVector:
    _check_layout(a.layout, b.layout)
    return ParamVector(a.values - b.values, a.layout)


def _sequential_dot(x: np.ndarray, y: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    # cumsum is a strict left-to-right accumulation, unlike BLAS dot
    return float(np.cumsum(x * y)[-1])


def dot(a: ParamVector, b: ParamVector) -> float:
    _check_layout(a.layout, b.layout)
    return _sequential_dot(a.values, b.values)


def norm2(v: ParamVector) -> float:
    return math.sqrt(_sequential_dot(v.values, v.values))


def axpy(v: ParamVector, s: float, w: ParamVector) -> ParamVector:
    """Return v + s * w."""
    _check_layout(v.layout, w.layout)
    if s == 0.0:
        return v
    return ParamVector(v.values + s * w.values, v.layout)


def mat_transpose_vec(params: ParamMatrix, v: ParamVector) -> np.ndarray:
    """Return Theta^T v, i.e. the dot product of every column with v."""
    _check_layout(params.layout, v.layout)
    if params.data.shape[1] == 0:
        return np.zeros(params.num_columns)
    return np.cumsum(params.data * v.values, axis=1)[:, -1].copy()


def concat(a: ParamVector, b: ParamVector) -> ParamVector:
    return ParamVector(np.concatenate([a.values, b.values]), a.layout + b.layout)


def split(v: ParamVector, head_entries: int) -> tuple[ParamVector, ParamVector]:
    """Split off the last ``head_entries`` layout entries into a second vector."""
    cut = len(v.layout) - head_entries
    first_layout, second_layout = v.layout[:cut], v.layout[cut:]
    n = layout_size(first_layout)
    return (
        ParamVector(v.values[:n].copy(), first_layout),
        ParamVector(v.values[n:].copy(), second_layout),
    )
