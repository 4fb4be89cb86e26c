import numpy as np
from typing import List, Dict, Optional, Any, Union, Tuple, Sequence

from src.core.errors import ShapeError, ContractionError

ArrayLike = Union["DenseTensor", np.ndarray, Sequence[Any], float]


class DenseTensor:
    """Immutable d-order float64 tensor stored row-major (last index fastest)."""

    __slots__ = ("_data",)

    def __init__(self, data: ArrayLike, shape: Optional[Sequence[int]] = None):
        if isinstance(data, DenseTensor):
            arr = data._data
        else:
            arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if int(np.prod(shape, dtype=np.int64)) != arr.size:
                raise ShapeError(f"data length {arr.size} does not match shape {list(shape)}")
            arr = arr.reshape(shape)
        self._data: np.ndarray = _freeze(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "DenseTensor":
        # No copy: caller hands over ownership of arr.
        t = cls.__new__(cls)
        t._data = _freeze(np.ascontiguousarray(arr, dtype=np.float64))
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._data

    @property
    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __array__(self, dtype: Any = None, copy: Any = None) -> np.ndarray:
        if dtype is not None and np.dtype(dtype) != self._data.dtype:
            return self._data.astype(dtype)
        return self._data.copy() if copy else self._data

    def scaled(self, alpha: float) -> "DenseTensor":
        return DenseTensor._wrap(self._data * float(alpha))

    def __mul__(self, alpha: float) -> "DenseTensor":
        return self.scaled(alpha)

    __rmul__ = __mul__

    def __add__(self, other: "DenseTensor") -> "DenseTensor":
        other = as_tensor(other)
        if other.shape != self.shape:
            raise ShapeError(f"cannot add {list(self.shape)} and {list(other.shape)}")
        return DenseTensor._wrap(self._data + other._data)

    def __repr__(self) -> str:
        return f"DenseTensor(shape={list(self.shape)})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    if any(s < 1 for s in arr.shape):
        raise ShapeError(f"all dimensions must be >= 1, got {list(arr.shape)}")
    arr.setflags(write=False)
    return arr


def as_tensor(x: ArrayLike) -> DenseTensor:
    if isinstance(x, DenseTensor): return x
    return DenseTensor(x)


def reshape(t: ArrayLike, new_shape: Sequence[int]) -> DenseTensor:
    t = as_tensor(t)
    new_shape = tuple(int(s) for s in new_shape)
    if any(s < 1 for s in new_shape):
        raise ShapeError(f"all dimensions must be >= 1, got {list(new_shape)}")
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"cannot reshape {list(t.shape)} ({t.size} elements) to {list(new_shape)}")
    # Zero-copy: reshaping a C-contiguous array yields a view.
    return DenseTensor._wrap(t.data.reshape(new_shape))


def _normalize_axes(axes: Sequence[int], ndim: int, shape: Tuple[int, ...], other: Tuple[int, ...], axes_a: Sequence[int], axes_b: Sequence[int]) -> List[int]:
    out = []
    for ax in axes:
        ax = int(ax)
        if ax < -ndim or ax >= ndim:
            raise ContractionError(shape, other, axes_a, axes_b, f"axis {ax} out of range for order {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ContractionError(shape, other, axes_a, axes_b, "duplicate axes")
    return out


def contract(a: ArrayLike, b: ArrayLike, axes_a: Sequence[int], axes_b: Sequence[int]) -> DenseTensor:
    """Sum over matched axis pairs. Result axes: remaining axes of a, then remaining axes of b."""
    a, b = as_tensor(a), as_tensor(b)
    if len(axes_a) != len(axes_b):
        raise ContractionError(a.shape, b.shape, axes_a, axes_b, "axis lists differ in length")
    na = _normalize_axes(axes_a, a.ndim, a.shape, b.shape, axes_a, axes_b)
    nb = _normalize_axes(axes_b, b.ndim, a.shape, b.shape, axes_a, axes_b)
    for i, j in zip(na, nb):
        if a.shape[i] != b.shape[j]:
            raise ContractionError(a.shape, b.shape, axes_a, axes_b, f"dimension {a.shape[i]} != {b.shape[j]}")
    return DenseTensor._wrap(np.tensordot(a.data, b.data, axes=(na, nb)))


def flat_index(shape: Sequence[int], subscripts: Sequence[int]) -> int:
    shape = [int(s) for s in shape]
    if len(subscripts) != len(shape):
        raise ShapeError(f"expected {len(shape)} subscripts for shape {shape}, got {len(subscripts)}")
    idx = 0
    for dim, sub in zip(shape, subscripts):
        sub = int(sub)
        if sub < 0 or sub >= dim:
            raise ShapeError(f"subscript {list(subscripts)} out of bounds for shape {shape}")
        idx = idx * dim + sub
    return idx


def element_at(t: ArrayLike, subscripts: Sequence[int]) -> float:
    t = as_tensor(t)
    return float(t.flat[flat_index(t.shape, subscripts)])


# Labeled contraction: every label shared by both operands is summed.

Labels = Tuple[str, ...]


def contraction_cost(a_shape: Sequence[int], a_labels: Sequence[str], b_shape: Sequence[int], b_labels: Sequence[str]) -> Tuple[Tuple[int, ...], Labels, int]:
    """Shape-only dry run: (result shape, result labels, multiply-adds)."""
    a_labels, b_labels = tuple(a_labels), tuple(b_labels)
    if len(a_labels) != len(a_shape) or len(b_labels) != len(b_shape):
        raise ShapeError(f"label count mismatch: {a_labels} for {list(a_shape)}, {b_labels} for {list(b_shape)}")
    if len(set(a_labels)) != len(a_labels) or len(set(b_labels)) != len(b_labels):
        raise ShapeError(f"repeated label in {a_labels} or {b_labels}")
    a_size = dict(zip(a_labels, a_shape))
    b_size = dict(zip(b_labels, b_shape))
    shared = [l for l in a_labels if l in b_size]
    for l in shared:
        if a_size[l] != b_size[l]:
            raise ContractionError(a_shape, b_shape, [a_labels.index(l)], [b_labels.index(l)], f"label '{l}' has sizes {a_size[l]} and {b_size[l]}")
    out_labels = tuple(l for l in a_labels if l not in b_size) + tuple(l for l in b_labels if l not in a_size)
    out_shape = tuple(a_size.get(l, b_size.get(l)) for l in out_labels)
    vol_a = int(np.prod(a_shape, dtype=np.int64))
    vol_b = int(np.prod(b_shape, dtype=np.int64))
    vol_shared = int(np.prod([a_size[l] for l in shared], dtype=np.int64))
    return out_shape, out_labels, vol_a * vol_b // vol_shared


def contract_labeled(a: Any, a_labels: Sequence[str], b: Any, b_labels: Sequence[str]) -> Tuple[np.ndarray, Labels, int]:
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    _, out_labels, madds = contraction_cost(a_arr.shape, a_labels, b_arr.shape, b_labels)
    a_labels, b_labels = tuple(a_labels), tuple(b_labels)
    shared = [l for l in a_labels if l in b_labels]
    axes = ([a_labels.index(l) for l in shared], [b_labels.index(l) for l in shared])
    return np.tensordot(a_arr, b_arr, axes=axes), out_labels, madds


def permute_to(arr: np.ndarray, labels: Sequence[str], target: Sequence[str]) -> np.ndarray:
    labels = list(labels)
    if sorted(labels) != sorted(target):
        raise ShapeError(f"cannot permute labels {labels} to {list(target)}")
    return np.transpose(arr, [labels.index(l) for l in target])
