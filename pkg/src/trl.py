import io
import struct
import numpy as np
from typing import List, Dict, Optional, Any, Union, Tuple, Sequence

from src.core.errors import ShapeError, FormatError
from src.core.models import FlopReport
from src.tensor import DenseTensor, as_tensor, contract_labeled, contraction_cost, permute_to
from src.formats import TRFormat, tr_reconstruct, random_tr, param_count, encode_format, decode_format
from src.storage import atomic_write_bytes

LAYER_MAGIC = b"TRL1"


class RingLabels:
    """Index labels of the layer network: batch 'b', modes i*/o*, ring bonds r*."""

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.d = n + m
        self.inputs: Tuple[str, ...] = tuple(f"i{k}" for k in range(n))
        self.outputs: Tuple[str, ...] = tuple(f"o{j}" for j in range(m))

    def core(self, k: int) -> Tuple[str, str, str]:
        mode = self.inputs[k] if k < self.n else self.outputs[k - self.n]
        return (f"r{k}", mode, f"r{(k + 1) % self.d}")

    @property
    def x(self) -> Tuple[str, ...]:
        return ("b",) + self.inputs

    @property
    def y(self) -> Tuple[str, ...]:
        return ("b",) + self.outputs


class TRLayer:
    def __init__(self, input_dims: Sequence[int], output_dims: Sequence[int], cores: TRFormat):
        self.input_dims: Tuple[int, ...] = tuple(int(v) for v in input_dims)
        self.output_dims: Tuple[int, ...] = tuple(int(v) for v in output_dims)
        if not self.input_dims or not self.output_dims:
            raise ShapeError("a ring layer needs at least one input and one output core")
        if not isinstance(cores, TRFormat):
            cores = TRFormat(cores)
        self.cores: TRFormat = cores
        expected = list(self.input_dims + self.output_dims)
        if cores.dims != expected:
            raise ShapeError(f"core mode dims {cores.dims} do not match input {list(self.input_dims)} + output {list(self.output_dims)}")
        self.labels = RingLabels(self.n, self.m)

    @classmethod
    def random(cls, input_dims: Sequence[int], output_dims: Sequence[int], ranks: Union[int, Sequence[int]], seed: int = 0, target_variance: Optional[float] = None) -> "TRLayer":
        """Fan-in scaled: weight entries have variance 1/I unless given."""
        I = int(np.prod(input_dims))
        var = (1.0 / I) if target_variance is None else target_variance
        return cls(input_dims, output_dims, random_tr(list(input_dims) + list(output_dims), ranks, seed, var))

    @property
    def n(self) -> int:
        return len(self.input_dims)

    @property
    def m(self) -> int:
        return len(self.output_dims)

    @property
    def I(self) -> int:
        return int(np.prod(self.input_dims))

    @property
    def O(self) -> int:
        return int(np.prod(self.output_dims))

    @property
    def ranks(self) -> List[int]:
        return self.cores.ranks

    def param_count(self) -> int:
        return param_count(self.cores)

    def arrays(self) -> List[np.ndarray]:
        return self.cores.arrays()

    def with_cores(self, cores: Sequence[Any]) -> "TRLayer":
        return TRLayer(self.input_dims, self.output_dims, TRFormat(cores))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """x of shape [I] or [B, I]; returns [O] or [B, O]."""
        return _forward(self, x, None)

    def backward(self, x: np.ndarray, grad_y: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """(per-core gradients, grad_x); a leading batch axis is summed into the core gradients."""
        return _backward(self, x, grad_y, None)

    def __repr__(self) -> str:
        return f"TRLayer(in={list(self.input_dims)}, out={list(self.output_dims)}, ranks={self.ranks})"


def _chain(t: Any, labels: Tuple[str, ...], steps: Sequence[Tuple[Any, Tuple[str, ...]]], report: Optional[FlopReport], dry: bool = False) -> Tuple[Any, Tuple[str, ...]]:
    """Left-to-right contraction. In dry mode t and operands are shapes."""
    for operand, op_labels in steps:
        if dry:
            t, labels, madds = contraction_cost(t, labels, operand, op_labels)
            volume = int(np.prod(t, dtype=np.int64))
        else:
            t, labels, madds = contract_labeled(t, labels, operand, op_labels)
            volume = t.size
        if report is not None:
            report.add(madds, volume)
    return t, labels


def _batched(layer: TRLayer, x: Any) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    batched = arr.ndim == 2
    if arr.ndim not in (1, 2) or arr.shape[-1] != layer.I:
        raise ShapeError(f"input of shape {list(arr.shape)} does not match layer input size {layer.I} = prod({list(layer.input_dims)})")
    return arr.reshape((-1,) + layer.input_dims), batched


def _forward(layer: TRLayer, x: Any, report: Optional[FlopReport]) -> np.ndarray:
    xb, batched = _batched(layer, x)
    lab = layer.labels
    # X, then G1..Gn absorb input modes, then Gn+1..Gn+m emit outputs; r0 traces at the last core.
    steps = [(c, lab.core(k)) for k, c in enumerate(layer.arrays())]
    t, labels = _chain(xb, lab.x, steps, report)
    y = permute_to(t, labels, lab.y).reshape(xb.shape[0], layer.O)
    return y if batched else y[0]


def _backward(layer: TRLayer, x: Any, grad_y: Any, reports: Optional[List[FlopReport]]) -> Tuple[List[np.ndarray], np.ndarray]:
    xb, batched = _batched(layer, x)
    gy = np.asarray(grad_y, dtype=np.float64)
    if gy.shape[-1] != layer.O or gy.size != xb.shape[0] * layer.O:
        raise ShapeError(f"grad_y of shape {list(gy.shape)} does not match output size {layer.O} for batch {xb.shape[0]}")
    gy = gy.reshape((xb.shape[0],) + layer.output_dims)
    lab = layer.labels
    cores = layer.arrays()
    d = len(cores)
    grads = []
    for k in range(d):
        rep = FlopReport() if reports is not None else None
        # Network with core k removed: its bonds and mode stay open. Batch is summed by grad_y.
        steps = [(cores[j], lab.core(j)) for j in range(d) if j != k] + [(gy, lab.y)]
        t, labels = _chain(xb, lab.x, steps, rep)
        grads.append(np.ascontiguousarray(permute_to(t, labels, lab.core(k))))
        if reports is not None: reports.append(rep)
    rep = FlopReport() if reports is not None else None
    steps = [(cores[j], lab.core(j)) for j in reversed(range(d))]
    t, labels = _chain(gy, lab.y, steps, rep)
    if reports is not None: reports.append(rep)
    gx = permute_to(t, labels, lab.x).reshape(xb.shape[0], layer.I)
    return grads, (gx if batched else gx[0])


def trl_forward(layer: TRLayer, x: Any) -> DenseTensor:
    return DenseTensor._wrap(_forward(layer, x, None))


def trl_forward_instrumented(layer: TRLayer, x: Any) -> Tuple[DenseTensor, FlopReport]:
    report = FlopReport()
    y = _forward(layer, x, report)
    return DenseTensor._wrap(y), report


def trl_backward(layer: TRLayer, x: Any, grad_y: Any) -> Tuple[List[DenseTensor], DenseTensor]:
    grads, gx = _backward(layer, x, grad_y, None)
    return [DenseTensor._wrap(g) for g in grads], DenseTensor._wrap(gx)


def trl_backward_instrumented(layer: TRLayer, x: Any, grad_y: Any) -> Tuple[List[DenseTensor], DenseTensor, List[FlopReport], FlopReport]:
    """Per-core reports (one per core gradient) and the grad_x report."""
    reports: List[FlopReport] = []
    grads, gx = _backward(layer, x, grad_y, reports)
    return [DenseTensor._wrap(g) for g in grads], DenseTensor._wrap(gx), reports[:-1], reports[-1]


def _core_shapes(input_dims: Sequence[int], output_dims: Sequence[int], ranks: Sequence[int]) -> List[Tuple[int, int, int]]:
    dims = list(input_dims) + list(output_dims)
    d = len(dims)
    if len(ranks) != d:
        raise ShapeError(f"expected {d} ring ranks, got {len(ranks)}")
    return [(int(ranks[k]), int(dims[k]), int(ranks[(k + 1) % d])) for k in range(d)]


def forward_cost(input_dims: Sequence[int], output_dims: Sequence[int], ranks: Sequence[int], batch: int = 1) -> FlopReport:
    """Exact counts of the forward schedule from shapes alone."""
    lab = RingLabels(len(input_dims), len(output_dims))
    shapes = _core_shapes(input_dims, output_dims, ranks)
    report = FlopReport()
    _chain((batch,) + tuple(input_dims), lab.x, [(s, lab.core(k)) for k, s in enumerate(shapes)], report, dry=True)
    return report


def backward_cost(input_dims: Sequence[int], output_dims: Sequence[int], ranks: Sequence[int], batch: int = 1) -> Tuple[List[FlopReport], FlopReport]:
    lab = RingLabels(len(input_dims), len(output_dims))
    shapes = _core_shapes(input_dims, output_dims, ranks)
    x_shape = (batch,) + tuple(input_dims)
    y_shape = (batch,) + tuple(output_dims)
    d = len(shapes)
    per_core = []
    for k in range(d):
        rep = FlopReport()
        steps = [(shapes[j], lab.core(j)) for j in range(d) if j != k] + [(y_shape, lab.y)]
        _chain(x_shape, lab.x, steps, rep, dry=True)
        per_core.append(rep)
    gx = FlopReport()
    _chain(y_shape, lab.y, [(shapes[j], lab.core(j)) for j in reversed(range(d))], gx, dry=True)
    return per_core, gx


def unfold(layer: TRLayer) -> np.ndarray:
    """Dense I x O matrix; rows follow the input multi-index in row-major order."""
    return tr_reconstruct(layer.cores).data.reshape(layer.I, layer.O)


def exact_tr_layer(matrix: Any, input_dims: Sequence[int]) -> TRLayer:
    """Rank-saturated layer representing an I x O matrix exactly.

    Input core k carries the row-major prefix index of modes 0..k (identity cores);
    the single output core holds the matrix. Closing rank is 1.
    """
    M = np.asarray(matrix, dtype=np.float64)
    I, O = M.shape
    input_dims = [int(v) for v in input_dims]
    if int(np.prod(input_dims)) != I:
        raise ShapeError(f"input dims {input_dims} do not multiply to {I}")
    cores = []
    left = 1
    for L in input_dims:
        core = np.zeros((left, L, left * L))
        for p in range(left):
            for i in range(L):
                core[p, i, p * L + i] = 1.0
        cores.append(core)
        left *= L
    cores.append(M.reshape(I, O, 1))
    return TRLayer(input_dims, [O], TRFormat(cores))


def encode_layer(layer: TRLayer) -> bytes:
    buf = io.BytesIO()
    buf.write(LAYER_MAGIC)
    buf.write(struct.pack("<2I", layer.n, layer.m))
    buf.write(struct.pack(f"<{layer.n}I", *layer.input_dims))
    buf.write(struct.pack(f"<{layer.m}I", *layer.output_dims))
    buf.write(encode_format(layer.cores))
    return buf.getvalue()


def decode_layer(blob: bytes) -> TRLayer:
    if blob[:4] != LAYER_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {LAYER_MAGIC!r}")
    try:
        n, m = struct.unpack_from("<2I", blob, 4)
        pos = 12
        input_dims = struct.unpack_from(f"<{n}I", blob, pos)
        pos += 4 * n
        output_dims = struct.unpack_from(f"<{m}I", blob, pos)
        pos += 4 * m
    except struct.error as e:
        raise FormatError(f"truncated layer header: {e}")
    cores, end = decode_format(blob, pos)
    if end != len(blob):
        raise FormatError(f"{len(blob) - end} trailing bytes after layer payload")
    return TRLayer(input_dims, output_dims, cores)


def save_layer(layer: TRLayer, path: str) -> None:
    atomic_write_bytes(path, encode_layer(layer))


def load_layer(path: str) -> TRLayer:
    with open(path, "rb") as fh:
        return decode_layer(fh.read())
