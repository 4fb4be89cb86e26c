import io
import json
import struct
import numpy as np
from typing import List, Dict, Optional, Any, Union, Tuple, Sequence

from src.core.errors import ShapeError, RankMismatchError, FormatError
from src.tensor import DenseTensor, as_tensor
from src.storage import atomic_write_bytes, atomic_write_text

MAGIC = b"TRF1"


class _CoreChain:
    """Ordered 3-order cores [R_{k-1}, L_k, R_k]."""

    def __init__(self, cores: Sequence[Any]):
        if len(cores) == 0:
            raise ShapeError("a core chain needs at least one core")
        self.cores: Tuple[DenseTensor, ...] = tuple(as_tensor(c) for c in cores)
        for k, c in enumerate(self.cores):
            if c.ndim != 3:
                raise ShapeError(f"core {k} must be 3-order, got shape {list(c.shape)}")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise RankMismatchError(
                    f"core {k} right rank {self.cores[k].shape[2]} != core {k + 1} left rank {self.cores[k + 1].shape[0]}")

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> List[int]:
        return [c.shape[1] for c in self.cores]

    def arrays(self) -> List[np.ndarray]:
        return [c.data for c in self.cores]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dims={self.dims}, ranks={self.ranks})"


class TTFormat(_CoreChain):
    def __init__(self, cores: Sequence[Any]):
        super().__init__(cores)
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise RankMismatchError(
                f"tensor train border ranks must be 1, got R_0={self.cores[0].shape[0]}, R_d={self.cores[-1].shape[2]}")

    @property
    def ranks(self) -> List[int]:
        return [c.shape[0] for c in self.cores] + [1]


class TRFormat(_CoreChain):
    def __init__(self, cores: Sequence[Any]):
        super().__init__(cores)
        if self.cores[-1].shape[2] != self.cores[0].shape[0]:
            raise RankMismatchError(
                f"ring closure broken: last core right rank {self.cores[-1].shape[2]} != first core left rank {self.cores[0].shape[0]}")

    @property
    def ranks(self) -> List[int]:
        return [c.shape[0] for c in self.cores]


def _chain(cores: Sequence[np.ndarray]) -> np.ndarray:
    """Contract consecutive cores: [R_0, L_1, ..., L_d, R_d]."""
    t = np.asarray(cores[0])
    for c in cores[1:]:
        t = np.tensordot(t, c, axes=([-1], [0]))
    return t


def tt_reconstruct(f: TTFormat) -> DenseTensor:
    t = _chain(f.arrays())
    return DenseTensor._wrap(t.reshape(f.dims))


def tr_reconstruct(f: Union[TRFormat, TTFormat]) -> DenseTensor:
    t = _chain(f.arrays())
    # Close the ring over the R_0 / R_d pair.
    return DenseTensor._wrap(np.trace(t, axis1=0, axis2=t.ndim - 1))


def tr_as_tt_sum(f: TRFormat) -> List[TTFormat]:
    """Slice the closing bond: the ring equals the sum of R_0 trains."""
    cores = f.arrays()
    trains = []
    for k in range(f.ranks[0]):
        if f.d == 1:
            trains.append(TTFormat([cores[0][k:k + 1, :, k:k + 1]]))
            continue
        first = cores[0][k:k + 1]
        last = cores[-1][:, :, k:k + 1]
        trains.append(TTFormat([first] + list(cores[1:-1]) + [last]))
    return trains


def param_count(f: _CoreChain) -> int:
    return sum(c.size for c in f.cores)


def split_point(dims: Sequence[int], dense_in: int, dense_out: int) -> int:
    """Number of leading (input) cores whose dims multiply to dense_in."""
    for n in range(1, len(dims)):
        if int(np.prod(dims[:n])) == dense_in and int(np.prod(dims[n:])) == dense_out:
            return n
    raise ShapeError(f"core dims {list(dims)} do not factor as {dense_in} x {dense_out}")


def compression_ratio(dense_in: int, dense_out: int, f: _CoreChain) -> float:
    split_point(f.dims, dense_in, dense_out)
    return (dense_in * dense_out) / param_count(f)


def _as_rank_list(ranks: Union[int, Sequence[int]], d: int) -> List[int]:
    if isinstance(ranks, (int, np.integer)):
        return [int(ranks)] * d
    ranks = [int(r) for r in ranks]
    if len(ranks) != d:
        raise RankMismatchError(f"expected {d} ring ranks, got {len(ranks)}")
    return ranks


def random_tr(dims: Sequence[int], ranks: Union[int, Sequence[int]], seed: int, target_variance: float = 1.0) -> TRFormat:
    """I.i.d. Gaussian cores.

    Each reconstructed element is a sum of prod(R_k) uncorrelated products of d
    core entries, so var = prod(R_k) * sigma^(2d). sigma is solved for target_variance.
    """
    d = len(dims)
    ranks = _as_rank_list(ranks, d)
    if any(r < 1 for r in ranks) or any(int(l) < 1 for l in dims):
        raise ShapeError(f"ranks and dims must be >= 1, got ranks={ranks}, dims={list(dims)}")
    sigma = (target_variance / float(np.prod(ranks))) ** (1.0 / (2 * d))
    rng = np.random.default_rng(seed)
    cores = [rng.standard_normal((ranks[k], int(dims[k]), ranks[(k + 1) % d])) * sigma for k in range(d)]
    return TRFormat(cores)


def random_tt(dims: Sequence[int], ranks: Union[int, Sequence[int]], seed: int, target_variance: float = 1.0) -> TTFormat:
    """Same rule as random_tr over the d-1 interior ranks."""
    d = len(dims)
    inner = _as_rank_list(ranks, d - 1) if d > 1 else []
    full = [1] + inner + [1]
    sigma = (target_variance / float(np.prod(inner) if inner else 1.0)) ** (1.0 / (2 * d))
    rng = np.random.default_rng(seed)
    cores = [rng.standard_normal((full[k], int(dims[k]), full[k + 1])) * sigma for k in range(d)]
    return TTFormat(cores)


def tr_environment(cores: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Chain of every core but k, in ring order k+1, ..., k-1.

    Shape [R_{k+1}, L_{k+1}, ..., L_{k-1}, R_k]; for d == 1 the identity [R_0, R_0].
    """
    d = len(cores)
    if d == 1:
        return np.eye(cores[0].shape[0])
    return _chain([cores[(k + j) % d] for j in range(1, d)])


def tr_core_gradients(cores: Sequence[np.ndarray], grad_tensor: np.ndarray) -> List[np.ndarray]:
    """dL/dG_k for every core, given dL/dT of the reconstructed tensor."""
    d = len(cores)
    grad_tensor = np.asarray(grad_tensor)
    grads = []
    for k in range(d):
        env = tr_environment(cores, k)
        g = np.transpose(grad_tensor, [(k + j) % d for j in range(d)])
        axes = list(range(1, d))
        out = np.tensordot(g, env, axes=(axes, axes))  # [L_k, R_{k+1}, R_k]
        grads.append(np.ascontiguousarray(out.transpose(2, 0, 1)))
    return grads


def core_design(cores: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Linear map from vec(core k) to the reconstructed tensor, shape [*dims, p]."""
    d = len(cores)
    env = tr_environment(cores, k)
    others = [j for j in range(d) if j != k]
    perm = [1 + (j - k - 1) % d for j in others] + [d, 0] if d > 1 else [1, 0]
    env = np.transpose(env, perm)  # [modes except k, R_k, R_{k+1}]
    L = cores[k].shape[1]
    full = np.multiply.outer(env, np.eye(L))  # [..., R_k, R_{k+1}, l_k, l']
    full = np.moveaxis(full, d + 1, k)  # [modes, R_k, R_{k+1}, l']
    full = np.moveaxis(full, d + 2, d + 1)  # [modes, R_k, l', R_{k+1}]
    return full.reshape([c.shape[1] for c in cores] + [cores[k].size])


# Persistence: "TRF1", <u4 d, then per core three <u4 dims and <f8 row-major payload.

def encode_format(f: _CoreChain) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", f.d))
    for c in f.cores:
        buf.write(struct.pack("<3I", *c.shape))
        buf.write(np.ascontiguousarray(c.data, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_format(blob: bytes, offset: int = 0) -> Tuple[TRFormat, int]:
    """Returns (format, offset just past it)."""
    if blob[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {blob[offset:offset + 4]!r}, expected {MAGIC!r}")
    pos = offset + 4
    try:
        (d,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        cores = []
        for _ in range(d):
            shape = struct.unpack_from("<3I", blob, pos)
            pos += 12
            if 0 in shape:
                raise FormatError(f"core {len(cores)} has an empty dimension: {list(shape)}")
            count = int(np.prod(shape))
            if pos + 8 * count > len(blob):
                raise FormatError(f"truncated payload for core of shape {list(shape)}")
            cores.append(np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape))
            pos += 8 * count
    except struct.error as e:
        raise FormatError(f"truncated header: {e}")
    if not cores:
        raise FormatError("format holds no cores")
    try:
        return TRFormat(cores), pos
    except ShapeError as e:
        raise FormatError(f"inconsistent cores: {e}")


def format_to_json(f: _CoreChain) -> Dict[str, Any]:
    return {
        "magic": MAGIC.decode(),
        "d": f.d,
        "cores": [{"shape": list(c.shape), "data": c.flat.tolist()} for c in f.cores],
    }


def format_from_json(doc: Dict[str, Any]) -> TRFormat:
    if doc.get("magic") != MAGIC.decode():
        raise FormatError(f"bad magic {doc.get('magic')!r} in JSON sidecar")
    cores = doc.get("cores", [])
    if len(cores) != doc.get("d"):
        raise FormatError(f"core count {len(cores)} does not match d={doc.get('d')}")
    try:
        return TRFormat([DenseTensor(c["data"], c["shape"]) for c in cores])
    except ShapeError as e:
        raise FormatError(f"inconsistent cores in JSON sidecar: {e}")


def save_format(f: _CoreChain, path: str, sidecar: bool = False) -> None:
    atomic_write_bytes(path, encode_format(f))
    if sidecar:
        atomic_write_text(path + ".json", json.dumps(format_to_json(f)))


def load_format(path: str) -> TRFormat:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            return format_from_json(json.load(fh))
    with open(path, "rb") as fh:
        blob = fh.read()
    f, end = decode_format(blob)
    if end != len(blob):
        raise FormatError(f"{len(blob) - end} trailing bytes after format payload")
    return f
