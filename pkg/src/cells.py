import numpy as np
from dataclasses import dataclass
from typing import List, Dict, Optional, Any, Union, Tuple, Sequence

from src.core.config import AppConfig
from src.core.errors import ShapeError
from src.trl import TRLayer, unfold

GATES: Tuple[str, ...] = ("k", "f", "o", "g")

# A gate's input map: a ring layer or a dense I x H matrix applied as x @ W.
InputMap = Union[TRLayer, np.ndarray]


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def map_forward(W: InputMap, x: np.ndarray) -> np.ndarray:
    if isinstance(W, TRLayer): return W.apply(x)
    return x @ W


def map_backward(W: InputMap, x: np.ndarray, grad: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Parameter gradients (list, one per stored array) and the input gradient."""
    if isinstance(W, TRLayer):
        return W.backward(x, grad)
    if x.ndim == 1:
        return [np.outer(x, grad)], W @ grad
    return [x.T @ grad], grad @ W.T


def _map_sizes(W: InputMap) -> Tuple[int, int]:
    if isinstance(W, TRLayer): return W.I, W.O
    return W.shape[0], W.shape[1]


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"h shape {list(self.h.shape)} != c shape {list(self.c.shape)}")

    @classmethod
    def zeros(cls, hidden: int, batch: Optional[int] = None) -> "LSTMState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


class TRLSTMParams:
    def __init__(self, W: Dict[str, InputMap], U: Dict[str, np.ndarray], b: Dict[str, np.ndarray]):
        for name in GATES:
            if name not in W or name not in U or name not in b:
                raise ShapeError(f"missing parameters for gate '{name}'")
        self.W: Dict[str, InputMap] = {g: (W[g] if isinstance(W[g], TRLayer) else np.asarray(W[g], dtype=np.float64)) for g in GATES}
        self.U: Dict[str, np.ndarray] = {g: np.asarray(U[g], dtype=np.float64) for g in GATES}
        self.b: Dict[str, np.ndarray] = {g: np.asarray(b[g], dtype=np.float64) for g in GATES}
        sizes = {_map_sizes(self.W[g]) for g in GATES}
        if len(sizes) != 1:
            raise ShapeError(f"gate input maps disagree on shape: {sorted(sizes)}")
        self.input_size, self.hidden_size = sizes.pop()
        H = self.hidden_size
        for g in GATES:
            if self.U[g].shape != (H, H):
                raise ShapeError(f"U_{g} must be {H}x{H}, got {list(self.U[g].shape)}")
            if self.b[g].shape != (H,):
                raise ShapeError(f"b_{g} must have length {H}, got {list(self.b[g].shape)}")

    @classmethod
    def init(cls, input_dims: Sequence[int], hidden_dims: Sequence[int], ranks: Union[int, Sequence[int]], seed: int = 0, forget_bias: float = AppConfig.FORGET_BIAS, dense: bool = False) -> "TRLSTMParams":
        """Four independent core sets (one per gate); U dense, forget bias set."""
        rng = np.random.default_rng(seed)
        I = int(np.prod(input_dims))
        H = int(np.prod(hidden_dims))
        W: Dict[str, InputMap] = {}
        for i, g in enumerate(GATES):
            if dense:
                W[g] = rng.standard_normal((I, H)) / np.sqrt(I)
            else:
                W[g] = TRLayer.random(input_dims, hidden_dims, ranks, seed=int(rng.integers(2**31)) + i)
        U = {g: rng.standard_normal((H, H)) / np.sqrt(H) for g in GATES}
        b = {g: np.zeros(H) for g in GATES}
        b["f"] = np.full(H, float(forget_bias))
        return cls(W, U, b)

    def is_dense(self) -> bool:
        return not any(isinstance(self.W[g], TRLayer) for g in GATES)

    def to_dense(self) -> "TRLSTMParams":
        """Same cell with each ring layer replaced by its unfolded matrix."""
        W = {g: (unfold(self.W[g]) if isinstance(self.W[g], TRLayer) else self.W[g].copy()) for g in GATES}
        return TRLSTMParams(W, {g: u.copy() for g, u in self.U.items()}, {g: v.copy() for g, v in self.b.items()})

    def input_param_count(self) -> int:
        total = 0
        for g in GATES:
            W = self.W[g]
            total += W.param_count() if isinstance(W, TRLayer) else W.size
        return total

    def param_count(self) -> int:
        H = self.hidden_size
        return self.input_param_count() + 4 * (H * H + H)

    def parameters(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view. Ring cores are named W_<gate>.<core>."""
        out: Dict[str, np.ndarray] = {}
        for g in GATES:
            W = self.W[g]
            if isinstance(W, TRLayer):
                for k, core in enumerate(W.arrays()):
                    out[f"W_{g}.{k}"] = core
            else:
                out[f"W_{g}"] = W
        for g in GATES:
            out[f"U_{g}"] = self.U[g]
        for g in GATES:
            out[f"b_{g}"] = self.b[g]
        return out

    def with_parameters(self, params: Dict[str, np.ndarray]) -> "TRLSTMParams":
        W: Dict[str, InputMap] = {}
        for g in GATES:
            old = self.W[g]
            if isinstance(old, TRLayer):
                W[g] = old.with_cores([params[f"W_{g}.{k}"] for k in range(len(old.arrays()))])
            else:
                W[g] = params[f"W_{g}"]
        return TRLSTMParams(W, {g: params[f"U_{g}"] for g in GATES}, {g: params[f"b_{g}"] for g in GATES})


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite value in cell input")


def _lstm_forward(p: TRLSTMParams, s: LSTMState, x: np.ndarray) -> Tuple[LSTMState, Dict[str, np.ndarray]]:
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"input length {x.shape[-1]} != cell input size {p.input_size}")
    if s.h.shape[-1] != p.hidden_size:
        raise ShapeError(f"state length {s.h.shape[-1]} != hidden size {p.hidden_size}")
    pre = {g: map_forward(p.W[g], x) + s.h @ p.U[g].T + p.b[g] for g in GATES}
    k, f, o = sigmoid(pre["k"]), sigmoid(pre["f"]), sigmoid(pre["o"])
    g = np.tanh(pre["g"])
    c = f * s.c + k * g
    tc = np.tanh(c)
    h = o * tc
    cache = {"x": x, "h_prev": s.h, "c_prev": s.c, "k": k, "f": f, "o": o, "g": g, "c": c, "tc": tc}
    return LSTMState(h, c), cache


def tr_lstm_step(p: TRLSTMParams, s: LSTMState, x: np.ndarray) -> LSTMState:
    return _lstm_forward(p, s, x)[0]


def lstm_gates(p: TRLSTMParams, s: LSTMState, x: np.ndarray) -> Dict[str, np.ndarray]:
    """Transient gate values k, f, o, g of one step."""
    cache = _lstm_forward(p, s, x)[1]
    return {name: cache[name] for name in GATES}


def tr_rnn_step(W_hx: InputMap, U_hh: np.ndarray, b: np.ndarray, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    _, H = _map_sizes(W_hx)
    if U_hh.shape != (H, H) or b.shape != (H,) or h_prev.shape[-1] != H:
        raise ShapeError(f"recurrent shapes U={list(U_hh.shape)} b={list(b.shape)} h={list(h_prev.shape)} inconsistent with hidden size {H}")
    return sigmoid(map_forward(W_hx, x) + h_prev @ U_hh.T + b)


def _check_sequence(x_seq: Sequence[np.ndarray]) -> List[np.ndarray]:
    if len(x_seq) == 0:
        raise ValueError("cannot run an empty sequence")
    xs = [np.asarray(x, dtype=np.float64) for x in x_seq]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"sequence steps have differing shapes: {sorted(shapes)}")
    return xs


def run_sequence(p: TRLSTMParams, x_seq: Sequence[np.ndarray], s0: Optional[LSTMState] = None) -> Tuple[List[LSTMState], np.ndarray]:
    xs = _check_sequence(x_seq)
    s = s0 if s0 is not None else LSTMState.zeros(p.hidden_size, xs[0].shape[0] if xs[0].ndim == 2 else None)
    states = []
    for x in xs:
        s = tr_lstm_step(p, s, x)
        states.append(s)
    return states, states[-1].h


def run_rnn_sequence(W_hx: InputMap, U_hh: np.ndarray, b: np.ndarray, x_seq: Sequence[np.ndarray], h0: Optional[np.ndarray] = None) -> List[np.ndarray]:
    xs = _check_sequence(x_seq)
    H = U_hh.shape[0]
    h = h0 if h0 is not None else np.zeros((xs[0].shape[0], H) if xs[0].ndim == 2 else H)
    hs = []
    for x in xs:
        h = tr_rnn_step(W_hx, U_hh, b, h, x)
        hs.append(h)
    return hs


def lstm_bptt(p: TRLSTMParams, x_seq: Sequence[np.ndarray], grad_h: np.ndarray, s0: Optional[LSTMState] = None) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gradients of a loss on the final hidden state, keyed like parameters().

    Returns (grads, final h). grad_h is dL/dh_T with the shape of h_T.
    """
    xs = _check_sequence(x_seq)
    s = s0 if s0 is not None else LSTMState.zeros(p.hidden_size, xs[0].shape[0] if xs[0].ndim == 2 else None)
    caches = []
    for x in xs:
        s, cache = _lstm_forward(p, s, x)
        caches.append(cache)

    grads = {name: np.zeros_like(v) for name, v in p.parameters().items()}
    dh = np.asarray(grad_h, dtype=np.float64)
    dc = np.zeros_like(dh)
    for cache in reversed(caches):
        k, f, o, g, tc = cache["k"], cache["f"], cache["o"], cache["g"], cache["tc"]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        da = {
            "k": dc * g * k * (1.0 - k),
            "f": dc * cache["c_prev"] * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "g": dc * k * (1.0 - g ** 2),
        }
        h_prev = cache["h_prev"]
        dh = np.zeros_like(dh)
        for q in GATES:
            a = da[q]
            if a.ndim == 1:
                grads[f"U_{q}"] += np.outer(a, h_prev)
                grads[f"b_{q}"] += a
            else:
                grads[f"U_{q}"] += a.T @ h_prev
                grads[f"b_{q}"] += a.sum(axis=0)
            w_grads, _ = map_backward(p.W[q], cache["x"], a)
            if isinstance(p.W[q], TRLayer):
                for j, gw in enumerate(w_grads):
                    grads[f"W_{q}.{j}"] += gw
            else:
                grads[f"W_{q}"] += w_grads[0]
            dh = dh + a @ p.U[q]
        dc = dc * f
    return grads, s.h
