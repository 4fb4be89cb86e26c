import numpy as np
from typing import List, Dict, Optional, Any, Tuple

from src.core.models import GradCheckConfig
from src.cells import TRLSTMParams, lstm_bptt, run_sequence
from src.trl import TRLayer
from src.training import GradCheckReport, grad_check


def check_linear(cfg: GradCheckConfig, seed: int) -> GradCheckReport:
    """Quadratic loss 0.5 * ||W x - t||^2 on a dense map."""
    rng = np.random.default_rng(seed)
    W, x, t = rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal(3)

    def loss(p: Dict[str, np.ndarray]) -> float:
        r = p["W"] @ x - t
        return 0.5 * float(r @ r)

    analytic = {"W": np.outer(W @ x - t, x)}
    return grad_check(loss, {"W": W}, analytic, cfg.eps, cfg.tol)


def random_layer(rng: np.random.Generator) -> TRLayer:
    n, m = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    dims = [int(v) for v in rng.integers(2, 4, size=n + m)]
    ranks = [int(v) for v in rng.integers(1, 4, size=n + m)]
    return TRLayer.random(dims[:n], dims[n:], ranks, seed=int(rng.integers(2**31)), target_variance=1.0)


def check_layer(layer: TRLayer, cfg: GradCheckConfig, seed: int, corrupt: bool = False) -> GradCheckReport:
    """Loss <grad_y, TRL(x)> against central differences in every core scalar and in x."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(layer.I)
    gy = rng.standard_normal(layer.O)
    d = len(layer.arrays())

    def loss(p: Dict[str, np.ndarray]) -> float:
        probe = layer.with_cores([p[f"core{k}"] for k in range(d)])
        return float(gy @ probe.apply(p["x"]))

    params = {f"core{k}": c for k, c in enumerate(layer.arrays())}
    params["x"] = x
    core_grads, gx = layer.backward(x, gy)
    analytic = {f"core{k}": g.copy() for k, g in enumerate(core_grads)}
    analytic["x"] = gx
    if corrupt:
        analytic["core0"].reshape(-1)[0] += 0.1
    return grad_check(loss, params, analytic, cfg.eps, cfg.tol)


def check_lstm(cfg: GradCheckConfig, seed: int, steps: int = 2) -> GradCheckReport:
    """BPTT of <v, h_T> on a small ring-layer LSTM (I = 2*4, H = 2*2)."""
    rng = np.random.default_rng(seed)
    cell = TRLSTMParams.init((2, 4), (2, 2), 2, seed=seed)
    xs = [rng.standard_normal(8) for _ in range(steps)]
    v = rng.standard_normal(4)

    def loss(p: Dict[str, np.ndarray]) -> float:
        _, h = run_sequence(cell.with_parameters(p), xs)
        return float(v @ h)

    analytic, _ = lstm_bptt(cell, xs, v)
    return grad_check(loss, cell.parameters(), analytic, cfg.eps, cfg.lstm_tol)


def run_gradchecks(cfg: GradCheckConfig, corrupt: bool = False) -> List[Tuple[str, GradCheckReport]]:
    """The full suite. With corrupt, one core scalar of the first layer check is perturbed by 0.1."""
    rng = np.random.default_rng(cfg.seed)
    results = [("linear", check_linear(cfg, cfg.seed))]
    for i in range(cfg.instances):
        layer = random_layer(rng)
        results.append((f"trl[{i}] {layer.input_dims}->{layer.output_dims} R={layer.ranks}",
                        check_layer(layer, cfg, int(rng.integers(2**31)), corrupt=corrupt and i == 0)))
    results.append(("tr-lstm 2-step", check_lstm(cfg, cfg.seed)))
    return results
