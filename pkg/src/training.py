import copy
import time
import numpy as np
from dataclasses import dataclass, field
from typing import List, Dict, Optional, Any, Union, Tuple, Callable, Sequence
from tqdm import tqdm

from src.core.config import AppConfig
from src.core.errors import ShapeError, ConfigError, FitDivergenceError
from src.core.models import FitConfig, LossRow
from src.formats import TRFormat, TTFormat, random_tr, tr_reconstruct, tr_core_gradients, core_design, param_count
from src.storage import write_csv_rows


def mse_loss(pred: Any, target: Any) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {list(pred.shape)} != target shape {list(target.shape)}")
    return float(np.mean((pred - target) ** 2))


def rmse_matrix(A: Any, B: Any) -> float:
    A, B = np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ShapeError(f"matrix shapes differ: {list(A.shape)} vs {list(B.shape)}")
    return float(np.sqrt(np.mean((A - B) ** 2)))


# Gradient checking

ABS_FLOOR = 1e-12


@dataclass
class GradCheckReport:
    """errors: norm ratio per array. scalar_errors: worst single scalar per array, scaled by the
    array's largest gradient magnitude. Both must stay within tol."""
    errors: Dict[str, float]
    eps: float
    tol: float
    scalar_errors: Dict[str, float] = field(default_factory=dict)
    scalar_index: Dict[str, Tuple[int, ...]] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        both = list(self.errors.values()) + list(self.scalar_errors.values())
        return max(both) if both else 0.0

    @property
    def worst_scalar(self) -> Optional[Tuple[str, Tuple[int, ...]]]:
        if not self.scalar_errors: return None
        name = max(self.scalar_errors, key=self.scalar_errors.get)
        return name, self.scalar_index[name]

    @property
    def worst(self) -> Optional[str]:
        if not self.errors: return None
        scores = {k: max(v, self.scalar_errors.get(k, 0.0)) for k, v in self.errors.items()}
        return max(scores, key=scores.get)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else f"FAIL (worst: {self.worst}{list(self.scalar_index.get(self.worst, ()))})"
        return f"max rel. err {self.max_error:.3e} (eps={self.eps:g}, tol={self.tol:g}) {status}"


def numerical_gradients(loss_fn: Callable[[Dict[str, np.ndarray]], float], params: Dict[str, np.ndarray], eps: float) -> Dict[str, np.ndarray]:
    """Central differences, one scalar at a time."""
    work = {name: np.array(v, dtype=np.float64, copy=True) for name, v in params.items()}
    grads = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss_fn(work)
            flat[i] = orig - eps
            minus = loss_fn(work)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * eps)
        grads[name] = g
    return grads


def grad_check(loss_fn: Callable[[Dict[str, np.ndarray]], float], params: Dict[str, np.ndarray], analytic: Dict[str, np.ndarray], eps: float = AppConfig.GRAD_EPS, tol: float = AppConfig.GRAD_TOL) -> GradCheckReport:
    lo, hi = AppConfig.GRAD_EPS_RANGE
    if not lo <= eps <= hi:
        raise ConfigError(f"eps must lie in [{lo:g}, {hi:g}], got {eps:g}", "gradcheck.eps")
    numeric = numerical_gradients(loss_fn, params, eps)
    errors, scalar_errors, scalar_index = {}, {}, {}
    for name in params:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = numeric[name]
        if a.shape != n.shape:
            raise ShapeError(f"analytic gradient for '{name}' has shape {list(a.shape)}, expected {list(n.shape)}")
        errors[name] = float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), ABS_FLOOR))
        if a.size:
            diff = np.abs(a - n)
            i = int(np.argmax(diff))
            scalar_errors[name] = float(diff.flat[i] / max(float(np.max(np.abs(a) + np.abs(n))), ABS_FLOOR))
            scalar_index[name] = tuple(int(j) for j in np.unravel_index(i, a.shape))
    return GradCheckReport(errors, eps, tol, scalar_errors, scalar_index)


# Optimizers: one copy per parameter, update(param, grad) -> new param.

class SGD:
    def __init__(self, learning_rate: float = 0.01):
        self.learning_rate = learning_rate

    def update(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return param - self.learning_rate * grad


class Adam:
    def __init__(self, learning_rate: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def update(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return param - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def make_optimizer(cfg: FitConfig) -> Union[SGD, Adam]:
    if cfg.optimizer == "sgd": return SGD(cfg.learning_rate)
    if cfg.optimizer == "adam": return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    raise ConfigError(f"optimizer '{cfg.optimizer}' has no update rule", "fit.optimizer")


# Regression fitting. Predictions are Y = X M with M = unfold(weight tensor) of shape I x O,
# so the recovered weight is W_hat = M^T. Everything runs on Gram statistics.

@dataclass
class Gram:
    Sxx: np.ndarray
    Sxy: np.ndarray
    syy: float
    scale: float  # N * O

    @classmethod
    def of(cls, X: np.ndarray, Y: np.ndarray) -> "Gram":
        return cls(X.T @ X, X.T @ Y, float(np.sum(Y * Y)), float(X.shape[0] * Y.shape[1]))

    def loss(self, M: np.ndarray) -> float:
        return float((np.sum(M * (self.Sxx @ M)) - 2.0 * np.sum(M * self.Sxy) + self.syy) / self.scale)

    def grad(self, M: np.ndarray) -> np.ndarray:
        return 2.0 * (self.Sxx @ M - self.Sxy) / self.scale


@dataclass
class FitResult:
    model: str
    weight: np.ndarray
    trace: List[LossRow] = field(default_factory=list)
    cores: Optional[Union[TRFormat, TTFormat]] = None

    @property
    def epochs(self) -> int:
        return len(self.trace)

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["loss"] if self.trace else float("nan")

    @property
    def params(self) -> int:
        if self.cores is not None: return param_count(self.cores)
        return int(self.weight.size)


def solve_normal_equations(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Least-squares W_hat (O x I) for Y ~ X W^T."""
    M, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return M.T


def _batches(N: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    if batch_size <= 0 or batch_size >= N:
        return [np.arange(N)]
    order = rng.permutation(N)
    return [order[i:i + batch_size] for i in range(0, N, batch_size)]


def _unfold(cores: Sequence[np.ndarray], I: int, O: int) -> np.ndarray:
    return tr_reconstruct(TRFormat(cores)).data.reshape(I, O)


def _als_sweep(cores: List[np.ndarray], gram: Gram, I: int, O: int) -> None:
    for k in range(len(cores)):
        A = core_design(cores, k).reshape(I, O, -1)
        SA = np.tensordot(gram.Sxx, A, axes=([1], [0]))
        H = np.tensordot(A, SA, axes=([0, 1], [0, 1]))
        rhs = np.tensordot(A, gram.Sxy, axes=([0, 1], [0, 1]))
        g, *_ = np.linalg.lstsq(H, rhs, rcond=None)
        cores[k] = g.reshape(cores[k].shape)


def fit_model(model: str, X: np.ndarray, Y: np.ndarray, cfg: FitConfig, rank: int = 3,
              input_dims: Optional[Sequence[int]] = None, output_dims: Optional[Sequence[int]] = None,
              record_timing: bool = True, verbose: bool = False) -> FitResult:
    """Fit Y ~ X W^T with a dense (linear), tensor-train (tt) or tensor-ring (tr) W."""
    cfg.validate()
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ShapeError(f"X {list(X.shape)} and Y {list(Y.shape)} must be N x I and N x O")
    N, I = X.shape
    O = Y.shape[1]
    if model not in ("linear", "tt", "tr"):
        raise ConfigError(f"unknown model '{model}'", "synthetic.models")

    rng = np.random.default_rng(cfg.seed)
    full = Gram.of(X, Y)
    trace: List[LossRow] = []
    start = time.perf_counter()

    def record(epoch: int, loss: float) -> None:
        if not np.isfinite(loss) or loss > AppConfig.LOSS_CEILING:
            raise FitDivergenceError(model, epoch, loss)
        wall = (time.perf_counter() - start) * 1000.0 if record_timing else 0.0
        trace.append({"epoch": epoch, "loss": loss, "wall_ms": wall})

    epochs = range(1, cfg.epochs + 1)
    if verbose:
        epochs = tqdm(epochs, desc=f"[FIT] {model}", leave=False)

    if model == "linear":
        if cfg.optimizer == "als":
            M = solve_normal_equations(X, Y).T
            record(1, full.loss(M))
            return FitResult(model, M.T, trace)
        M = np.zeros((I, O))
        opt = make_optimizer(cfg)
        for epoch in epochs:
            for idx in _batches(N, cfg.batch_size, rng):
                gram = full if len(idx) == N else Gram.of(X[idx], Y[idx])
                M = opt.update(M, gram.grad(M))
            record(epoch, full.loss(M))
        return FitResult(model, M.T, trace)

    if input_dims is None or output_dims is None:
        raise ShapeError(f"model '{model}' needs input_dims and output_dims")
    if int(np.prod(input_dims)) != I or int(np.prod(output_dims)) != O:
        raise ShapeError(f"dims {list(input_dims)} x {list(output_dims)} do not factor {I} x {O}")
    dims = list(input_dims) + list(output_dims)
    d = len(dims)
    # TT is the ring with a unit closing bond.
    ranks = [rank] * d if model == "tr" else [1] + [rank] * (d - 1)
    cores = [np.array(c) for c in random_tr(dims, ranks, cfg.seed, cfg.init_variance).arrays()]

    if cfg.optimizer == "als":
        for epoch in epochs:
            _als_sweep(cores, full, I, O)
            record(epoch, full.loss(_unfold(cores, I, O)))
    else:
        proto = make_optimizer(cfg)
        opts = [copy.copy(proto) for _ in cores]
        for epoch in epochs:
            for idx in _batches(N, cfg.batch_size, rng):
                gram = full if len(idx) == N else Gram.of(X[idx], Y[idx])
                dM = gram.grad(_unfold(cores, I, O))
                grads = tr_core_gradients(cores, dM.reshape(dims))
                cores = [opt.update(c, g) for opt, c, g in zip(opts, cores, grads)]
            record(epoch, full.loss(_unfold(cores, I, O)))

    fmt = TRFormat(cores) if model == "tr" else TTFormat(cores)
    return FitResult(model, _unfold(cores, I, O).T, trace, fmt)


def write_loss_trace(path: str, trace: Sequence[LossRow]) -> str:
    return write_csv_rows(path, ["epoch", "loss", "wall_ms"], trace)
