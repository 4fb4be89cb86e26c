import copy
import numpy as np
from dataclasses import dataclass
from typing import List, Dict, Optional, Any, Tuple
from tqdm import tqdm

from src.core.models import ToyTrainConfig
from src.cells import TRLSTMParams, lstm_bptt, run_sequence
from src.training import Adam


def make_task(cfg: ToyTrainConfig, n: int, seed: int, prototypes: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sequences x_t = mu_c + noise. Returns (X [n, T, I], labels [n], prototypes [C, I])."""
    I = int(np.prod(cfg.input_dims))
    rng = np.random.default_rng(seed)
    if prototypes is None:
        prototypes = rng.standard_normal((cfg.n_classes, I))
    labels = rng.integers(cfg.n_classes, size=n)
    X = prototypes[labels][:, None, :] + cfg.noise * rng.standard_normal((n, cfg.steps, I))
    return X, labels, prototypes


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SequenceClassifier:
    """LSTM cell (ring or dense input maps) with a softmax readout of the final hidden state."""

    def __init__(self, cell: TRLSTMParams, n_classes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cell = cell
        H = cell.hidden_size
        self.V: np.ndarray = rng.standard_normal((n_classes, H)) / np.sqrt(H)
        self.c: np.ndarray = np.zeros(n_classes)

    def logits(self, X: np.ndarray) -> np.ndarray:
        _, h = run_sequence(self.cell, [X[:, t] for t in range(X.shape[1])])
        return h @ self.V.T + self.c

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def accuracy(self, X: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(X) == labels))

    def loss_and_grads(self, X: np.ndarray, labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        xs = [X[:, t] for t in range(X.shape[1])]
        _, h = run_sequence(self.cell, xs)
        p = softmax(h @ self.V.T + self.c)
        B = X.shape[0]
        loss = float(-np.mean(np.log(p[np.arange(B), labels] + 1e-12)))
        dlogits = p.copy()
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B
        grads, _ = lstm_bptt(self.cell, xs, dlogits @ self.V)
        grads["V"] = dlogits.T @ h
        grads["c"] = dlogits.sum(axis=0)
        return loss, grads

    def parameters(self) -> Dict[str, np.ndarray]:
        params = dict(self.cell.parameters())
        params["V"] = self.V
        params["c"] = self.c
        return params

    def set_parameters(self, params: Dict[str, np.ndarray]) -> None:
        self.V = params["V"]
        self.c = params["c"]
        self.cell = self.cell.with_parameters(params)


@dataclass
class ToyResult:
    name: str
    train_accuracy: float
    test_accuracy: float
    input_params: int
    total_params: int
    losses: List[float]


def train_classifier(model: SequenceClassifier, X: np.ndarray, labels: np.ndarray, cfg: ToyTrainConfig, seed: int = 0, desc: Optional[str] = None) -> List[float]:
    rng = np.random.default_rng(seed)
    proto = Adam(cfg.learning_rate)
    opts = {name: copy.copy(proto) for name in model.parameters()}
    losses = []
    epochs = tqdm(range(cfg.epochs), desc=desc) if desc else range(cfg.epochs)
    for _ in epochs:
        order = rng.permutation(len(labels))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grads = model.loss_and_grads(X[idx], labels[idx])
            params = model.parameters()
            model.set_parameters({name: opts[name].update(params[name], grads[name]) for name in params})
            total += loss * len(idx)
        losses.append(total / len(labels))
    return losses


def run_toytrain(cfg: ToyTrainConfig, verbose: bool = False) -> Dict[str, ToyResult]:
    """Train a ring-layer LSTM and a dense LSTM on the same task."""
    X_train, y_train, protos = make_task(cfg, cfg.n_train, cfg.seed)
    X_test, y_test, _ = make_task(cfg, cfg.n_test, cfg.seed + 1, protos)
    results = {}
    for name, dense in (("tr", False), ("dense", True)):
        cell = TRLSTMParams.init(cfg.input_dims, cfg.hidden_dims, cfg.rank, seed=cfg.seed, forget_bias=cfg.forget_bias, dense=dense)
        model = SequenceClassifier(cell, cfg.n_classes, seed=cfg.seed)
        losses = train_classifier(model, X_train, y_train, cfg, seed=cfg.seed, desc=f"[TOY] {name}" if verbose else None)
        results[name] = ToyResult(name, model.accuracy(X_train, y_train), model.accuracy(X_test, y_test),
                                  model.cell.input_param_count(), model.cell.param_count() + model.V.size + model.c.size, losses)
    return results
