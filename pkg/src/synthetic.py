import os
import numpy as np
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import List, Dict, Optional, Any, Union, Tuple
from tqdm import tqdm

from src.core.errors import FitDivergenceError
from src.core.models import SyntheticConfig, FitConfig, RecoveryRow, MODELS
from src.formats import TRFormat, random_tr, tr_reconstruct
from src.training import fit_model, rmse_matrix
from src.storage import write_csv_rows, write_csv_grid, atomic_write_text

RECOVERY_FIELDS = ["model", "sigma", "seed", "rmse", "params", "epochs", "wall_ms"]

# Independent streams per seed: ground truth, data, fit initialisation.
WEIGHT_STREAM, DATA_STREAM, FIT_STREAM = 0, 1, 2


def derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), stream]).generate_state(1)[0])


def generate_lowrank_weight(cfg: SyntheticConfig, seed: int) -> Tuple[np.ndarray, Optional[TRFormat]]:
    """Ground-truth W (O x I) scaled to unit RMS, plus the ring that generated it."""
    I, O = cfg.dim_in, cfg.dim_out
    if cfg.generator == "matrix":
        rng = np.random.default_rng(derive_seed(seed, WEIGHT_STREAM))
        A = rng.standard_normal((O, cfg.gen_rank))
        B = rng.standard_normal((I, cfg.gen_rank))
        W = A @ B.T
        return W / np.sqrt(np.mean(W ** 2)), None
    dims = list(cfg.input_dims) + list(cfg.output_dims)
    gen = random_tr(dims, cfg.gen_rank, derive_seed(seed, WEIGHT_STREAM))
    M = tr_reconstruct(gen).data.reshape(I, O)
    s = float(np.sqrt(np.mean(M ** 2)))
    cores = gen.arrays()
    gen = TRFormat([cores[0] / s] + list(cores[1:]))
    return M.T / s, gen


def generate_dataset(W: np.ndarray, cfg: SyntheticConfig, sigma: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """x ~ N(0, input_variance I), y = W x + e with e ~ N(0, sigma^2 I)."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(derive_seed(seed, DATA_STREAM))
    O, I = W.shape
    X = rng.standard_normal((cfg.n_samples, I)) * np.sqrt(cfg.input_variance)
    E = rng.standard_normal((cfg.n_samples, O)) * sigma
    return X, X @ W.T + E


@dataclass
class CellResult:
    row: RecoveryRow
    error: Optional[str] = None
    weight: Optional[np.ndarray] = None


def run_cell(cfg: SyntheticConfig, fit_cfg: FitConfig, model: str, sigma: float, seed: int, keep_weight: bool = False) -> CellResult:
    """One (model, sigma, seed) cell of the recovery grid."""
    W, _ = generate_lowrank_weight(cfg, seed)
    X, Y = generate_dataset(W, cfg, sigma, seed)
    cell_cfg = replace(fit_cfg, seed=derive_seed(seed, FIT_STREAM))
    rank = cfg.fit_ranks.get(model, 1)
    try:
        res = fit_model(model, X, Y, cell_cfg, rank=rank, input_dims=cfg.input_dims, output_dims=cfg.output_dims,
                        record_timing=cfg.record_timing)
    except FitDivergenceError as e:
        row: RecoveryRow = {"model": model, "sigma": sigma, "seed": seed, "rmse": "", "params": 0, "epochs": e.epoch, "wall_ms": 0}
        return CellResult(row, str(e))
    wall = int(round(res.trace[-1]["wall_ms"])) if cfg.record_timing else 0
    row = {"model": model, "sigma": sigma, "seed": seed, "rmse": rmse_matrix(res.weight, W),
           "params": res.params, "epochs": res.epochs, "wall_ms": wall}
    return CellResult(row, None, res.weight if keep_weight else None)


@dataclass
class RecoveryReport:
    config: SyntheticConfig
    rows: List[RecoveryRow] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    heatmaps: Dict[str, np.ndarray] = field(default_factory=dict)

    def rmse(self, model: str, sigma: float) -> List[float]:
        return [r["rmse"] for r in self.rows if r["model"] == model and r["sigma"] == sigma and r["rmse"] != ""]

    def median(self, model: str, sigma: float) -> float:
        vals = self.rmse(model, sigma)
        return float(np.median(vals)) if vals else float("nan")

    def params(self, model: str) -> int:
        for r in self.rows:
            if r["model"] == model and r["params"]: return int(r["params"])
        return 0

    def wins(self, better: str, worse: str, sigma: float) -> int:
        """Seeds on which `better` has the lower RMSE."""
        by_seed: Dict[int, Dict[str, Any]] = {}
        for r in self.rows:
            if r["sigma"] == sigma and r["rmse"] != "":
                by_seed.setdefault(r["seed"], {})[r["model"]] = r["rmse"]
        return sum(1 for v in by_seed.values() if better in v and worse in v and v[better] < v[worse])

    def summary_text(self) -> str:
        models = [m for m in MODELS if m in self.config.models]
        lines = ["median RMSE over seeds " + str(list(self.config.seeds)),
                 "sigma    " + "".join(f"{m:>12}" for m in models)]
        for sigma in self.config.noise_sigmas:
            lines.append(f"{sigma:<9g}" + "".join(f"{self.median(m, sigma):>12.5f}" for m in models))
        lines.append("params   " + "".join(f"{self.params(m):>12d}" for m in models))
        if "tr" in models and "linear" in models:
            n = len(self.config.seeds)
            lines.append("tr < linear on seeds: " + ", ".join(f"sigma={s:g}: {self.wins('tr', 'linear', s)}/{n}" for s in self.config.noise_sigmas))
        if self.failures:
            lines.append(f"failed cells: {len(self.failures)}")
            lines.extend("  " + f for f in self.failures)
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = [write_csv_rows(os.path.join(out_dir, "recovery.csv"), RECOVERY_FIELDS, self.rows),
                   atomic_write_text(os.path.join(out_dir, "summary.txt"), self.summary_text())]
        for name, grid in sorted(self.heatmaps.items()):
            written.append(write_csv_grid(os.path.join(out_dir, "heatmaps", f"{name}.csv"), grid))
        return written


def run_recovery(cfg: SyntheticConfig, fit_cfg: Optional[FitConfig] = None, jobs: int = 1, verbose: bool = False) -> RecoveryReport:
    cfg.validate()
    fit_cfg = (fit_cfg or FitConfig()).validate()
    models = [m for m in MODELS if m in cfg.models]
    cells = [(m, s, seed) for s in cfg.noise_sigmas for seed in cfg.seeds for m in models]
    first_seed = cfg.seeds[0] if cfg.seeds else None
    results: Dict[Tuple[str, float, int], CellResult] = {}

    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(run_cell, cfg, fit_cfg, m, s, seed, cfg.heatmaps and seed == first_seed): (m, s, seed) for m, s, seed in cells}
            done = as_completed(futures)
            if verbose:
                done = tqdm(done, total=len(futures), desc="[SYNTH] cells")
            for fut in done:
                results[futures[fut]] = fut.result()
    else:
        it = tqdm(cells, desc="[SYNTH] cells") if verbose else cells
        for m, s, seed in it:
            results[(m, s, seed)] = run_cell(cfg, fit_cfg, m, s, seed, cfg.heatmaps and seed == first_seed)

    report = RecoveryReport(cfg)
    # Grid order, independent of completion order.
    for key in cells:
        res = results[key]
        report.rows.append(res.row)
        if res.error:
            report.failures.append(f"{key[0]} sigma={key[1]:g} seed={key[2]}: {res.error}")
        if res.weight is not None:
            report.heatmaps[f"{key[0]}_sigma{key[1]:g}"] = res.weight
    if cfg.heatmaps and first_seed is not None:
        report.heatmaps["truth"] = generate_lowrank_weight(cfg, first_seed)[0]
    return report
