import os
import numpy as np
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import List, Dict, Optional, Any, Tuple
from tqdm import tqdm

from src.core.errors import SweepError
from src.core.models import SweepSpec, FlopReport, SweepRow
from src.trl import forward_cost, backward_cost
from src.storage import write_csv_rows

SWEEP_FIELDS = ["variable", "value", "multiply_adds", "peak_scalars"]

# Defaults per swept variable. The R sweep keeps the largest backward point near 1e8 multiply-adds.
DEFAULT_SWEEPS: Dict[str, Dict[str, Any]] = {
    "R": {"values": [2, 4, 8, 16], "input_dims": (2, 2, 2), "output_dims": (2, 2, 2, 2, 2)},
    "I": {"values": [64, 128, 256, 512], "input_dims": (4, 4, 4), "output_dims": (2, 2, 2, 2, 2), "rank": 4},
    "O": {"values": [64, 128, 256, 512], "input_dims": (2, 2, 2, 2, 2), "output_dims": (4, 4, 4), "rank": 4},
    "d": {"values": [2, 4, 6, 8], "core_dim": 2, "rank": 3},
}


def default_sweep(variable: str, **overrides: Any) -> SweepSpec:
    params = dict(DEFAULT_SWEEPS.get(variable, {}))
    params.update(overrides)
    return SweepSpec(variable=variable, **params).validate()


@dataclass
class SweepPoint:
    value: int
    forward: FlopReport
    backward: FlopReport
    backward_total: FlopReport
    per_core: List[FlopReport] = field(default_factory=list)


@dataclass
class SweepReport:
    spec: SweepSpec
    points: List[SweepPoint] = field(default_factory=list)

    def series(self, pass_name: str, what: str = "multiply_adds") -> List[int]:
        out = []
        for p in self.points:
            rep = p.forward if pass_name == "forward" else p.backward
            out.append(rep.multiply_adds if what == "multiply_adds" else rep.peak_intermediate_scalars)
        return out

    def slope(self, pass_name: str, what: str = "multiply_adds") -> float:
        return fit_slope([p.value for p in self.points], self.series(pass_name, what))

    def rows(self, pass_name: str) -> List[SweepRow]:
        rows: List[SweepRow] = []
        for p in self.points:
            rep = p.forward if pass_name == "forward" else p.backward
            rows.append({"variable": self.spec.variable, "value": p.value,
                         "multiply_adds": rep.multiply_adds, "peak_scalars": rep.peak_intermediate_scalars})
        rows.append({"variable": "slope", "value": pass_name,
                     "multiply_adds": round(self.slope(pass_name), 6),
                     "peak_scalars": round(self.slope(pass_name, "peak"), 6)})
        return rows

    def write(self, out_dir: str) -> List[str]:
        written = []
        for pass_name in self.spec.passes:
            path = os.path.join(out_dir, f"complexity_{self.spec.layer}_{self.spec.variable}_{pass_name}.csv")
            written.append(write_csv_rows(path, SWEEP_FIELDS, self.rows(pass_name)))
        return written


def fit_slope(xs: List[float], ys: List[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(xs) < 4:
        raise SweepError(f"slope fitting needs >= 4 points, got {len(xs)}")
    if min(ys) <= 0:
        raise SweepError(f"counts must be positive for a log-log fit, got {list(ys)}")
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)[0])


def layer_shape(spec: SweepSpec, value: int) -> Tuple[Tuple[int, ...], Tuple[int, ...], List[int]]:
    """(input_dims, output_dims, ring ranks) of one sweep point."""
    input_dims, output_dims, rank = tuple(spec.input_dims), tuple(spec.output_dims), spec.rank
    if spec.variable == "R":
        rank = value
    elif spec.variable == "I":
        rest = int(np.prod(input_dims[:-1]))
        if value % rest:
            raise SweepError(f"I={value} is not a multiple of the fixed input dims {list(input_dims[:-1])}")
        input_dims = input_dims[:-1] + (value // rest,)
    elif spec.variable == "O":
        rest = int(np.prod(output_dims[:-1]))
        if value % rest:
            raise SweepError(f"O={value} is not a multiple of the fixed output dims {list(output_dims[:-1])}")
        output_dims = output_dims[:-1] + (value // rest,)
    elif spec.variable == "d":
        if value < 2:
            raise SweepError(f"core count must be >= 2, got {value}")
        n = value // 2
        input_dims = (spec.core_dim,) * n
        output_dims = (spec.core_dim,) * (value - n)
    d = len(input_dims) + len(output_dims)
    ranks = [rank] * d
    if spec.layer == "tt":
        ranks[0] = 1
    return input_dims, output_dims, ranks


def measure_point(spec: SweepSpec, value: int) -> SweepPoint:
    input_dims, output_dims, ranks = layer_shape(spec, value)
    B = spec.batch
    if spec.layer == "dense":
        I, O = int(np.prod(input_dims)), int(np.prod(output_dims))
        fwd = FlopReport(B * I * O, B * O)
        bwd = FlopReport(2 * B * I * O, max(I * O, B * I))
        return SweepPoint(value, fwd, bwd, bwd)
    fwd = forward_cost(input_dims, output_dims, ranks, B)
    per_core, gx = backward_cost(input_dims, output_dims, ranks, B)
    # The costliest single core gradient stands for the pass.
    rep = max(per_core, key=lambda r: r.multiply_adds)
    total = gx
    for r in per_core:
        total = total.merged(r)
    return SweepPoint(value, fwd, rep, total, per_core)


def run_sweep(spec: SweepSpec, jobs: int = 1, verbose: bool = False) -> SweepReport:
    spec.validate()
    values = list(spec.values)
    points: Dict[int, SweepPoint] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(measure_point, spec, v): v for v in values}
            for fut in as_completed(futures):
                points[futures[fut]] = fut.result()
    else:
        it = tqdm(values, desc=f"[SWEEP] {spec.variable}") if verbose else values
        for v in it:
            points[v] = measure_point(spec, v)
    return SweepReport(spec, [points[v] for v in values])
