"""Analytic attention-cost model and wall-time scaling measurements.

Attention-cost units count the multiply-adds of the two quadratic products,
``Q K^T`` and ``weights V``, per attention layer; projections and the FFN are
excluded. Per layer:

* flat Transformer over ``L = M*K`` tokens: ``(M*K)^2 * d``
* Hi-Transformer: two sentence passes over ``K+1`` slots plus one document
  pass over ``M`` sentences: ``2*M*(K+1)^2*d + M^2*d``

Published complexity of related long-document encoders, for reference
(``T`` is the number of attended positions in sparse attention):
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import additive_mask, encoder_block_forward, init_encoder_block
from .errors import BenchmarkError, ConfigError
from .hi_layer import HiddenStates, hi_layer_forward, init_hi_layer
from .numerics import Tensor, no_grad, set_check_finite

COMPLEXITY = {
    "Transformer": "O(M^2 * K^2 * d)",
    "Longformer": "O(T * M * K * d)",
    "BigBird": "O(T * M * K * d)",
    "HI-BERT": "O(M * K^2 * d + M^2 * d)",
    "Hi-Transformer": "O(M * K^2 * d + M^2 * d)",
}
__doc__ += "".join(f"\n* {name}: ``{cost}``" for name, cost in COMPLEXITY.items()) + "\n"

CSV_COLUMNS = ("kind", "L", "M", "K", "d", "analytic_units", "median_s", "stddev_s")


def flop_estimate(kind: str, m: int, k: int, d: int) -> int:
    """Attention-cost units per layer (exact integers)."""
    if min(m, k, d) < 1:
        raise ConfigError(f"M, K, d must be >= 1, got {m}, {k}, {d}")
    if kind == "hi":
        return 2 * m * (k + 1) ** 2 * d + m * m * d
    if kind == "flat":
        return (m * k) ** 2 * d
    raise ConfigError(f"unknown model kind {kind!r}")


@dataclass
class CostReport:
    kind: str
    L: int
    M: int
    K: int
    d: int
    analytic_units: int
    median_s: float
    stddev_s: float
    repeats: int
    layers: int = 1
    status: str = "ok"  # or "over_memory_budget" (not run)

    def csv_row(self) -> list:
        return [self.kind, self.L, self.M, self.K, self.d, self.analytic_units, repr(self.median_s), repr(self.stddev_s)]


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(1)


def time_call(fn, repeats: int) -> tuple[float, float]:
    """One discarded warm-up call, then median and stddev of ``repeats`` timed calls."""
    if repeats < 5:
        raise ConfigError(f"need at least 5 repeats, got {repeats}")
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    median = statistics.median(samples)
    tick = time.get_clock_info("perf_counter").resolution
    if median < 50 * tick:
        raise BenchmarkError(f"median {median:.3g}s is below 50 timer ticks ({tick:.3g}s); use larger shapes")
    return median, statistics.stdev(samples)


def attention_workspace_bytes(length: int, heads: int, itemsize: int = 4) -> int:
    """Rough peak size of the score/weight tensors for one flat layer (4 live copies)."""
    return 4 * heads * length * length * itemsize


def measure_hi(m: int, k: int, d: int, heads: int, repeats: int, seed: int = 0) -> CostReport:
    rng = np.random.default_rng(seed)
    layer = init_hi_layer("bench", rng, d, heads, 4 * d)
    table = Tensor(rng.normal(0, 0.02, (m, d)).astype(np.float32))
    words = Tensor(rng.normal(0, 1, (1, m, k + 1, d)).astype(np.float32))
    h = HiddenStates(words, np.ones((1, m, k + 1), bool), np.ones((1, m), bool))
    median, sd = time_call(lambda: hi_layer_forward(h, layer, table), repeats)
    return CostReport("hi", m * k, m, k, d, flop_estimate("hi", m, k, d), median, sd, repeats)


def measure_flat(m: int, k: int, d: int, heads: int, repeats: int, seed: int = 0, memory_budget: int = 2**31) -> CostReport:
    length = m * k
    units = flop_estimate("flat", m, k, d)
    if attention_workspace_bytes(length, heads) > memory_budget:
        return CostReport("flat", length, m, k, d, units, float("nan"), float("nan"), 0, status="over_memory_budget")
    rng = np.random.default_rng(seed)
    block = init_encoder_block("bench", rng, d, heads, 4 * d)
    x = Tensor(rng.normal(0, 1, (1, length, d)).astype(np.float32))
    mask = additive_mask(np.ones((1, length), bool))
    median, sd = time_call(lambda: encoder_block_forward(x, mask, block), repeats)
    return CostReport("flat", length, m, k, d, units, median, sd, repeats)


def scaling_benchmark(
    hi_m: Sequence[int] = (8, 16, 32, 64),
    flat_m: Sequence[int] = (8, 16, 32, 64),
    k: int = 32,
    d: int = 64,
    heads: int = 8,
    repeats: int = 5,
    seed: int = 0,
    memory_budget: int = 2**31,
    csv_path=None,
) -> list[CostReport]:
    """Time one forward layer of each model over ``L = M*K`` for every grid point.

    Runs single-threaded with gradient tracking and finiteness checks off.
    Rows are appended to ``csv_path`` when given.
    """
    reports = []
    old = set_check_finite(False)
    try:
        with _limit_threads(), no_grad():
            for m in hi_m:
                reports.append(measure_hi(m, k, d, heads, repeats, seed))
            for m in flat_m:
                reports.append(measure_flat(m, k, d, heads, repeats, seed, memory_budget))
    finally:
        set_check_finite(old)
    if csv_path is not None:
        append_csv(reports, csv_path)
    return reports


def append_csv(reports: Sequence[CostReport], path) -> None:
    """Append rows; the header is written only when the file is new. Existing rows are never touched."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != list(CSV_COLUMNS):
            raise BenchmarkError(f"{path} has header {header}, expected {list(CSV_COLUMNS)}")
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow(r.csv_row())


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(xs) < 2:
        raise ConfigError("need at least two points for a slope")
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def summarize(reports: Sequence[CostReport]) -> dict:
    out = {}
    for kind in ("hi", "flat"):
        ok = [r for r in reports if r.kind == kind and r.status == "ok"]
        if len(ok) >= 2:
            out[f"{kind}_slope"] = loglog_slope([r.L for r in ok], [r.median_s for r in ok])
    return out


def report_dicts(reports: Sequence[CostReport]) -> list[dict]:
    return [asdict(r) for r in reports]
