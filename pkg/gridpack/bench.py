"""Padding, capacity, throughput and stability benchmarks.

Batches are always formed in manifest order unless `sort_by_size` is set.
All figures except wall-clock timings are deterministic for a given
manifest and seed.
"""
from __future__ import annotations
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import config
from .diagnostics import stability_plot
from .errors import ArgumentError, CapacityError, ManifestError
from .export import write_table
from .mdlstm_cells import CELL_KINDS, stability_trace
from .network import NetworkConfig, NetworkParams, init_network_params, network_forward, network_forward_parallel
from .skew_pack import BatchPlan, plan_batch_layout
from .tensor_core import ImageGrid

MANIFEST_COLUMNS = ["id", "height", "width"]
BENCH_STRATEGIES = ("lmbr", "packing")


def normalize_strategy(name: str) -> str:
    key = str(name).strip().lower()
    if key not in BENCH_STRATEGIES:
        raise ArgumentError(f"unknown strategy {name!r}; expected LMBR or PACKING")
    return key


# ---- manifests ----

@dataclass(frozen=True, eq=False)
class SizeManifest:
    """Example sizes: one (id, height, width) record per example."""
    frame: pd.DataFrame

    def __post_init__(self):
        df = self.frame
        if list(df.columns) != MANIFEST_COLUMNS:
            df = df.reindex(columns=MANIFEST_COLUMNS)
        if len(df) == 0:
            raise ManifestError("manifest is empty")
        dup = df["id"].duplicated()
        if dup.any():
            i = int(np.flatnonzero(dup.to_numpy())[0])
            raise ManifestError(f"duplicate id {df['id'].iloc[i]!r}", line=i + 2)
        bad = (df["height"] < 1) | (df["width"] < 1)
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise ManifestError(f"non-positive size {df['height'].iloc[i]}x{df['width'].iloc[i]}", line=i + 2)
        object.__setattr__(self, "frame", df.reset_index(drop=True))

    @classmethod
    def from_records(cls, records: Sequence[tuple[str, int, int]]) -> "SizeManifest":
        df = pd.DataFrame(list(records), columns=MANIFEST_COLUMNS)
        df["id"] = df["id"].astype(str)
        df[["height", "width"]] = df[["height", "width"]].astype(int)
        return cls(df)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def ids(self) -> list[str]:
        return self.frame["id"].tolist()

    def sizes(self) -> list[tuple[int, int]]:
        return list(zip(self.frame["height"].astype(int).tolist(), self.frame["width"].astype(int).tolist()))

    def head(self, n: int) -> "SizeManifest":
        return SizeManifest(self.frame.head(n).copy())

    def batches(self, batch_size: int, sort_by_size: bool = False) -> list[list[int]]:
        """Consecutive index batches; with `sort_by_size`, ordered by (height, width) first."""
        if batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
        order = list(range(len(self)))
        if sort_by_size:
            sizes = self.sizes()
            order.sort(key=lambda i: (sizes[i], i))
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False)
        return path


def _parse_dim(value, line: int, column: str) -> int:
    try:
        f = float(str(value).strip())
    except ValueError:
        raise ManifestError(f"{column} {value!r} is not a number", line=line) from None
    if not np.isfinite(f) or f != int(f):
        raise ManifestError(f"{column} {value!r} is not an integer", line=line)
    if f < 1:
        raise ManifestError(f"{column} must be positive, got {int(f)}", line=line)
    return int(f)


def load_manifest(path: str | Path) -> SizeManifest:
    """Read a manifest from CSV, XLSX or Parquet with columns id, height, width.

    Error line numbers count the header as line 1.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"{path}: no such file")
    suffix = path.suffix.lower()
    try:
        if suffix == ".xlsx":
            raw = pd.read_excel(path, dtype=str)
        elif suffix == ".parquet":
            raw = pd.read_parquet(path).astype(str)
        else:
            raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.ParserError as e:
        raise ManifestError(f"{path}: {e}") from e
    except pd.errors.EmptyDataError:
        raise ManifestError(f"{path}: file is empty", line=1) from None

    raw.columns = [str(c).strip().lower() for c in raw.columns]
    missing = [c for c in MANIFEST_COLUMNS if c not in raw.columns]
    if missing:
        raise ManifestError(f"header must contain id,height,width; missing {missing}", line=1)
    ids, heights, widths = [], [], []
    for i, row in enumerate(raw[MANIFEST_COLUMNS].itertuples(index=False)):
        line = i + 2
        ident = "" if row.id is None else str(row.id).strip()
        if ident in ("", "nan"):
            raise ManifestError("missing id", line=line)
        ids.append(ident)
        heights.append(_parse_dim(row.height, line, "height"))
        widths.append(_parse_dim(row.width, line, "width"))
    return SizeManifest(pd.DataFrame({"id": ids, "height": heights, "width": widths}))


def _draw(dist: dict, n: int, rng: np.random.Generator, what: str) -> np.ndarray:
    kind = dist.get("kind")
    if kind == "buckets":
        values = np.asarray(dist["values"], dtype=int)
        probs = np.asarray(dist.get("probs", np.full(len(values), 1.0 / len(values))), dtype=float)
        if len(values) == 0 or len(probs) != len(values) or (values < 1).any() or not np.isclose(probs.sum(), 1.0):
            raise ArgumentError(f"{what}: buckets need positive values and probabilities summing to 1")
        return rng.choice(values, size=n, p=probs)
    if kind == "uniform":
        low, high = int(dist["low"]), int(dist["high"])
        if not 1 <= low <= high:
            raise ArgumentError(f"{what}: uniform needs 1 <= low <= high, got {low}, {high}")
        return rng.integers(low, high + 1, size=n)
    if kind == "lognormal":
        median, sigma = float(dist["median"]), float(dist["sigma"])
        lo, hi = int(dist.get("min", 1)), int(dist.get("max", np.iinfo(np.int32).max))
        if median <= 0 or sigma < 0 or not 1 <= lo <= hi:
            raise ArgumentError(f"{what}: lognormal needs median > 0, sigma >= 0, 1 <= min <= max")
        x = rng.lognormal(np.log(median), sigma, size=n)
        return np.clip(np.rint(x), lo, hi).astype(int)
    raise ArgumentError(f"{what}: unknown distribution kind {kind!r}")


def synth_manifest(n: int, height_dist: dict, width_dist: dict, seed: int = 0) -> SizeManifest:
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    heights = _draw(height_dist, n, rng, "heights")
    widths = _draw(width_dist, n, rng, "widths")
    ids = [f"s{i:05d}" for i in range(n)]
    return SizeManifest(pd.DataFrame({"id": ids, "height": heights.astype(int), "width": widths.astype(int)}))


def preset_manifest(preset: str, n: int, seed: int = 0) -> SizeManifest:
    if preset not in config.PRESETS:
        raise ArgumentError(f"unknown preset {preset!r}; expected one of {sorted(config.PRESETS)}")
    p = config.PRESETS[preset]
    return synth_manifest(n, p["heights"], p["widths"], seed)


# ---- cost model and reports ----

@dataclass(frozen=True)
class MemoryModel:
    bytes_per_valid_pixel: float = config.MEMORY_MODEL["bytes_per_valid_pixel"]
    bytes_per_padded_pixel: float = config.MEMORY_MODEL["bytes_per_padded_pixel"]
    fixed_overhead_bytes: int = config.MEMORY_MODEL["fixed_overhead_bytes"]
    budget_bytes: int = config.MEMORY_MODEL["budget_bytes"]

    def __post_init__(self):
        if self.bytes_per_valid_pixel <= 0 or self.budget_bytes <= 0 or self.fixed_overhead_bytes < 0:
            raise ArgumentError("memory model needs positive pixel cost and budget, non-negative overhead")
        if self.bytes_per_padded_pixel < 0:
            raise ArgumentError("padded pixel cost must be >= 0")

    def batch_cost(self, valid_pixels: int, padded_pixels: int) -> float:
        return (self.fixed_overhead_bytes + valid_pixels * self.bytes_per_valid_pixel
                + padded_pixels * self.bytes_per_padded_pixel)

    def plan_cost(self, plan: BatchPlan) -> float:
        """Cost of the tensor the batch actually runs as (row strips for packing)."""
        return self.batch_cost(plan.valid_pixels, plan.executed_padding)


@dataclass
class BenchReport:
    strategy: str
    batch_size: int
    n_examples: int
    n_batches: int
    valid_pixels: int
    total_pixels: int
    padded_pixels: int
    padded_fraction: float
    skew_overhead_fraction: float
    executed_pixels: int
    packed_batches: int
    packed_over_stacked_batches: int
    peak_batch_memory_bytes: float
    wall_time_per_batch: dict | None = None
    examples_per_second: float | None = None
    environment: dict | None = field(default=None)

    def to_dict(self) -> dict:
        return asdict(self)


def batch_plans(m: SizeManifest, batch_size: int, strategy: str, sort_by_size: bool = False) -> list[BatchPlan]:
    strategy = normalize_strategy(strategy)
    sizes = m.sizes()
    return [plan_batch_layout([sizes[i] for i in b], strategy) for b in m.batches(batch_size, sort_by_size)]


def batch_padding_table(m: SizeManifest, batch_size: int, strategy: str, sort_by_size: bool = False) -> pd.DataFrame:
    rows = []
    for k, plan in enumerate(batch_plans(m, batch_size, strategy, sort_by_size)):
        rows.append({
            "batch": k,
            "n": len(plan.sizes),
            "kind": plan.kind,
            "valid_pixels": plan.valid_pixels,
            "processed_pixels": plan.processed_pixels,
            "padded_pixels": plan.padded_pixels,
            "padded_fraction": plan.padded_pixels / plan.processed_pixels,
            "stacked_pixels": plan.stacked_area,
            "packed_over_stacked": plan.packed_over_stacked,
            "executed_pixels": plan.executed_area,
            "skewed_pixels": plan.skewed_pixels,
        })
    return pd.DataFrame(rows)


def padding_stats(m: SizeManifest, batch_size: int, strategy: str, mem: MemoryModel | None = None,
                  sort_by_size: bool = False) -> BenchReport:
    """Aggregate padding waste over all batches.

    The headline fraction is pre-skew and, for packing, counts the full
    composite including separator rows. Skew waste and the executed
    (row-strip) pixels are reported separately.
    """
    mem = mem or MemoryModel()
    strategy = normalize_strategy(strategy)
    plans = batch_plans(m, batch_size, strategy, sort_by_size)
    valid = sum(p.valid_pixels for p in plans)
    processed = sum(p.processed_pixels for p in plans)
    skewed = sum(p.skewed_pixels for p in plans)
    return BenchReport(
        strategy=strategy,
        batch_size=batch_size,
        n_examples=len(m),
        n_batches=len(plans),
        valid_pixels=valid,
        total_pixels=processed,
        padded_pixels=processed - valid,
        padded_fraction=(processed - valid) / processed,
        skew_overhead_fraction=(skewed - processed) / skewed,
        executed_pixels=sum(p.executed_area for p in plans),
        packed_batches=sum(p.kind == "packed" for p in plans),
        packed_over_stacked_batches=sum(p.packed_over_stacked for p in plans),
        peak_batch_memory_bytes=max(mem.plan_cost(p) for p in plans),
    )


def max_batch_under_budget(m: SizeManifest, mem: MemoryModel, strategy: str, sort_by_size: bool = False) -> int:
    """Largest b such that every batch of size b fits; scans b upward and stops at the first miss."""
    strategy = normalize_strategy(strategy)
    largest = max(mem.batch_cost(h * w, 0) for h, w in m.sizes())
    if largest > mem.budget_bytes:
        raise CapacityError(
            f"largest example needs {largest:.0f} bytes, budget is {mem.budget_bytes} bytes"
        )
    sizes = m.sizes()
    best = 1
    for b in range(2, len(m) + 1):
        fits = all(
            mem.plan_cost(plan_batch_layout([sizes[i] for i in batch], strategy)) <= mem.budget_bytes
            for batch in m.batches(b, sort_by_size)
        )
        if not fits:
            break
        best = b
    return best


def environment_info() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
    }


def synth_images(m: SizeManifest, channels: int, seed: int) -> list[ImageGrid]:
    rng = np.random.default_rng(seed)
    return [ImageGrid(rng.random((h, w, channels))) for h, w in m.sizes()]


def throughput_bench(cfg: NetworkConfig, m: SizeManifest, strategies: Sequence[str],
                     repetitions: int = config.REPETITIONS, seed: int = config.INIT_SEED, *,
                     mem: MemoryModel | None = None, params: NetworkParams | None = None,
                     limit: int | None = config.THROUGHPUT_LIMIT, workers: int = 1) -> list[BenchReport]:
    """Time network_forward per strategy at that strategy's largest feasible batch size."""
    if not strategies:
        return []
    if repetitions < 1:
        raise ArgumentError(f"repetitions must be >= 1, got {repetitions}")
    mem = mem or MemoryModel()
    if limit is not None:
        m = m.head(limit)
    params = params or init_network_params(cfg, seed)
    images = synth_images(m, cfg.input_channels, seed)
    if workers > 1:
        print(f"WARNING: running batches on {workers} threads; timings measure parallel throughput")
    reports = []
    for name in strategies:
        strategy = normalize_strategy(name)
        b = max_batch_under_budget(m, mem, strategy)
        batches = m.batches(b)
        print(f"{strategy}: batch size {b}, {len(batches)} batches, {repetitions} repetitions")
        per_batch = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for batch in batches:
                examples = [images[i] for i in batch]
                if workers > 1:
                    network_forward_parallel(cfg, params, examples, workers, strategy)
                else:
                    network_forward(cfg, params, examples, strategy)
            per_batch.append((time.perf_counter() - t0) / len(batches))
        times = np.asarray(per_batch)
        stats = padding_stats(m, b, strategy, mem)
        reports.append(replace(
            stats,
            wall_time_per_batch={"min": float(times.min()), "median": float(np.median(times)), "max": float(times.max())},
            examples_per_second=float(len(m) / (np.median(times) * len(batches))),
            environment=dict(environment_info(), workers=workers),
        ))
    return reports


def stability_table(length: int = config.STABILITY_LENGTH, biases: Sequence[float] = tuple(config.STABILITY_BIASES),
                    cell_kinds: Sequence[str] = CELL_KINDS) -> pd.DataFrame:
    frames = []
    for kind in cell_kinds:
        for bias in biases:
            trace = stability_trace(kind, length, float(bias))
            frames.append(pd.DataFrame({
                "step": np.arange(1, length + 1),
                "cell_kind": kind,
                "forget_bias": float(bias),
                "max_abs_memory": trace,
            }))
    return pd.concat(frames, ignore_index=True)


def stability_report(length: int = config.STABILITY_LENGTH, biases: Sequence[float] = tuple(config.STABILITY_BIASES),
                     out_path: str | Path | None = None) -> pd.DataFrame:
    """Trace both cell kinds per bias; writes a CSV (and a plot when SAVE_PLOTS is on)."""
    df = stability_table(length, biases)
    for (kind, bias), grp in df.groupby(["cell_kind", "forget_bias"]):
        print(f"{kind} bias {bias:g}: final max |memory| = {grp['max_abs_memory'].iloc[-1]:.4g}")
    if out_path is not None:
        write_table(df, out_path)
        print(f"Stability trace written to: {out_path}")
    if config.SAVE_PLOTS:
        print(f"Saved plot: {stability_plot(df)}")
    return df
