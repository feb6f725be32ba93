from __future__ import annotations
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config
from .bench import (
    BENCH_STRATEGIES,
    MemoryModel,
    SizeManifest,
    batch_padding_table,
    load_manifest,
    max_batch_under_budget,
    padding_stats,
    preset_manifest,
    stability_report,
    throughput_bench,
)
from .diagnostics import padding_diagnostics
from .errors import EXIT_OK, ArgumentError, GridpackError, InputError, exit_code_for
from .export import write_jsonl, write_report_json, write_table
from .model_io import load_network_params, save_network_params
from .network import (
    STRATEGIES,
    LogitSequence,
    NetworkConfig,
    greedy_ctc_decode,
    init_network_params,
    network_forward,
    network_forward_parallel,
)
from .skew_pack import plan_batch_layout
from .tensor_core import read_image

IMAGE_SUFFIXES = (".pgm", ".png", ".csv")


def _manifest_from_args(args) -> SizeManifest:
    if args.manifest:
        m = load_manifest(args.manifest)
    else:
        m = preset_manifest(args.preset, args.n, args.seed)
    print(f"Manifest: {len(m)} examples")
    return m


def _memory_from_args(args) -> MemoryModel:
    return MemoryModel(
        bytes_per_valid_pixel=args.bytes_per_valid_pixel,
        bytes_per_padded_pixel=args.bytes_per_padded_pixel,
        fixed_overhead_bytes=int(args.overhead_mb * 2**20),
        budget_bytes=int(args.budget_mb * 2**20),
    )


def _strategies(args) -> list[str]:
    return [s.lower() for s in args.strategy] if args.strategy else list(BENCH_STRATEGIES)


def _config_from_args(args) -> NetworkConfig:
    return NetworkConfig.load_json(args.config) if args.config else NetworkConfig()


def _image_files(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise ArgumentError(f"{folder}: not a directory")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ArgumentError(f"{folder}: no {'/'.join(IMAGE_SUFFIXES)} images found")
    return files


def cmd_pack(args) -> int:
    m = _manifest_from_args(args)
    sizes = m.sizes()
    strategy = args.strategy.lower()
    plans, batches = [], []
    for k, b in enumerate(m.batches(args.batch_size, args.sort_by_size)):
        plan = plan_batch_layout([sizes[i] for i in b], strategy)
        plans.append(plan)
        batches.append({
            "batch": k,
            "ids": [m.ids[i] for i in b],
            "kind": plan.kind,
            "processed_pixels": plan.processed_pixels,
            "stacked_pixels": plan.stacked_area,
            "executed_pixels": plan.executed_area,
            "valid_pixels": plan.valid_pixels,
            "layout": plan.layout.to_dict() if plan.layout is not None else None,
        })
        print(f"batch {k}: {len(b)} examples, {plan.kind}, {plan.processed_pixels} pixels")
    valid = sum(p.valid_pixels for p in plans)
    processed = sum(p.processed_pixels for p in plans)
    summary = {
        "n_examples": len(m),
        "n_batches": len(plans),
        "valid_pixels": valid,
        "processed_pixels": processed,
        "stacked_pixels": sum(p.stacked_area for p in plans),
        "executed_pixels": sum(p.executed_area for p in plans),
        "padded_fraction": (processed - valid) / processed,
        "packed_over_stacked_batches": sum(p.packed_over_stacked for p in plans),
    }
    print(f"{strategy}: padded fraction {summary['padded_fraction']:.3f} over {len(plans)} batches")
    doc = {"schema_version": config.REPORT_SCHEMA_VERSION, "strategy": strategy, "summary": summary, "batches": batches}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
        print(f"Layouts written to: {args.out}")
    return EXIT_OK


def cmd_init_model(args) -> int:
    cfg = _config_from_args(args)
    params = init_network_params(cfg, seed=args.seed, scale=args.scale)
    save_network_params(params, cfg, args.out)
    print(f"Model written to: {args.out}")
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = NetworkConfig.load_json(args.config) if args.config else None
    params, cfg = load_network_params(args.model, cfg)
    files = _image_files(args.images)
    print(f"Running {len(files)} images, strategy {args.strategy}, batch size {args.batch_size}")
    records = []
    for start in range(0, len(files), args.batch_size):
        chunk = files[start:start + args.batch_size]
        images = [read_image(p, channels=cfg.input_channels) for p in chunk]
        if args.workers > 1:
            outputs = network_forward_parallel(cfg, params, images, args.workers, args.strategy)
        else:
            outputs = network_forward(cfg, params, images, args.strategy)
        for p, seq in zip(chunk, outputs):
            rec = {"id": p.stem, "T": seq.timesteps, "decoded": greedy_ctc_decode(seq, cfg.alphabet)}
            if args.emit_logits:
                rec["logits"] = seq.logits.tolist()
            records.append(rec)
    write_jsonl(records, args.out)
    print(f"Logits written to: {args.out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _config_from_args(args)
    records = []
    with open(args.logits, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "logits" not in rec:
                raise InputError(f"{args.logits} line {n}: no logits (rerun forward with --emit-logits)")
            text = greedy_ctc_decode(LogitSequence(np.asarray(rec["logits"])), cfg.alphabet)
            records.append({"id": rec.get("id", str(n)), "decoded": text})
            print(f"{records[-1]['id']}\t{text}")
    if args.out:
        write_jsonl(records, args.out)
    return EXIT_OK


def cmd_bench_padding(args) -> int:
    m = _manifest_from_args(args)
    mem = _memory_from_args(args)
    reports, diag = [], {}
    for strategy in _strategies(args):
        table = batch_padding_table(m, args.batch_size, strategy, args.sort_by_size)
        rep = padding_stats(m, args.batch_size, strategy, mem, args.sort_by_size)
        diag[strategy] = padding_diagnostics(table, label=strategy)
        print(f"{strategy}: padded fraction {rep.padded_fraction:.3f}, skew overhead {rep.skew_overhead_fraction:.3f}")
        if args.table:
            path = Path(args.table)
            write_table(table, path.with_name(f"{path.stem}.{strategy}{path.suffix}"))
        reports.append(rep)
    write_report_json(reports, args.out, diagnostics=diag)
    print(f"Report written to: {args.out}")
    return EXIT_OK


def cmd_bench_capacity(args) -> int:
    m = _manifest_from_args(args)
    mem = _memory_from_args(args)
    reports = []
    for strategy in _strategies(args):
        b = max_batch_under_budget(m, mem, strategy, args.sort_by_size)
        print(f"{strategy}: max batch size {b}")
        reports.append(padding_stats(m, b, strategy, mem, args.sort_by_size))
    write_report_json(reports, args.out)
    print(f"Report written to: {args.out}")
    return EXIT_OK


def cmd_bench_throughput(args) -> int:
    m = _manifest_from_args(args)
    cfg = _config_from_args(args)
    reports = throughput_bench(cfg, m, _strategies(args), args.repetitions, args.seed,
                               mem=_memory_from_args(args), limit=args.limit, workers=args.workers)
    for rep in reports:
        print(f"{rep.strategy}: {rep.examples_per_second:.2f} examples/s")
    write_report_json(reports, args.out)
    print(f"Report written to: {args.out}")
    return EXIT_OK


def cmd_stability(args) -> int:
    if args.length < 1:
        raise ArgumentError(f"--length must be >= 1, got {args.length}")
    stability_report(args.length, args.biases, args.out)
    return EXIT_OK


def cmd_synth_manifest(args) -> int:
    m = preset_manifest(args.preset, args.n, args.seed)
    write_table(m.frame, args.out)
    print(f"Manifest of {len(m)} examples written to: {args.out}")
    return EXIT_OK


def _add_manifest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="Manifest (CSV/XLSX/Parquet with id,height,width)")
    p.add_argument("--preset", default="word", choices=sorted(config.PRESETS), help="Synthetic preset when no manifest is given")
    p.add_argument("--n", type=int, default=1000, help="Synthetic manifest size")
    p.add_argument("--seed", type=int, default=config.INIT_SEED, help="Seed for synthetic data and weights")
    p.add_argument("--sort-by-size", action="store_true", help="Sort by (height, width) before batching")


def _add_memory_args(p: argparse.ArgumentParser) -> None:
    mm = config.MEMORY_MODEL
    p.add_argument("--budget-mb", type=float, default=mm["budget_bytes"] / 2**20, help="Memory budget in MiB")
    p.add_argument("--overhead-mb", type=float, default=mm["fixed_overhead_bytes"] / 2**20, help="Fixed overhead in MiB")
    p.add_argument("--bytes-per-valid-pixel", type=float, default=mm["bytes_per_valid_pixel"])
    p.add_argument("--bytes-per-padded-pixel", type=float, default=mm["bytes_per_padded_pixel"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridpack", description="Example-packing for 2-D recurrent networks")
    sub = p.add_subparsers(dest="command", required=True)
    out_dir = config.OUTPUT_DIR

    s = sub.add_parser("pack", help="Plan batch layouts for a manifest")
    _add_manifest_args(s)
    s.add_argument("--batch-size", type=int, default=config.BATCH_SIZE)
    s.add_argument("--strategy", default="packing", help="packing or lmbr")
    s.add_argument("--out", help="Optional layout JSON path")
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("init-model", help="Write a seeded parameter file")
    s.add_argument("--config", help="Network config JSON (defaults when omitted)")
    s.add_argument("--out", required=True, help="Model file (a .json sidecar is written next to it)")
    s.add_argument("--seed", type=int, default=config.INIT_SEED)
    s.add_argument("--scale", type=float, default=config.INIT_SCALE)
    s.set_defaults(func=cmd_init_model)

    s = sub.add_parser("forward", help="Run the network on a directory of images")
    s.add_argument("--model", required=True)
    s.add_argument("--config", help="Network config JSON; the model sidecar config is used when omitted")
    s.add_argument("--images", required=True, help="Directory of .pgm/.png/.csv images")
    s.add_argument("--out", default=str(out_dir / "logits.jsonl"))
    s.add_argument("--emit-logits", action="store_true", help="Include full logit matrices")
    s.add_argument("--strategy", default="packing", choices=STRATEGIES)
    s.add_argument("--batch-size", type=int, default=config.BATCH_SIZE)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("decode", help="Greedy CTC decode of a logits JSONL")
    s.add_argument("--logits", required=True)
    s.add_argument("--config", help="Network config JSON (for the alphabet)")
    s.add_argument("--out", help="Optional JSONL of decoded strings")
    s.set_defaults(func=cmd_decode)

    for name, func, helptext in (
        ("bench-padding", cmd_bench_padding, "Padding waste of LMBR vs packing"),
        ("bench-capacity", cmd_bench_capacity, "Largest batch size under a memory budget"),
        ("bench-throughput", cmd_bench_throughput, "Forward-pass throughput per strategy"),
    ):
        s = sub.add_parser(name, help=helptext)
        _add_manifest_args(s)
        _add_memory_args(s)
        s.add_argument("--strategy", action="append", type=str.lower, choices=BENCH_STRATEGIES,
                       help="Repeat to select strategies (default: both)")
        s.add_argument("--out", default=str(out_dir / f"{name}.json"), help="Report JSON path")
        if name == "bench-padding":
            s.add_argument("--batch-size", type=int, default=config.BATCH_SIZE)
            s.add_argument("--table", help="Per-batch table path (.csv/.xlsx/.parquet), one file per strategy")
        if name == "bench-throughput":
            s.add_argument("--config", help="Network config JSON")
            s.add_argument("--repetitions", type=int, default=config.REPETITIONS)
            s.add_argument("--limit", type=int, default=config.THROUGHPUT_LIMIT)
            s.add_argument("--workers", type=int, default=1, help="Batch-level threads (timings become parallel)")
        s.set_defaults(func=func)

    s = sub.add_parser("stability", help="Memory-growth traces of plain vs Leaky LP cells")
    s.add_argument("--length", type=int, default=config.STABILITY_LENGTH)
    s.add_argument("--biases", type=float, nargs="+", default=list(config.STABILITY_BIASES))
    s.add_argument("--out", default=str(out_dir / "stability.csv"))
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("synth-manifest", help="Write a synthetic size manifest")
    s.add_argument("--preset", default="word", choices=sorted(config.PRESETS))
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=config.INIT_SEED)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_manifest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GridpackError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
