"""``glora`` command-line entry point."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from glora.cli.bench import load_bench_config, run_bench, write_bench
from glora.cli.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from glora.cli.config import _FIELDS, ExperimentConfig, _convert, load_config
from glora.cli.records import CSV_HEADER, format_record
from glora.errors import GloraError, ValidationError
from glora.fedsim.experiment import RoundRecord, RunState, run_experiment


def checkpoint_path(cfg: ExperimentConfig, round_done: int) -> Path:
    return Path(cfg.checkpoint_dir) / f"{Path(cfg.output).stem}_round{round_done:05d}.glra"


def run_to_csv(cfg: ExperimentConfig, state: RunState | None = None, rows: list[str] | None = None) -> int:
    """Run (or continue) an experiment, streaming one CSV row per round.

    Rows are flushed as they are produced, so a failing run leaves every
    completed round on disk.
    """
    rows = list(rows or [])
    out = Path(cfg.output)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.checkpoint_every:
        Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
        fh.flush()

        def on_round(rec: RoundRecord, st: RunState) -> None:
            line = format_record(rec)
            rows.append(line)
            fh.write(line + "\n")
            fh.flush()
            if cfg.checkpoint_every and rec.round % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path(cfg, rec.round), Checkpoint.from_state(st, rows))

        run_experiment(cfg, state, on_round)
    return len(rows)


def sweep_output(output: str, key: str, value: str) -> str:
    path = Path(output)
    return str(path.with_name(f"{path.stem}_{key}-{value}{path.suffix or '.csv'}"))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    n = run_to_csv(cfg)
    print(f"wrote {n} rounds to {cfg.output}")
    return 0


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    if args.key not in _FIELDS or args.key == "output":
        raise ValidationError(f"cannot sweep over key {args.key!r}", args.key)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValidationError("--values is empty", args.key)
    # validate every point before running any
    configs = []
    for raw in values:
        configs.append(base.replace(**{args.key: _convert(args.key, raw), "output": sweep_output(base.output, args.key, raw)}))
    for cfg in configs:
        n = run_to_csv(cfg)
        print(f"wrote {n} rounds to {cfg.output}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_bench_config(args.config)
    rows = run_bench(cfg)
    write_bench(rows, cfg.output)
    for row in rows:
        growth = "" if row.growth_ratio is None else f" growth={row.growth_ratio:.3f}"
        print(f"{row.rule} {row.d_out}x{row.d_in} r_sigma={row.r_sigma}: {row.median_s * 1e3:.3f} ms{growth}")
    return 0


def cmd_resume(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    n = run_to_csv(ckpt.config, ckpt.to_state(), ckpt.rows)
    print(f"resumed at round {ckpt.next_round}; wrote {n} rounds to {ckpt.config.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glora", description="Gauge-aware federated LoRA aggregation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its CSV")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per value of a config key")
    p.add_argument("config")
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time aggregation across problem sizes")
    p.add_argument("config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_resume)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GloraError, OSError) as exc:
        print(f"glora: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
