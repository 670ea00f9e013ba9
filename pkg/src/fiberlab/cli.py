"""Command-line experiment driver.

Subcommands share one config schema (YAML) and a root seed; every artifact
lands in the output directory: report.json, sweep.csv, complexity.csv, and
model checkpoint pairs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, desk_scale_config, dump_config, load_config
from .equalizer import load_net, save_net

_MODES = ("bi", "co_standard", "co_simplified", "cdc", "dbp")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML config (default: built-in desk-scale)")
    parser.add_argument("--seed", type=int, default=None, help="override the root seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="parallel sweep workers")
    parser.add_argument("--mode", choices=_MODES, default=None, help="scheme override")


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    config = load_config(args.config) if args.config else desk_scale_config()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    if args.mode in ("cdc", "dbp"):
        config = replace(config, compensation=replace(config.compensation, kind=args.mode))
    elif args.mode is not None:
        config = replace(config, equalizer=replace(config.equalizer, mode=args.mode))
    out = Path(args.out) if args.out is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return config, out


def _cmd_simulate(args) -> int:
    config, out = _resolve(args)
    scheme = args.mode if args.mode in ("cdc", "dbp") else config.compensation.kind
    dump = out / "waveform.ceqw" if args.dump_waveform else None
    report = pipeline.run_pipeline(config, schemes=(scheme,), dump_waveform_path=dump)
    pipeline.write_report_json(report, out / "report.json")
    _print_schemes(report)
    return 0


def _cmd_train(args) -> int:
    config, out = _resolve(args)
    net, rep = pipeline.train_equalizer(config)
    paths = save_net(out / "model", net)
    summary = {
        "checkpoints": [str(p) for p in paths],
        "epochs_run": rep.epochs_run,
        "best_epoch": rep.best_epoch,
        "train_losses": rep.train_losses,
        "val_losses": rep.val_losses,
        "seed": config.seed,
        "config": config.to_dict(),
    }
    pipeline.write_report_json(summary, out / "training_report.json")
    print(f"trained {config.equalizer.mode} equalizer: {rep.epochs_run} epochs, "
          f"best val loss {min(rep.val_losses):.3e} (epoch {rep.best_epoch})")
    return 0


def _cmd_equalize(args) -> int:
    config, out = _resolve(args)
    stem = args.checkpoint if args.checkpoint is not None else out / "model"
    mode = config.equalizer.mode
    net = load_net(stem, config.equalizer.spec(mode))
    cmap, bits, tx, rx_cdc = pipeline.cdc_symbol_stream(config)
    result = pipeline._run_lstm_scheme(mode, config, cmap, rx_cdc, tx, bits,
                                       trained={"bi" if mode == "bi" else "co": (net, pipeline_empty_report())})
    report = {"config": config.to_dict(), "seed": config.seed,
              "schemes": {mode: result.__dict__}}
    pipeline.write_report_json(report, out / "report.json")
    _print_schemes(report)
    return 0


def pipeline_empty_report():
    from .equalizer import TrainingReport
    return TrainingReport()


def _cmd_sweep(args) -> int:
    config, out = _resolve(args)
    schemes = None
    if args.mode is not None:
        schemes = [args.mode if args.mode != "dbp" else f"dbp-{config.compensation.steps_per_span}"]
    rows = pipeline.run_sweep(config, schemes=schemes, workers=config.workers)
    pipeline.write_sweep_csv(rows, out / "sweep.csv")
    print(f"{len(rows)} sweep rows -> {out / 'sweep.csv'}")
    return 0


def _cmd_complexity(args) -> int:
    config, out = _resolve(args)
    rows = pipeline.complexity_rows(config)
    pipeline.write_complexity_csv(rows, out / "complexity.csv")
    for row in rows:
        print(f"{row['scheme']:>16}: {row['analytic_rmpb']:>10.2f} RMPB"
              f"  (x{row['ratio_to_bi']:.4f} of bi)")
    return 0


def _cmd_report(args) -> int:
    path = args.report if args.report is not None else Path(args.out or "runs") / "report.json"
    with open(path) as fh:
        report = json.load(fh)
    print(f"seed {report.get('seed')}  ({path})")
    _print_schemes(report)
    return 0


def _cmd_init_config(args) -> int:
    config, out = _resolve(args)
    path = out / "config.yaml"
    dump_config(config, path)
    print(f"wrote {path}")
    return 0


def _print_schemes(report: dict) -> None:
    for name, res in report.get("schemes", {}).items():
        q2 = res.get("q2_db")
        q2_str = f"{q2:6.2f} dB" if q2 is not None else "  inf   "
        print(f"{name:>16}: BER {res['ber']:.3e}  Q2 {q2_str}  "
              f"({res['bit_errors']}/{res['bits_total']} bits)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fiberlab",
                                     description="Desk-scale fiber nonlinearity-mitigation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="propagate and linearly compensate; write report.json")
    _add_common(p)
    p.add_argument("--dump-waveform", action="store_true", help="also dump the received waveform")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the configured equalizer; save checkpoints")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("equalize", help="equalize with a saved checkpoint pair")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, default=None, help="checkpoint stem (default OUT/model)")
    p.set_defaults(func=_cmd_equalize)

    p = sub.add_parser("sweep", help="run the configured sweep; write sweep.csv")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("complexity", help="emit the analytic complexity table")
    _add_common(p)
    p.set_defaults(func=_cmd_complexity)

    p = sub.add_parser("report", help="summarize an existing report.json")
    _add_common(p)
    p.add_argument("--report", type=Path, default=None, help="path to report.json")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("init-config", help="write the resolved config as YAML")
    _add_common(p)
    p.set_defaults(func=_cmd_init_config)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
