"""Operator command line: gen-data, pretrain, finetune, eval, ablate, plot.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (non-finite loss), 1 anything else. Output directories carry an
``.incomplete`` marker while a command is running; it is removed on
success. The ``ECHOWORLD_DATA`` environment variable overrides the default
data root from the config.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .phantom import PhantomError
from .scan_store import ScanStoreError
from .world_model.pretrain import NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

INCOMPLETE_MARKER = ".incomplete"


def _resolve_data_root(args, cfg: ExperimentConfig) -> Path:
    data = getattr(args, "data", None)
    if data:
        return Path(data)
    env = os.environ.get("ECHOWORLD_DATA")
    if env:
        return Path(env)
    return Path(cfg.data_root)


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    (out / INCOMPLETE_MARKER).touch()
    return out


def _finish_out(out: Path) -> None:
    marker = out / INCOMPLETE_MARKER
    if marker.exists():
        marker.unlink()


# --------------------------------------------------------------------------
# command handlers


def cmd_gen_data(args) -> int:
    from .dataset import generate_dataset

    cfg = load_config(args.config)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    (out / INCOMPLETE_MARKER).touch()
    manifest = generate_dataset(
        cfg, out, args.train_scans, args.test_scans, args.seed, force=True
    )
    _finish_out(out)
    print(
        f"wrote {len(manifest['train_scans'])} train / "
        f"{len(manifest['test_scans'])} test scans to {out}"
    )
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .dataset import load_split, validate_data_compat
    from .world_model.pretrain import pretrain

    cfg = load_config(args.config)
    if args.objective:
        cfg.pretrain.objective = args.objective
    data_root = _resolve_data_root(args, cfg)
    validate_data_compat(cfg, data_root)
    scans = load_split(data_root, "train")
    out = _prepare_out(Path(args.out), args.force or args.resume)
    pretrain(scans, cfg, out, seed=args.seed, resume=args.resume)
    _finish_out(out)
    print(f"pre-training checkpoint written to {out / 'checkpoint'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .dataset import load_split, validate_data_compat
    from .guidance.finetune import build_model, finetune
    from .world_model.pretrain import load_pretrain_checkpoint

    cfg = load_config(args.config)
    data_root = _resolve_data_root(args, cfg)
    validate_data_compat(cfg, data_root)
    scans = load_split(data_root, "train")
    init = None
    if args.init and args.init != "none":
        init_path = Path(args.init)
        if (init_path / "checkpoint").exists():
            init_path = init_path / "checkpoint"
        init = load_pretrain_checkpoint(init_path)
    seed = cfg.seed if args.seed is None else args.seed
    model = build_model(cfg, args.protocol, aggregator=args.aggregator, init=init, seed=seed)
    out = _prepare_out(Path(args.out), args.force)
    finetune(model, scans, args.protocol, cfg, out, seed=seed)
    _finish_out(out)
    print(f"fine-tuned checkpoint written to {out / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import load_split, validate_data_compat
    from .guidance.finetune import load_guidance_checkpoint
    from .protocols import (
        TorchSequencePredictor,
        TorchSingleFramePredictor,
        eval_sequential,
        eval_single_frame,
        write_report,
    )

    ckpt_path = Path(args.checkpoint)
    if (ckpt_path / "checkpoint").exists():
        ckpt_path = ckpt_path / "checkpoint"
    model, meta, cfg = load_guidance_checkpoint(ckpt_path)
    if meta["protocol"] != args.protocol:
        raise ConfigError(
            f"checkpoint was fine-tuned for protocol {meta['protocol']!r}, "
            f"requested {args.protocol!r}"
        )
    data_root = _resolve_data_root(args, cfg)
    validate_data_compat(cfg, data_root)
    scans = load_split(data_root, "test")
    out = _prepare_out(Path(args.out), args.force)
    if args.protocol == "single":
        report = eval_single_frame(
            TorchSingleFramePredictor(model), scans, fps=cfg.protocol.single_fps
        )
    else:
        report = eval_sequential(
            TorchSequencePredictor(model),
            scans,
            fps=cfg.protocol.sequential_fps,
            n_history=cfg.protocol.history_len,
            alpha=cfg.protocol.alpha,
        )
    path = write_report(report, out / "report.csv")
    _finish_out(out)
    print(f"report written to {path} (overall avg {report.overall_avg:.3f})")
    return EXIT_OK


_SUITES = {
    "spatial": ["scratch", "spatial"],
    "motion": ["scratch", "motion"],
    "joint": ["scratch", "spatial", "motion", "joint"],
    "motion-awareness": [
        "scratch+attention",
        "scratch+motion_attention",
        "joint+attention",
        "joint+motion_attention",
    ],
}


def cmd_ablate(args) -> int:
    from .dataset import load_split, validate_data_compat
    from .guidance.finetune import build_model, finetune, load_guidance_checkpoint
    from .protocols import (
        TorchSequencePredictor,
        TorchSingleFramePredictor,
        eval_sequential,
        eval_single_frame,
        write_report,
    )
    from .world_model.pretrain import load_pretrain_checkpoint, pretrain

    cfg = load_config(args.config)
    data_root = _resolve_data_root(args, cfg)
    validate_data_compat(cfg, data_root)
    train_scans = load_split(data_root, "train")
    test_scans = load_split(data_root, "test")
    seed = cfg.seed if args.seed is None else args.seed
    out = _prepare_out(Path(args.out), args.force)

    sequential = args.suite == "motion-awareness"
    pretrain_cache: dict[str, object] = {}

    def pretrained_state(objective: str):
        if objective == "scratch":
            return None
        if objective not in pretrain_cache:
            run_cfg = dataclasses.replace(cfg)
            run_cfg.pretrain = dataclasses.replace(cfg.pretrain, objective=objective)
            run_dir = out / f"pretrain-{objective}"
            pretrain(train_scans, run_cfg, run_dir, seed=seed)
            pretrain_cache[objective] = load_pretrain_checkpoint(run_dir / "checkpoint")
        return pretrain_cache[objective]

    rows = ["cell,protocol,avg_trans_mm,avg_rot_deg,overall_avg"]
    for cell in _SUITES[args.suite]:
        if sequential:
            objective, aggregator = cell.split("+")
            protocol = "sequential"
        else:
            objective, aggregator = cell, "motion_attention"
            protocol = "single"
        init = pretrained_state(objective)
        run_cfg = dataclasses.replace(cfg)
        if objective != "scratch":
            run_cfg.pretrain = dataclasses.replace(cfg.pretrain, objective=objective)
        model = build_model(run_cfg, protocol, aggregator=aggregator, init=init, seed=seed)
        cell_dir = out / f"finetune-{cell.replace('+', '-')}"
        finetune(model, train_scans, protocol, run_cfg, cell_dir, seed=seed)
        model, _, _ = load_guidance_checkpoint(cell_dir / "checkpoint")
        if protocol == "single":
            report = eval_single_frame(
                TorchSingleFramePredictor(model), test_scans, fps=cfg.protocol.single_fps
            )
        else:
            report = eval_sequential(
                TorchSequencePredictor(model),
                test_scans,
                fps=cfg.protocol.sequential_fps,
                n_history=cfg.protocol.history_len,
                alpha=cfg.protocol.alpha,
            )
        write_report(report, cell_dir / "report.csv")
        rows.append(
            f"{cell},{protocol},{report.avg_trans:.4f},{report.avg_rot:.4f},"
            f"{report.overall_avg:.4f}"
        )
        print(rows[-1])
    (out / "comparison.csv").write_text("\n".join(rows) + "\n")
    _finish_out(out)
    print(f"ablation suite {args.suite!r} written to {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plots

    chosen = [
        (name, value)
        for name, value in (
            ("report", args.report),
            ("log", args.log),
            ("attention", args.attention),
        )
        if value
    ]
    if len(chosen) != 1:
        raise ConfigError("pass exactly one of --report, --log, --attention")
    kind, source = chosen[0]
    source = Path(source)
    if not source.exists():
        raise ScanStoreError(f"input file not found: {source}")
    out = Path(args.out) if args.out else source.with_suffix(".png")
    fn = {"report": plots.plot_report, "log": plots.plot_log, "attention": plots.plot_attention}
    path = fn[kind](source, out)
    print(f"figure written to {path}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echoworld",
        description="Phantom-scale probe-guidance pipeline: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate train/test phantom scans")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--train-scans", type=int, default=40)
    p.add_argument("--test-scans", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("pretrain", help="world-model pre-training")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--objective", choices=["joint", "spatial", "motion"], default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", help="guidance fine-tuning")
    p.add_argument("--config", default=None)
    p.add_argument("--init", default="none", help="pre-training output dir, or 'none'")
    p.add_argument("--protocol", choices=["single", "sequential"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--aggregator",
        choices=["motion_attention", "attention", "gru"],
        default="motion_attention",
    )
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=["single", "sequential"], required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation suite")
    p.add_argument("--suite", choices=sorted(_SUITES), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default="ablation")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("plot", help="figures from CSV artifacts")
    p.add_argument("--report", default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--attention", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScanStoreError, PhantomError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
