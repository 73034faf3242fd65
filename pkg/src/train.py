import argparse
import json
import os
import sys

from src.exception import CustomException
from src.logger import logging
from src.pipeline.comparison_pipeline import ComparisonPipeline, ata_ablation
from src.pipeline.prediction_pipeline import EvaluationPipeline, ReportPipeline
from src.pipeline.training_pipeline import TrainingPipeline
from src.schemas.config import TRAINER_CHOICES, ExperimentConfig, apply_overrides, load_config


def _add_experiment_flags(parser):
    parser.add_argument("--config", help="YAML experiment config; defaults apply when omitted")
    parser.add_argument("--trainer", choices=TRAINER_CHOICES, help="Training method and mapping unit")
    parser.add_argument("--steps", type=int, help="Time window T")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--no-ata", dest="no_ata", action="store_true", default=None,
                        help="Disable adaptive threshold adjustment")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spikemap",
        description="Train spiking networks through a weight-shared ANN branch and report spikes and energy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_experiment_flags(sub.add_parser("train", help="Train per config and write checkpoint + metrics"))

    eval_parser = sub.add_parser("eval", help="Score a checkpoint on its held-out split")
    eval_parser.add_argument("--checkpoint", help="Checkpoint file; defaults to <out>/model.ckpt")
    eval_parser.add_argument("--config", help="Override the config stored in the checkpoint")
    eval_parser.add_argument("--out", help="Directory holding model.ckpt and receiving eval outputs")

    compare_parser = sub.add_parser("compare", help="Train S2A and STBP side by side")
    _add_experiment_flags(compare_parser)
    compare_parser.add_argument("--ablate-ata", dest="ablate_ata", action="store_true",
                                help="Compare S2A with and without threshold adjustment instead")

    report_parser = sub.add_parser("report", help="Re-emit metrics from a stored report.json")
    report_parser.add_argument("--report", help="Path to report.json; defaults to <out>/report.json")
    report_parser.add_argument("--out", help="Run directory")
    report_parser.add_argument("--no-plots", dest="no_plots", action="store_true")
    return parser


def resolve_config(args, env=None) -> ExperimentConfig:
    base = load_config(args.config) if args.config else ExperimentConfig()
    flags = {key: getattr(args, key, None) for key in ("trainer", "steps", "epochs", "seed", "out", "no_ata")}
    return apply_overrides(base, env=os.environ if env is None else env, flags=flags)


def _emit(payload):
    print(json.dumps(payload, indent=2, default=str))


def _run_train(args, env):
    config = resolve_config(args, env)
    result = TrainingPipeline(config).run()
    report = result["report"]
    _emit(
        {
            "checkpoint": result["checkpoint_path"],
            "accuracy": report.accuracy,
            "spikes_per_image": report.spikes_per_image,
            "energy_ratio": report.energy_ratio,
        }
    )


def _run_eval(args, env):
    out_dir = args.out or env.get("SPIKEMAP_OUT")
    checkpoint = args.checkpoint or (os.path.join(out_dir, "model.ckpt") if out_dir else None)
    if checkpoint is None:
        raise FileNotFoundError("eval needs --checkpoint or --out")
    config = load_config(args.config) if args.config else None
    result = EvaluationPipeline(checkpoint, config=config).run()
    report = result["report"]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        report.write_csv(os.path.join(out_dir, "eval_metrics.csv"))
    _emit(
        {
            "checkpoint": checkpoint,
            "accuracy": report.accuracy,
            "spikes_per_image": report.spikes_per_image,
            "energy_ratio": report.energy_ratio,
        }
    )


def _run_compare(args, env):
    config = resolve_config(args, env)
    if args.ablate_ata:
        table = ata_ablation(config, write_csv=True)
    else:
        table = ComparisonPipeline(config).run()
    print(table.to_string(index=False))


def _run_report(args, env):
    out_dir = args.out or env.get("SPIKEMAP_OUT")
    report_path = args.report or (os.path.join(out_dir, "report.json") if out_dir else None)
    if report_path is None:
        raise FileNotFoundError("report needs --report or --out")
    result = ReportPipeline(report_path, out_dir=out_dir, write_plots=not args.no_plots).run()
    report = result["report"]
    _emit({"accuracy": report.accuracy, "energy_ratio": report.energy_ratio, "written": sorted(result)})


COMMANDS = {"train": _run_train, "eval": _run_eval, "compare": _run_compare, "report": _run_report}


def cli_main(argv=None, env=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    env = dict(os.environ) if env is None else dict(env)
    try:
        COMMANDS[args.command](args, env)
        return 0
    except (CustomException, OSError, ValueError) as e:
        logging.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
