"""
Command-line entry point.

Usage:
    moad-fusion gen-data --config configs/smoke.json --out runs/smoke
    moad-fusion train --config configs/smoke.json --out runs/smoke --stage both
    moad-fusion eval --checkpoint runs/smoke/stage2.ckpt --scenario camera_only --route single
    moad-fusion robustness --checkpoint moad=runs/a/stage2.ckpt --checkpoint lc=runs/b/stage1.ckpt
    moad-fusion ablate --suite modules --config configs/smoke.json
    moad-fusion plot runs/smoke/eval_full_pme.json

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, ValidationError

from moad_fusion import __version__
from moad_fusion.errors import MoadFusionError
from moad_fusion.evaluation.plots import plot_artifact
from moad_fusion.evaluation.scenarios import (
    robustness_rows,
    robustness_sweep,
    run_scenario,
)
from moad_fusion.evaluation.suites import ablation_suite, branch_breakdown, ensemble_suite
from moad_fusion.evaluation.tables import (
    format_ablation,
    format_ensemble,
    format_report,
    format_robustness,
)
from moad_fusion.logging_utils import setup_logger
from moad_fusion.models.common import EnsembleStrategy, ReportMetadata, Route
from moad_fusion.models.config import ExperimentConfig, ScenarioConfig, load_config
from moad_fusion.models.report import ARTIFACT_TYPES, RobustnessTable
from moad_fusion.models.schemas import validate_artifact
from moad_fusion.training.checkpoint import (
    detector_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from moad_fusion.training.trainer import train_stage1, train_stage2
from moad_fusion.world.dataset import generate_split, read_split, write_split

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

OUT_ENV = "MOAD_FUSION_OUT"
DEFAULT_OUT = "runs"
DATA_DIR = "data"
BRANCHES_ROUTE = "branches"

logger = logging.getLogger("moad_fusion")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="Experiment config (JSON); defaults when omitted")
    p.add_argument("--seed", type=int, help="Override the root seed")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config key, e.g. --set train.batch_size=8 (repeatable)",
    )
    p.add_argument(
        "--out",
        type=Path,
        help=f"Output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})",
    )
    p.add_argument(
        "--workers",
        type=int,
        default=1,
        help="Worker processes for scene generation and evaluation",
    )
    p.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Console log level",
    )


def _data_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="Dataset root (default: <out>/data)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="moad-fusion",
        description="Modality-agnostic decoding and proximity-based ensemble on a synthetic BEV world",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="Generate and render the dataset splits")
    _common(p)
    _data_arg(p)

    p = sub.add_parser("train", help="Train stage 1 (MOAD), stage 2 (PME) or both")
    _common(p)
    _data_arg(p)
    p.add_argument("--stage", choices=["1", "2", "both"], default="both")
    p.add_argument(
        "--checkpoint", type=Path, help="Stage-1 checkpoint for --stage 2 (default: <out>/stage1.ckpt)"
    )

    p = sub.add_parser("eval", help="Evaluate a checkpoint on one scenario")
    _common(p)
    _data_arg(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--scenario", default="full", help="Scenario name, or 'corrupted'")
    p.add_argument(
        "--route",
        choices=[r.value for r in Route] + [BRANCHES_ROUTE],
        help="lc, single, an ensemble strategy, or branches for the per-branch breakdown",
    )
    p.add_argument(
        "--ensemble",
        choices=[e.value for e in EnsembleStrategy],
        help="Shorthand for full-input routes; none is the LC branch",
    )

    p = sub.add_parser("ablate", help="Multi-seed module ablation or ensemble comparison")
    _common(p)
    _data_arg(p)
    p.add_argument("--suite", choices=["modules", "ensemble"], default="modules")

    p = sub.add_parser("robustness", help="Sensor-missing and corruption sweep")
    _common(p)
    _data_arg(p)
    p.add_argument(
        "--checkpoint",
        action="append",
        required=True,
        metavar="LABEL=PATH",
        help="Model to sweep; repeat to compare models (a bare path is labelled 'model')",
    )
    p.add_argument("--split", default="eval")

    p = sub.add_parser("plot", help="Render SVG figures of reports and tables")
    p.add_argument("reports", nargs="+", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    return parser


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    out.mkdir(parents=True, exist_ok=True)
    return Path(out)


def _data_dir(args: argparse.Namespace, out: Path) -> Path:
    return Path(args.data) if args.data is not None else out / DATA_DIR


def _config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    malformed = [o for o in overrides if "=" not in o]
    if malformed:
        parser.error(f"--set expects KEY=VALUE, got {malformed[0]!r}")
    return load_config(args.config, overrides)


def _metadata(checkpoint: Optional[str] = None) -> ReportMetadata:
    return ReportMetadata(
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        software_version=__version__,
        checkpoint=checkpoint,
    )


def _write(model: BaseModel, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def _scenario(cfg: ExperimentConfig, name: str) -> ScenarioConfig:
    if name == "corrupted":
        return cfg.robustness.corrupted_scenario()
    for scenario in cfg.robustness.scenarios:
        if scenario.name == name:
            return scenario
    known = ", ".join(["corrupted"] + [s.name for s in cfg.robustness.scenarios])
    raise MoadFusionError(f"unknown scenario {name!r} (known: {known})")


def cmd_gen_data(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    data = _data_dir(args, _out_dir(args))
    for split, count in cfg.data.split_counts().items():
        samples = generate_split(cfg, split, count, workers=args.workers)
        write_split(data / split, split, samples, cfg)
    _write(cfg, data / "config.json")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    _, samples = read_split(_data_dir(args, out) / "train")
    if args.stage in ("1", "both"):
        s1 = train_stage1(cfg, samples, log_path=out / "train_log_stage1.jsonl")
        save_checkpoint(s1.checkpoint, out / "stage1.ckpt")
        stage1 = s1.checkpoint
    else:
        stage1 = load_checkpoint(args.checkpoint or out / "stage1.ckpt")
    if args.stage in ("2", "both"):
        s2 = train_stage2(cfg, stage1, samples, log_path=out / "train_log_stage2.jsonl")
        save_checkpoint(s2.checkpoint, out / "stage2.ckpt")
    return EXIT_OK


def _route(args: argparse.Namespace) -> str:
    if args.route is not None:
        return str(args.route)
    if args.ensemble is not None:
        strategy = EnsembleStrategy(args.ensemble)
        return Route.LC.value if strategy == EnsembleStrategy.NONE else strategy.value
    return Route.PME.value


def cmd_eval(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    state = load_checkpoint(args.checkpoint)
    detector = detector_from_checkpoint(state)
    _, samples = read_split(_data_dir(args, out) / args.split)
    scenario = _scenario(cfg, args.scenario)
    route = _route(args)
    metadata = _metadata(str(args.checkpoint))

    if route == BRANCHES_ROUTE:
        breakdown = branch_breakdown(detector, samples, cfg, scenario, workers=args.workers)
        reports = list(breakdown.values())
    else:
        reports = [
            run_scenario(detector, samples, scenario, Route(route), cfg, workers=args.workers)
        ]
    for report in reports:
        report = report.model_copy(update={"metadata": metadata})
        stem = report.scenario_tag.replace("/", "_")
        path = _write(report, out / f"eval_{stem}.json")
        validate_artifact(path)
        print(format_report(report))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    data = _data_dir(args, out)
    _, train = read_split(data / "train")
    _, evaluation = read_split(data / "eval")
    if args.suite == "modules":
        table = ablation_suite(cfg, train, evaluation, workers=args.workers)
        text, stem = format_ablation(table), "ablation_table"
    else:
        table = ensemble_suite(cfg, train, evaluation, workers=args.workers)
        text, stem = format_ensemble(table), "ensemble_table"
    table = table.model_copy(update={"metadata": _metadata()})
    _write(table, out / f"{stem}.json")
    (out / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")
    plot_artifact(table, out, stem)
    print(text)
    return EXIT_OK


def parse_labelled(items: Sequence[str]) -> List[Tuple[str, Path]]:
    pairs = []
    for item in items:
        label, sep, path = item.partition("=")
        pairs.append((label, Path(path)) if sep else ("model", Path(item)))
    return pairs


def cmd_robustness(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    _, samples = read_split(_data_dir(args, out) / args.split)
    table = RobustnessTable(metadata=_metadata())
    for label, path in parse_labelled(args.checkpoint):
        detector = detector_from_checkpoint(load_checkpoint(path))
        reports = robustness_sweep(detector, samples, cfg, workers=args.workers)
        for report in reports:
            stem = report.scenario_tag.replace("/", "_")
            _write(report, out / "robustness" / label / f"eval_{stem}.json")
        table.rows.extend(robustness_rows(label, reports))
    text = format_robustness(table)
    _write(table, out / "robustness_table.json")
    (out / "robustness_table.txt").write_text(text + "\n", encoding="utf-8")
    plot_artifact(table, out, "robustness")
    print(text)
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / "plots"
    for path in args.reports:
        artifact = validate_artifact(path)
        if not isinstance(artifact, tuple(ARTIFACT_TYPES.values())):
            raise MoadFusionError(f"{path}: not a report or table")
        plot_artifact(artifact, out, path.stem)  # type: ignore[arg-type]
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "robustness": cmd_robustness,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logger("moad_fusion", args.log_level)
    try:
        if args.command == "plot":
            return cmd_plot(args)
        cfg = _config(args, parser)
        return COMMANDS[args.command](args, cfg)
    except (MoadFusionError, ValidationError, ValueError, OSError) as e:
        print(f"moad-fusion {args.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
