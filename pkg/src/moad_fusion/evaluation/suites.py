"""Multi-seed experiment suites: module ablation, ensemble strategies, branch breakdown."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from moad_fusion.evaluation.metrics import evaluate
from moad_fusion.evaluation.scenarios import run_scenario, scenario_samples
from moad_fusion.models.common import Branch, Route
from moad_fusion.models.config import ExperimentConfig, ScenarioConfig
from moad_fusion.models.report import (
    AblationRow,
    AblationTable,
    EnsembleRow,
    EnsembleTable,
    EvalReport,
)
from moad_fusion.network.detector import Detector
from moad_fusion.training.inference import predict_branches
from moad_fusion.training.trainer import StageResult, train_stage1, train_stage2
from moad_fusion.world.dataset import SceneSample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationVariant:
    tag: str
    description: str
    moad: bool
    pme: bool

    @property
    def route(self) -> Route:
        """Without PME only the multi-modal branch is used at test time."""
        return Route.PME if self.pme else Route.LC


ABLATION_VARIANTS = (
    AblationVariant("a", "LC branch only", moad=False, pme=False),
    AblationVariant("b", "+ PME", moad=False, pme=True),
    AblationVariant("c", "+ MOAD", moad=True, pme=False),
    AblationVariant("d", "+ MOAD + PME", moad=True, pme=True),
)

ENSEMBLE_ROUTES = (
    ("none", Route.LC),
    ("topk", Route.TOPK),
    ("nms", Route.NMS),
    ("nme", Route.NME),
    ("pme", Route.PME),
)


def lc_only_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Stage-1 training of the multi-modal branch alone: w_L = w_C = 0."""
    return cfg.model_copy(update={"loss": cfg.loss.model_copy(update={"w_L": 0.0, "w_C": 0.0})})


def nme_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.model_copy(update={"pme": cfg.pme.model_copy(update={"proximity_bias": False})})


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return cfg.model_copy(update={"seed": seed})


def seed_stats(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single seed)."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def _evaluate_on(
    detector: Detector,
    samples: Sequence[SceneSample],
    scenario: ScenarioConfig,
    route: Route,
    cfg: ExperimentConfig,
    workers: int,
) -> EvalReport:
    """Curve-free report on `samples` corrupted under the suite's root seed."""
    return run_scenario(detector, samples, scenario, route, cfg, with_curves=False, workers=workers)


def ablation_suite(
    cfg: ExperimentConfig,
    train_samples: Sequence[SceneSample],
    eval_samples: Sequence[SceneSample],
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> AblationTable:
    """Rows (a)-(d) on the corrupted-eval split, averaged over training seeds.

    Each seed trains two stage-1 models (LC-only and MOAD); the PME rows reuse
    them for stage 2.
    """
    seeds = list(seeds if seeds is not None else cfg.robustness.suite_seeds)
    scenario = cfg.robustness.corrupted_scenario()
    per_variant: Dict[str, List[EvalReport]] = {v.tag: [] for v in ABLATION_VARIANTS}
    for seed in seeds:
        stage1: Dict[bool, Tuple[ExperimentConfig, StageResult]] = {}
        for moad in (False, True):
            run_cfg = with_seed(cfg if moad else lc_only_config(cfg), seed)
            stage1[moad] = (run_cfg, train_stage1(run_cfg, train_samples))
        for variant in ABLATION_VARIANTS:
            run_cfg, s1 = stage1[variant.moad]
            detector = s1.detector
            if variant.pme:
                detector = train_stage2(run_cfg, s1.checkpoint, train_samples).detector
            report = _evaluate_on(detector, eval_samples, scenario, variant.route, cfg, workers)
            per_variant[variant.tag].append(report)
            logger.info("ablation (%s) seed %d: mAP=%.4f", variant.tag, seed, report.mean_ap)

    rows = []
    for variant in ABLATION_VARIANTS:
        reports = per_variant[variant.tag]
        maps = [r.mean_ap for r in reports]
        mean_map, std_map = seed_stats(maps)
        rows.append(
            AblationRow(
                tag=variant.tag,
                description=variant.description,
                moad=variant.moad,
                pme=variant.pme,
                mean_ap=mean_map,
                nds_lite=seed_stats([r.nds_lite for r in reports])[0],
                mean_ap_std=std_map,
                per_seed_map=maps,
            )
        )
    return AblationTable(split=scenario.name, rows=rows)


def ensemble_suite(
    cfg: ExperimentConfig,
    train_samples: Sequence[SceneSample],
    eval_samples: Sequence[SceneSample],
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> EnsembleTable:
    """none / top-k / NMS / NME / PME over one MOAD stage-1 model per seed.

    NME is its own stage-2 run without the proximity bias.
    """
    seeds = list(seeds if seeds is not None else cfg.robustness.suite_seeds)
    scenario = cfg.robustness.corrupted_scenario()
    per_strategy: Dict[str, List[EvalReport]] = {name: [] for name, _ in ENSEMBLE_ROUTES}
    for seed in seeds:
        run_cfg = with_seed(cfg, seed)
        s1 = train_stage1(run_cfg, train_samples)
        pme = train_stage2(run_cfg, s1.checkpoint, train_samples).detector
        nme = train_stage2(nme_config(run_cfg), s1.checkpoint, train_samples).detector
        for name, route in ENSEMBLE_ROUTES:
            detector = nme if route == Route.NME else pme
            report = _evaluate_on(detector, eval_samples, scenario, route, cfg, workers)
            per_strategy[name].append(report)
            logger.info("ensemble %s seed %d: mAP=%.4f", name, seed, report.mean_ap)

    rows = []
    for name, _ in ENSEMBLE_ROUTES:
        reports = per_strategy[name]
        maps = [r.mean_ap for r in reports]
        mean_map, std_map = seed_stats(maps)
        rows.append(
            EnsembleRow(
                strategy=name,
                mean_ap=mean_map,
                nds_lite=seed_stats([r.nds_lite for r in reports])[0],
                mean_ap_std=std_map,
                per_seed_map=maps,
            )
        )
    return EnsembleTable(split=scenario.name, rows=rows)


def branch_breakdown(
    detector: Detector,
    samples: Sequence[SceneSample],
    cfg: ExperimentConfig,
    scenario: Optional[ScenarioConfig] = None,
    workers: int = 1,
) -> Dict[Branch, EvalReport]:
    """Reports of the LC, L and C branches and of the ensemble on the same inputs."""
    scenario = scenario or ScenarioConfig(name="full")
    corrupted = scenario_samples(samples, scenario, cfg.seed)
    detections = predict_branches(detector, corrupted, cfg.eval, workers=workers)
    scenes = [s.scene for s in corrupted]
    return {
        branch: evaluate(
            detections[branch],
            scenes,
            cfg.eval,
            cfg.world.class_names,
            f"{scenario.name}/branch-{branch.value}",
        )
        for branch in Branch
    }
