"""Evaluation scenarios: corrupted copies of a split, routing and the robustness sweep."""

import logging
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from moad_fusion.errors import InferenceModeError
from moad_fusion.evaluation.metrics import evaluate
from moad_fusion.models.common import (
    CorruptionKind,
    EnsembleStrategy,
    InferenceMode,
    Route,
    TargetModality,
)
from moad_fusion.models.config import ExperimentConfig, ScenarioConfig, derive_seed
from moad_fusion.models.report import EvalReport, RobustnessRow
from moad_fusion.models.scene import CorruptionSpec
from moad_fusion.network.detector import Detector
from moad_fusion.training.inference import predict
from moad_fusion.world.corruption import corrupt_pair
from moad_fusion.world.dataset import SceneSample

logger = logging.getLogger(__name__)

FULL_SCENARIO = "full"

ENSEMBLE_ROUTES = {
    Route.LC: EnsembleStrategy.NONE,
    Route.PME: EnsembleStrategy.PME,
    Route.NME: EnsembleStrategy.NME,
    Route.TOPK: EnsembleStrategy.TOPK,
    Route.NMS: EnsembleStrategy.NMS,
}


def scene_corruptions(
    scenario: ScenarioConfig, root_seed: int, index: int
) -> List[CorruptionSpec]:
    """Corruptions of scene `index`, each with its own derived seed.

    With a per-scene pool exactly one spec is drawn per scene.
    """
    specs = list(scenario.corruptions)
    if scenario.per_scene_pool and specs:
        rng = np.random.default_rng(derive_seed(root_seed, "pool", scenario.name, index))
        specs = [specs[int(rng.integers(len(specs)))]]
    return [
        spec.model_copy(
            update={"seed": derive_seed(root_seed, "corrupt", scenario.name, index, k, spec.seed)}
        )
        for k, spec in enumerate(specs)
    ]


def scenario_samples(
    samples: Sequence[SceneSample], scenario: ScenarioConfig, root_seed: int
) -> List[SceneSample]:
    """Copies of `samples` with the scenario's corruptions applied."""
    if not scenario.corruptions:
        return list(samples)
    out = []
    for i, sample in enumerate(samples):
        geo, sem = corrupt_pair(sample.geo, sample.sem, scene_corruptions(scenario, root_seed, i))
        out.append(SceneSample(scene=sample.scene, geo=geo, sem=sem))
    return out


def _affected(scenario: ScenarioConfig) -> Set[TargetModality]:
    targets: Set[TargetModality] = set()
    for spec in scenario.corruptions:
        if spec.kind == CorruptionKind.NONE:
            continue
        if spec.target_modality == TargetModality.BOTH:
            targets.update({TargetModality.GEO, TargetModality.SEM})
        else:
            targets.add(spec.target_modality)
    return targets


def resolve_route(
    route: Route, scenario: ScenarioConfig
) -> Tuple[InferenceMode, EnsembleStrategy]:
    """Map a route to the inference mode and ensemble strategy it runs.

    `single` picks the branch of the surviving (or uncorrupted) modality, so the
    scenario must affect exactly one modality, uniformly over its scenes.
    """
    if route in ENSEMBLE_ROUTES:
        return InferenceMode.FULL, ENSEMBLE_ROUTES[route]
    targets = _affected(scenario)
    if scenario.per_scene_pool or len(targets) != 1:
        raise InferenceModeError(
            f"scenario {scenario.name!r} does not leave exactly one intact modality; "
            "route 'single' is undefined there"
        )
    if targets == {TargetModality.GEO}:
        return InferenceMode.CAMERA_ONLY, EnsembleStrategy.NONE
    return InferenceMode.LIDAR_ONLY, EnsembleStrategy.NONE


def scenario_tag(scenario: ScenarioConfig, route: Route) -> str:
    return f"{scenario.name}/{route.value}"


def run_scenario(
    detector: Detector,
    samples: Sequence[SceneSample],
    scenario: ScenarioConfig,
    route: Route,
    cfg: ExperimentConfig,
    with_curves: bool = True,
    workers: int = 1,
) -> EvalReport:
    mode, ensemble = resolve_route(route, scenario)
    corrupted = scenario_samples(samples, scenario, cfg.seed)
    detections = predict(detector, corrupted, mode, ensemble, cfg.eval, workers=workers)
    report = evaluate(
        detections,
        [s.scene for s in corrupted],
        cfg.eval,
        cfg.world.class_names,
        scenario_tag(scenario, route),
        with_curves=with_curves,
    )
    logger.info(
        "%s: mAP=%.4f nds_lite=%.4f (%s, %s)",
        report.scenario_tag,
        report.mean_ap,
        report.nds_lite,
        mode.value,
        ensemble.value,
    )
    return report


def relative_drop(full_map: float, scenario_map: float) -> Optional[float]:
    """(full - scenario) / full; undefined when the full mAP is zero."""
    if full_map == 0:
        return None
    return (full_map - scenario_map) / full_map


def _full_scenario(scenarios: Sequence[ScenarioConfig]) -> ScenarioConfig:
    for scenario in scenarios:
        if scenario.name == FULL_SCENARIO:
            return scenario
    return ScenarioConfig(name=FULL_SCENARIO, routes=[Route.LC, Route.PME])


def robustness_sweep(
    detector: Detector,
    samples: Sequence[SceneSample],
    cfg: ExperimentConfig,
    scenarios: Optional[Sequence[ScenarioConfig]] = None,
    workers: int = 1,
) -> List[EvalReport]:
    """One report per (scenario, route), with the mAP drop against full input.

    The drop is measured against the full-input report of the same route, or of
    the LC route when the full scenario does not run that route.
    """
    scenarios = list(scenarios if scenarios is not None else cfg.robustness.scenarios)
    full = _full_scenario(scenarios)
    references: Dict[Route, EvalReport] = {}

    def reference(route: Route) -> EvalReport:
        key = route if route in full.routes else Route.LC
        if key not in references:
            references[key] = run_scenario(detector, samples, full, key, cfg, workers=workers)
        return references[key]

    reports: List[EvalReport] = []
    for scenario in scenarios:
        for route in scenario.routes:
            if scenario is full:
                report = reference(route)
            else:
                report = run_scenario(detector, samples, scenario, route, cfg, workers=workers)
            ref = reference(route)
            reports.append(
                report.model_copy(
                    update={
                        "relative_drop": relative_drop(ref.mean_ap, report.mean_ap),
                        "reference_tag": ref.scenario_tag,
                    }
                )
            )
    return reports


def robustness_rows(model_label: str, reports: Sequence[EvalReport]) -> List[RobustnessRow]:
    rows = []
    for report in reports:
        scenario, _, route = report.scenario_tag.partition("/")
        rows.append(
            RobustnessRow(
                model_label=model_label,
                scenario=scenario,
                route=route,
                mean_ap=report.mean_ap,
                nds_lite=report.nds_lite,
                relative_drop=report.relative_drop,
            )
        )
    return rows
