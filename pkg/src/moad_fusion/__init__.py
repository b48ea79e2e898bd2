"""
Modality-agnostic decoding and proximity-based modality ensemble.

Two-sensor BEV object detection on a synthetic world: a GEO sensor with accurate
positions and ambiguous classes, a SEM sensor with accurate classes and noisy
positions, one shared query decoder run as three branches, and an ensemble
layer that fuses the branch outputs.
"""

__version__ = "1.0.0"

from moad_fusion.models.config import ExperimentConfig, load_config
from moad_fusion.models.report import AblationTable, EnsembleTable, EvalReport, RobustnessTable
from moad_fusion.models.scene import CorruptionSpec, GroundTruthBox, Scene
from moad_fusion.network.detector import Detector, build_detector

__all__ = [
    "ExperimentConfig",
    "load_config",
    "AblationTable",
    "EnsembleTable",
    "EvalReport",
    "RobustnessTable",
    "CorruptionSpec",
    "GroundTruthBox",
    "Scene",
    "Detector",
    "build_detector",
]
