"""The full two-modality detector: MOAD plus the ensemble module."""

from typing import List, Tuple

import torch
import torch.nn as nn

from moad_fusion.models.config import ExperimentConfig, derive_seed
from moad_fusion.network.moad import MoadModel
from moad_fusion.network.pme import ProximityModalityEnsemble

PME_PREFIX = "pme."
FROZEN_IN_STAGE2_EXCEPTIONS = ("pme.bias.beta",)


class Detector(nn.Module):
    def __init__(self, cfg: ExperimentConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.moad = MoadModel(cfg.model, cfg.world, cfg.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(cfg.seed, "init", "pme"))
            self.pme = ProximityModalityEnsemble(cfg.pme, cfg.model, cfg.world)
        self.sync_pme_head()

    def sync_pme_head(self) -> None:
        """Copy the current MOAD head into h_e."""
        self.pme.init_head_from(self.moad.head)

    def stage2_parameters(self) -> List[Tuple[str, nn.Parameter]]:
        """Parameters stage 2 optimizes: the ensemble module, except beta."""
        return [
            (name, p)
            for name, p in self.named_parameters()
            if name.startswith(PME_PREFIX) and name not in FROZEN_IN_STAGE2_EXCEPTIONS
        ]


def build_detector(cfg: ExperimentConfig) -> Detector:
    """Detector with parameters initialized from the config's root seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(cfg.seed, "init"))
        return Detector(cfg)
