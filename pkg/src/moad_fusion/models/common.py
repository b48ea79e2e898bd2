"""Common enums and small records shared across the moad-fusion records."""

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

SCHEMA_VERSION = "1.0"
SCHEMA_BASE = "urn:moad-fusion:schemas:v1"


class Modality(str, Enum):
    """Synthetic sensor modality.

    GEO plays the LiDAR role (accurate position, ambiguous class); SEM plays the
    camera role (accurate class, noisy position, occlusion).
    """

    GEO = "GEO"
    SEM = "SEM"


class Branch(str, Enum):
    """Decoding branch tag; E is the ensembled output."""

    LC = "LC"
    L = "L"
    C = "C"
    E = "E"


MOAD_BRANCHES = (Branch.LC, Branch.L, Branch.C)

BRANCH_MODALITIES = {
    Branch.LC: (Modality.GEO, Modality.SEM),
    Branch.L: (Modality.GEO,),
    Branch.C: (Modality.SEM,),
}


class TargetModality(str, Enum):
    """Which sensor grid a corruption applies to."""

    GEO = "GEO"
    SEM = "SEM"
    BOTH = "BOTH"


class CorruptionKind(str, Enum):
    NONE = "NONE"
    MISSING_MODALITY = "MISSING_MODALITY"
    ADDITIVE_NOISE = "ADDITIVE_NOISE"
    OCCLUSION_PATCH = "OCCLUSION_PATCH"
    POSITION_JITTER = "POSITION_JITTER"
    ATTENUATION = "ATTENUATION"


class MoadMode(str, Enum):
    """Which branches a MOAD forward pass runs."""

    TRAIN = "TRAIN"
    TEST_LC = "TEST_LC"
    TEST_L = "TEST_L"
    TEST_C = "TEST_C"


class InferenceMode(str, Enum):
    """Sensor availability at inference time."""

    FULL = "full"
    CAMERA_ONLY = "camera_only"
    LIDAR_ONLY = "lidar_only"


class EnsembleStrategy(str, Enum):
    PME = "pme"
    NME = "nme"
    TOPK = "topk"
    NMS = "nms"
    NONE = "none"


class Route(str, Enum):
    """How a scenario's predictions are produced.

    `lc` is the multi-modal branch, `single` the branch of the surviving (or
    uncorrupted) modality, the rest are ensemble strategies over all branches.
    """

    LC = "lc"
    SINGLE = "single"
    PME = "pme"
    NME = "nme"
    TOPK = "topk"
    NMS = "nms"


class ReportMetadata(BaseModel):
    """Run metadata; the only place a timestamp may appear in an emitted record."""

    model_config = ConfigDict(populate_by_name=True)

    created_at: Optional[str] = Field(
        None, alias="createdAt", description="ISO-8601 creation time"
    )
    software_version: Optional[str] = Field(
        None, alias="softwareVersion", description="moad-fusion version"
    )
    checkpoint: Optional[str] = Field(None, description="Checkpoint the report was produced from")
