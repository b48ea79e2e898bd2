"""Evaluation reports and experiment tables."""

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from moad_fusion.models.common import SCHEMA_BASE, SCHEMA_VERSION, ReportMetadata


class PrCurve(BaseModel):
    """101-point interpolated precision over recall, at one distance threshold."""

    model_config = ConfigDict(populate_by_name=True)

    threshold: float = Field(..., gt=0, description="Distance threshold in meters")
    recall: List[float] = Field(..., description="Recall sample points")
    precision: List[float] = Field(..., description="Interpolated precision at each recall")


class EvalReport(BaseModel):
    """Center-distance detection metrics for one scenario and route."""

    model_config = ConfigDict(
        populate_by_name=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:eval-report",
        },
    )

    type_: Literal["EvalReport"] = Field(default="EvalReport", alias="@type")
    schema_version: str = Field(default=SCHEMA_VERSION, alias="schemaVersion")
    scenario_tag: str = Field(..., alias="scenarioTag", description="Scenario and route")
    num_scenes: int = Field(..., ge=0, alias="numScenes")
    class_names: List[str] = Field(..., alias="classNames")
    distance_thresholds: List[float] = Field(..., alias="distanceThresholds")
    per_class_ap: Dict[str, Dict[str, Optional[float]]] = Field(
        ...,
        alias="perClassAP",
        description="class -> threshold -> AP; null when the class has no ground truth",
    )
    mean_ap: float = Field(..., ge=0, le=1, alias="mAP")
    mate: float = Field(..., ge=0, alias="mATE", description="Mean translation error (m)")
    mase: float = Field(..., ge=0, le=1, alias="mASE", description="Mean scale error")
    nds_lite: float = Field(..., ge=0, le=1, alias="ndsLite")
    relative_drop: Optional[float] = Field(
        None, alias="relativeDrop", description="(full - scenario) / full mAP"
    )
    reference_tag: Optional[str] = Field(
        None, alias="referenceTag", description="Scenario the drop is measured against"
    )
    pr_curves: Optional[Dict[str, PrCurve]] = Field(None, alias="prCurves")
    metadata: Optional[ReportMetadata] = None

    def deterministic_json(self) -> str:
        """Serialization with the timestamp-bearing metadata removed."""
        return self.model_dump_json(by_alias=True, exclude={"metadata"}, indent=2)


class RobustnessRow(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    model_label: str = Field(..., alias="modelLabel")
    scenario: str
    route: str
    mean_ap: float = Field(..., alias="mAP")
    nds_lite: float = Field(..., alias="ndsLite")
    relative_drop: Optional[float] = Field(None, alias="relativeDrop")


class RobustnessTable(BaseModel):
    """Sensor-missing and corruption sweep, framed as relative mAP drop."""

    model_config = ConfigDict(
        populate_by_name=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:robustness-table",
        },
    )

    type_: Literal["RobustnessTable"] = Field(default="RobustnessTable", alias="@type")
    schema_version: str = Field(default=SCHEMA_VERSION, alias="schemaVersion")
    rows: List[RobustnessRow] = Field(default_factory=list)
    metadata: Optional[ReportMetadata] = None


class AblationRow(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    tag: Literal["a", "b", "c", "d"]
    description: str
    moad: bool
    pme: bool
    mean_ap: float = Field(..., alias="mAP", description="Mean over seeds")
    nds_lite: float = Field(..., alias="ndsLite", description="Mean over seeds")
    mean_ap_std: float = Field(default=0.0, alias="mAPStd")
    per_seed_map: List[float] = Field(default_factory=list, alias="perSeedMAP")


class AblationTable(BaseModel):
    """Module ablation: LC-only, +PME, +MOAD, both."""

    model_config = ConfigDict(
        populate_by_name=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:ablation-table",
        },
    )

    type_: Literal["AblationTable"] = Field(default="AblationTable", alias="@type")
    schema_version: str = Field(default=SCHEMA_VERSION, alias="schemaVersion")
    split: str = Field(..., description="Scenario the rows were evaluated on")
    rows: List[AblationRow] = Field(default_factory=list)
    metadata: Optional[ReportMetadata] = None


class EnsembleRow(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    strategy: str
    mean_ap: float = Field(..., alias="mAP")
    nds_lite: float = Field(..., alias="ndsLite")
    mean_ap_std: float = Field(default=0.0, alias="mAPStd")
    per_seed_map: List[float] = Field(default_factory=list, alias="perSeedMAP")


class EnsembleTable(BaseModel):
    """Ensemble-strategy comparison over the three decoding branches."""

    model_config = ConfigDict(
        populate_by_name=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:ensemble-table",
        },
    )

    type_: Literal["EnsembleTable"] = Field(default="EnsembleTable", alias="@type")
    schema_version: str = Field(default=SCHEMA_VERSION, alias="schemaVersion")
    split: str
    rows: List[EnsembleRow] = Field(default_factory=list)
    metadata: Optional[ReportMetadata] = None


AnyArtifact = Union[EvalReport, RobustnessTable, AblationTable, EnsembleTable]

ARTIFACT_TYPES = {
    "EvalReport": EvalReport,
    "RobustnessTable": RobustnessTable,
    "AblationTable": AblationTable,
    "EnsembleTable": EnsembleTable,
}
