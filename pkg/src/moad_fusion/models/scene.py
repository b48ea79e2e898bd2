"""Ground-truth scene and corruption records."""

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from moad_fusion.models.common import SCHEMA_BASE, CorruptionKind, TargetModality


class GroundTruthBox(BaseModel):
    """An object in the BEV plane."""

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    center: Tuple[float, float] = Field(..., description="(x, y) in meters")
    size: Tuple[float, float] = Field(..., description="(w, l) in meters")
    class_id: int = Field(..., ge=0, alias="classId", description="Index into the class catalogue")
    yaw: float = Field(default=0.0, description="Heading in radians")

    @model_validator(mode="after")
    def _positive_size(self) -> "GroundTruthBox":
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("box sizes must be positive")
        return self


class Scene(BaseModel):
    """Ground-truth world state; a deterministic function of (seed, world config)."""

    model_config = ConfigDict(
        populate_by_name=True,
        frozen=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:scene",
        },
    )

    type_: Literal["Scene"] = Field(default="Scene", alias="@type")
    boxes: Tuple[GroundTruthBox, ...] = Field(default=(), description="Objects in the scene")
    world_extent: Tuple[float, float, float, float] = Field(
        ..., alias="worldExtent", description="(x_min, x_max, y_min, y_max) in meters"
    )
    seed: int = Field(..., ge=0, description="Seed the scene was generated from")

    @model_validator(mode="after")
    def _boxes_inside(self) -> "Scene":
        x_min, x_max, y_min, y_max = self.world_extent
        for box in self.boxes:
            x, y = box.center
            if not (x_min <= x <= x_max and y_min <= y <= y_max):
                raise ValueError(f"box center {box.center} lies outside {self.world_extent}")
        return self

    def check_classes(self, num_classes: int) -> None:
        for box in self.boxes:
            if box.class_id >= num_classes:
                raise ValueError(f"class_id {box.class_id} out of range for C={num_classes}")


class CorruptionSpec(BaseModel):
    """A sensor malfunction or degradation applied to a rendered grid.

    MISSING_MODALITY ignores `magnitude`; OCCLUSION_PATCH reads it as the masked
    area fraction in (0, 1]; ATTENUATION scales values by 1 - magnitude.
    """

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    kind: CorruptionKind = Field(default=CorruptionKind.NONE)
    magnitude: float = Field(default=0.0, ge=0)
    target_modality: TargetModality = Field(default=TargetModality.BOTH, alias="targetModality")
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_magnitude(self) -> "CorruptionSpec":
        if self.kind == CorruptionKind.OCCLUSION_PATCH and not 0 < self.magnitude <= 1:
            raise ValueError("OCCLUSION_PATCH magnitude is an area fraction in (0, 1]")
        if self.kind == CorruptionKind.ATTENUATION and self.magnitude > 1:
            raise ValueError("ATTENUATION magnitude must be in [0, 1]")
        return self


class NoiseRecord(BaseModel):
    """What was applied to a rendered grid, from rendering onwards."""

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    render_seed: int = Field(default=0, ge=0, alias="renderSeed")
    jitter_sigma: float = Field(default=0.0, ge=0, alias="jitterSigma")
    occlusion_fraction: float = Field(default=0.0, ge=0, le=1, alias="occlusionFraction")
    missing: bool = Field(default=False, description="Set when the modality was dropped")
    applied: Tuple[CorruptionSpec, ...] = Field(
        default=(), description="Corruptions applied after rendering, in order"
    )
    null_value: Optional[float] = Field(
        default=None, alias="nullValue", description="Fill value used for a missing modality"
    )

    def with_corruption(self, spec: CorruptionSpec, missing: bool = False) -> "NoiseRecord":
        update = {"applied": self.applied + (spec,)}
        if missing:
            update.update({"missing": True, "null_value": 0.0})
        return self.model_copy(update=update)
