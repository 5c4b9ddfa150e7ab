from __future__ import annotations

from typing import Any, Optional

from pydantic import Field, field_validator, model_validator

from ..config import get_settings
from .common import BaseSchema, EstimatorChoice


class AdaptiveConfig(BaseSchema):
    """One adaptive run: a problem, one eps and one estimator."""

    problem: str = Field(..., description="Registry name or path of a JSON problem descriptor")
    eps: float = Field(..., gt=0, description="Diffusion scale eps")
    estimator: EstimatorChoice = Field(EstimatorChoice.ETA, description="Estimator that drives the marking")
    marking_factor: float = Field(default_factory=lambda: get_settings().marking_factor, gt=0)
    max_elements: int = Field(default_factory=lambda: get_settings().max_elements, gt=0)
    max_iterations: int = Field(default_factory=lambda: get_settings().max_iterations, gt=0)
    initial_uniform_refinements: Optional[int] = Field(None, ge=0, description="Overrides the problem default")
    squared_mean: bool = Field(False, description="Compare squared indicators against their mean")
    warm_start: bool = Field(True, description="Seed each obstacle solve with the prolonged active set")
    pdas_dump: Optional[str] = Field(None, description="Directory for per-solve PDAS diagnostics")


class RunConfig(BaseSchema):
    """Cartesian product of eps values and estimators for one problem."""

    problem: str
    eps: list[float] = Field(..., min_length=1)
    estimators: list[EstimatorChoice] = Field(default_factory=lambda: [EstimatorChoice.ETA], min_length=1)
    marking_factor: float = Field(default_factory=lambda: get_settings().marking_factor, gt=0)
    max_elements: int = Field(default_factory=lambda: get_settings().max_elements, gt=0)
    initial_refinements: Optional[int] = Field(None, ge=0)
    output_dir: str = Field(default_factory=lambda: get_settings().output_dir)
    reference_mode: bool = Field(False, description="Sequential, in-process and bit-reproducible")
    workers: int = Field(default_factory=lambda: get_settings().workers, ge=1)
    squared_mean: bool = False
    pdas_dump: bool = False

    @field_validator("eps")
    @classmethod
    def positive_eps(cls, v):
        bad = [e for e in v if not e > 0]
        if bad:
            raise ValueError(f"eps values must be positive: {bad}")
        return v

    @field_validator("estimators")
    @classmethod
    def unique_estimators(cls, v):
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def reference_is_sequential(self):
        if self.reference_mode:
            self.workers = 1
        return self

    def jobs(self) -> list[AdaptiveConfig]:
        return [
            AdaptiveConfig(
                problem=self.problem,
                eps=eps,
                estimator=estimator,
                marking_factor=self.marking_factor,
                max_elements=self.max_elements,
                initial_uniform_refinements=self.initial_refinements,
                squared_mean=self.squared_mean,
            )
            for eps in self.eps
            for estimator in self.estimators
        ]


class RunMetadata(BaseSchema):
    schema_version: str = Field(default_factory=lambda: get_settings().schema_version)
    package_version: str
    problem: str
    eps: float
    estimator: EstimatorChoice
    status: str
    error: Optional[str] = None
    iterations: int = 0
    final_elements: int = 0
    stop_reason: Optional[str] = Field(None, description="max_elements | nothing_marked | max_iterations")
    tolerances: dict[str, float] = Field(default_factory=dict)
    quadrature: dict[str, Any] = Field(default_factory=dict)
    conventions: dict[str, Any] = Field(default_factory=dict)
    problem_metadata: dict[str, Any] = Field(default_factory=dict)
    resources: dict[str, Any] = Field(default_factory=dict)
    columns: dict[str, str] = Field(default_factory=dict)


class BundleRecord(BaseSchema):
    """Index entry for the artifacts of one (problem, eps, estimator) job."""

    problem: str
    eps: float
    estimator: EstimatorChoice
    status: str = Field(..., description="ok | failed")
    error: Optional[str] = None
    directory: str
    files: dict[str, str] = Field(default_factory=dict)
    final: dict[str, Any] = Field(default_factory=dict)


class BundleIndex(BaseSchema):
    schema_version: str = Field(default_factory=lambda: get_settings().schema_version)
    bundles: list[BundleRecord] = Field(default_factory=list)
