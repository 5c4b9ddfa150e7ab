from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict


class BaseSchema(BaseModel):
    model_config = ConfigDict(from_attributes=True, populate_by_name=True)


class BoundaryTag(str, Enum):
    DIRICHLET = "D"
    NEUMANN = "N"


class EstimatorChoice(str, Enum):
    ETA = "eta"
    ETA_STD = "eta_std"
    ETA_NR = "eta_nr"


class NodeClass(str, Enum):
    NO_CONTACT = "no_contact"
    SEMI_CONTACT = "semi_contact"
    FULL_CONTACT = "full_contact"


class LinearSolverMethod(str, Enum):
    DIRECT = "direct"
    CG = "cg"


class MeshPattern(str, Enum):
    DIAGONAL = "diagonal"
    CROSSED = "crossed"
