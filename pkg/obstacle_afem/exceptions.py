from __future__ import annotations

from typing import Any, Optional, Sequence


class AfemError(Exception):
    """Base error; ``detail`` is the human readable reason, ``context`` extra facts."""

    def __init__(self, detail: str, context: Optional[dict[str, Any]] = None):
        super().__init__(detail)
        self.detail = detail
        self.context: dict[str, Any] = dict(context or {})

    def with_context(self, **context: Any) -> "AfemError":
        self.context.update(context)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.detail
        extra = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.detail} ({extra})"


class MeshError(AfemError):
    def __init__(self, detail: str, entity_id: Any = None):
        super().__init__(detail, {"entity_id": entity_id} if entity_id is not None else None)
        self.entity_id = entity_id


class AssemblyError(AfemError):
    pass


class SolverError(AfemError):
    pass


class MaxIterationsError(SolverError):
    pass


class ActiveSetCycleError(MaxIterationsError):
    pass


class LinearSolverError(SolverError):
    def __init__(self, detail: str, residual_history: Sequence[float] = ()):
        super().__init__(detail, {"last_residual": residual_history[-1] if residual_history else None})
        self.residual_history = list(residual_history)


class EstimatorError(AfemError):
    pass


class ConfigurationError(AfemError):
    pass


class ProblemDefinitionError(AfemError):
    pass
