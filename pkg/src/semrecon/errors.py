"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class OutOfBoundsError(ValueError):
    """A query point lies outside the map bounding box."""


class EmptySelectionError(ValueError):
    """A class/primitive filter matched nothing."""


class DuplicateMeasurementError(ValueError):
    """A measurement with this pose was already integrated."""


class ContractViolation(RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, iteration, term, example_ids):
        self.iteration = iteration
        self.term = term
        self.example_ids = list(example_ids)
        super().__init__(
            f"non-finite {term} loss at iteration {iteration} "
            f"(examples {self.example_ids[:8]}{'...' if len(self.example_ids) > 8 else ''})"
        )


class AggregationError(ValueError):
    """Mission results cannot be aggregated (mismatched step counts)."""


class MissionError(RuntimeError):
    """A mission aborted; carries the failing step index."""

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"mission aborted at step {step}: {cause}")
