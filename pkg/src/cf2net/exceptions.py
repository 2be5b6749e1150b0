"""Custom exceptions for cf2net."""


class CF2NetError(Exception):
    """Base exception for cf2net."""


class ConfigurationError(CF2NetError):
    """Invalid or inconsistent configuration."""


class DatasetError(CF2NetError):
    """Dataset directory, sample or fold request is unusable."""


class PreparedDataMissingError(DatasetError):
    """A command needs a prepared dataset that does not exist yet.

    Attributes:
        path: The prepared-dataset directory that was looked up.
    """

    def __init__(self, path: str) -> None:
        super().__init__(
            f"No prepared dataset at {path}. Run `cf2net prepare` first "
            "(with --data-root or --synthetic)."
        )
        self.path = path


class ShapeError(CF2NetError, ValueError):
    """Tensor shape contract violated."""


class NumericalError(CF2NetError):
    """A loss or gradient became non-finite during optimization.

    Attributes:
        component: Name of the offending loss term (total, fusion, aux, edge, gradient).
        batch_ids: Sample ids of the batch being processed.
        epoch: Epoch in which the failure happened.
    """

    def __init__(
        self,
        component: str,
        batch_ids: list[str],
        epoch: int,
        batch_index: int,
    ) -> None:
        super().__init__(
            f"Non-finite {component} loss at epoch {epoch}, batch {batch_index} "
            f"(samples: {', '.join(batch_ids)})"
        )
        self.component = component
        self.batch_ids = batch_ids
        self.epoch = epoch
        self.batch_index = batch_index


class CheckpointError(CF2NetError):
    """Checkpoint is unreadable or its parameters do not match the model.

    Attributes:
        path: The checkpoint file involved.
    """

    def __init__(self, path: str, reason: str | None = None) -> None:
        message = f"Invalid checkpoint: {path}"
        if reason:
            message += f" ({reason})"
        super().__init__(message)
        self.path = path


class ConfigMismatchError(CheckpointError):
    """Checkpoint configuration disagrees with the requested inference setup."""
