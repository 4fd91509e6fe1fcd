"""Exception types shared across the pipeline (torch-free import)."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class CheckpointMismatchError(RuntimeError):
    """Checkpoint contents disagree with the model or dataset configuration."""
