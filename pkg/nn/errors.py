from typing import Optional


class SloraError(Exception):
    """Base class for every failure the toolkit reports on purpose."""


class ShapeError(SloraError, ValueError):
    """Operands with incompatible shapes."""


class ConvergenceError(SloraError, ArithmeticError):
    """An iterative routine hit its iteration cap."""


class DivergenceError(SloraError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class NondeterminismError(SloraError):
    """A closure returned different values for identical inputs."""


class CheckpointError(SloraError, OSError):
    """Unreadable or inconsistent checkpoint / dataset directory."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
