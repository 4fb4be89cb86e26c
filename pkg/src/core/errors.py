from typing import Optional, Sequence


class ShapeError(ValueError):
    """Raised when sizes, shapes, axes or subscripts are inconsistent."""


class ContractionError(ShapeError):
    def __init__(self, shape_a: Sequence[int], shape_b: Sequence[int], axes_a: Sequence[int], axes_b: Sequence[int], detail: str = ""):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        self.axes_a = tuple(axes_a)
        self.axes_b = tuple(axes_b)
        msg = f"cannot contract {list(self.shape_a)} axes {list(self.axes_a)} with {list(self.shape_b)} axes {list(self.axes_b)}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class RankMismatchError(ShapeError):
    """Adjacent (or wrap-around) core ranks disagree."""


class FormatError(ValueError):
    """Malformed serialized format file."""


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)


class FitDivergenceError(ArithmeticError):
    def __init__(self, model: str, epoch: int, loss: float):
        self.model = model
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"{model} fit diverged at epoch {epoch} (loss={loss})")


class SweepError(ValueError):
    """Sweep values unusable for slope fitting."""
