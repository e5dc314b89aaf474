from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from linalg.power import PowerReport


class DataFormatError(ValueError):
    """Bad magic number, truncated payload or inconsistent header in a binary file."""


class UnknownTapError(KeyError):
    def __init__(self, name: str, available: list[str]) -> None:
        self.name = name
        self.available = available
        super().__init__(f"unknown tap {name!r}, available taps: {', '.join(available)}")

    def __str__(self) -> str:
        return self.args[0]


class NumericalFailure(RuntimeError):
    pass


class PerturbationBuildError(NumericalFailure):
    def __init__(self, message: str, report: PowerReport | None = None) -> None:
        self.report = report
        super().__init__(message)


class TrainingDivergedError(NumericalFailure):
    def __init__(self, epoch: int, step: int, loss: float) -> None:
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} step {step}: loss={loss}")
