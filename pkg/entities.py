import enum
import math

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

import config
from config import parse_norm_order

try:
    StrEnumBase = enum.StrEnum  # py3.11+
except AttributeError:
    class StrEnumBase(str, enum.Enum):
        pass


def conjugate_exponent(r: float) -> float:
    if math.isinf(r):
        return 1.0
    if r == 1.0:
        return math.inf
    return r / (r - 1.0)


class InitMode(StrEnumBase):
    uniform_signs = "seeded-uniform-signs"
    uniform = "seeded-uniform-continuous"
    user = "user-supplied"


class HolderPair(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="strings")

    p: float = config.DEFAULT_P
    q: float = config.DEFAULT_Q

    @field_validator("p", "q", mode="before")
    @classmethod
    def parse_inf_token(cls, value):
        return parse_norm_order(value)

    @model_validator(mode="after")
    def check_range(self) -> "HolderPair":
        if not (self.p > 1.0):
            raise ValueError(f"p must lie in (1, inf], got {self.p}")
        if not (1.0 <= self.q < math.inf):
            raise ValueError(f"q must lie in [1, inf), got {self.q}; use a large finite q instead of inf")
        return self

    @computed_field
    @property
    def p_conj(self) -> float:
        return conjugate_exponent(self.p)

    @computed_field
    @property
    def q_conj(self) -> float:
        return conjugate_exponent(self.q)

    def label(self) -> str:
        p = "inf" if math.isinf(self.p) else f"{self.p:g}"
        return f"({p},{self.q:g})"


class PowerSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(default=config.POWER_MAX_ITERS, ge=1)
    rel_tol: float = Field(default=config.POWER_REL_TOL, gt=0)
    seed: int = 0
    init: InitMode = InitMode.uniform


class PerturbSpec(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="strings")

    tap: str = config.DEFAULT_TAP
    pair: HolderPair = Field(default_factory=HolderPair)
    norm_budget: float = Field(default=config.DEFAULT_NORM_BUDGET, gt=0)
    batch_size: int = Field(default=config.DEFAULT_BATCH_SIZE, ge=1)
    batch_seed: int = 0
    power: PowerSettings = Field(default_factory=PowerSettings)


class PerturbationMeta(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    kind: str = "universal"
    singular_value: float | None = None
    tap: str | None = None
    image_ids: list[int] = Field(default_factory=list)
    pair: HolderPair | None = None
    iterations: int = 0
    converged: bool = False
    seed: int | None = None
    provenance: dict | None = None


class TrainSettings(BaseModel):
    epochs: int = Field(default=config.TRAIN_EPOCHS, ge=0)
    batch_size: int = Field(default=config.TRAIN_BATCH_SIZE, ge=1)
    learning_rate: float = Field(default=config.TRAIN_LEARNING_RATE, ge=0)
    momentum: float = Field(default=config.TRAIN_MOMENTUM, ge=0, lt=1)
    seed: int = 0
    input_scale: float = Field(default=config.TRAIN_INPUT_SCALE, gt=0)


class TrainReport(BaseModel):
    settings: TrainSettings
    epoch_losses: list[float] = Field(default_factory=list)
    train_accuracy: float | None = None
    test_accuracy: float | None = None
    version: str = config.VERSION


class FoolingReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    dataset_size: int = Field(ge=0)
    fooled_count: int = Field(ge=0)
    fooling_rate: float = Field(ge=0, le=1)
    norm: float
    p: float
    perturbation: PerturbationMeta | None = None
    per_class_fooled: dict[int, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def rate_matches_count(self) -> "FoolingReport":
        expected = self.fooled_count / self.dataset_size if self.dataset_size else 0.0
        if self.fooling_rate != expected:
            raise ValueError(f"fooling_rate {self.fooling_rate} != {self.fooled_count}/{self.dataset_size}")
        return self


class SweepPoint(BaseModel):
    value: float
    fooling_rate: float | None = None
    singular_value: float | None = None
    iterations: int = 0
    converged: bool = False
    image_ids: list[int] = Field(default_factory=list)
    error: str | None = None


class SweepReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    parameter: str
    points: list[SweepPoint] = Field(default_factory=list)
    base: PerturbSpec

    @model_validator(mode="after")
    def strictly_increasing(self) -> "SweepReport":
        values = [point.value for point in self.points]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"sweep values must be strictly increasing, got {values}")
        return self


class ProfileEntry(BaseModel):
    tap: str
    singular_value: float | None = None
    iterations: int = 0
    converged: bool = False
    error: str | None = None


class TapRow(BaseModel):
    tap: str
    singular_value: float | None = None
    fooling_rate: float | None = None
    error: str | None = None


class TopKRow(BaseModel):
    norm: float
    classes: list[int]
    probabilities: list[float]
    total: float


class TopKCurve(BaseModel):
    image_id: int
    k: int
    rows: list[TopKRow] = Field(default_factory=list)


class PredictionFlip(BaseModel):
    image_id: int
    clean_class: int
    clean_probability: float
    adversarial_class: int
    adversarial_probability: float

    @computed_field
    @property
    def fooled(self) -> bool:
        return self.clean_class != self.adversarial_class


class TransferMatrix(BaseModel):
    models: list[str]
    perturbations: list[str]
    rates: list[list[float | None]]


class RunConfig(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    command: str
    model: str | None = None
    models: list[str] = Field(default_factory=list)
    data: str | None = None
    out: str | None = None
    out_dir: str = "runs"

    tap: str = config.DEFAULT_TAP
    taps: list[str] = Field(default_factory=list)
    p: float = config.DEFAULT_P
    q: float = config.DEFAULT_Q
    norm_budget: float = config.DEFAULT_NORM_BUDGET
    batch_size: int = config.DEFAULT_BATCH_SIZE
    batch_seed: int = 0
    power_seed: int = 0
    max_iters: int = config.POWER_MAX_ITERS
    rel_tol: float = config.POWER_REL_TOL
    init: InitMode = InitMode.uniform
    image_id: int | None = None

    train_seed: int = 0
    epochs: int = config.TRAIN_EPOCHS
    train_batch_size: int = config.TRAIN_BATCH_SIZE
    learning_rate: float = config.TRAIN_LEARNING_RATE
    momentum: float = config.TRAIN_MOMENTUM

    perturbation: str | None = None
    perturbations: list[str] = Field(default_factory=list)
    baseline_seeds: int = 0
    topk_image: int | None = None
    norms: list[float] = Field(default_factory=list)
    top_k: int = 5
    show_images: list[int] = Field(default_factory=list)

    sweep: str | None = None
    values: list[float] = Field(default_factory=list)
    with_fooling: bool = False

    mode: str = "pgm"
    transform: str = "minmax"

    # execution resource, not a result-affecting parameter
    workers: int | None = Field(default=None, exclude=True)
    version: str = config.VERSION

    @field_validator("p", "q", mode="before")
    @classmethod
    def parse_inf_token(cls, value):
        return parse_norm_order(value)

    def holder_pair(self) -> HolderPair:
        return HolderPair(p=self.p, q=self.q)

    def power_settings(self) -> PowerSettings:
        return PowerSettings(max_iters=self.max_iters, rel_tol=self.rel_tol, seed=self.power_seed, init=self.init)

    def perturb_spec(self) -> PerturbSpec:
        return PerturbSpec(
            tap=self.tap,
            pair=self.holder_pair(),
            norm_budget=self.norm_budget,
            batch_size=self.batch_size,
            batch_seed=self.batch_seed,
            power=self.power_settings(),
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs,
            batch_size=self.train_batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.train_seed,
        )
