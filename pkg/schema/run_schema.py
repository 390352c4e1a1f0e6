from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Dense hidden-layer kernels (1024/512/256/128); the 84-way output layer is not penalized
DEFAULT_REGULARIZED = ["dense1.kernel", "dense2.kernel", "dense3.kernel", "dense4.kernel"]


def format_rate(value: float) -> str:
    """0.00004 rather than 4e-05."""
    return np.format_float_positional(float(value), trim="-")


# --- 1. LEARNING RATE SCHEDULE ---
class LrSchedule(BaseModel):
    phases: List[Tuple[int, float]] = Field(
        default_factory=lambda: [(5, 1e-3), (3, 1e-4), (3, 4e-5)],
        description="Ordered (epoch-count, learning-rate) pairs",
    )

    @field_validator("phases")
    @classmethod
    def _check_phases(cls, phases):
        if not phases:
            raise ValueError("Schedule needs at least one phase.")
        for count, rate in phases:
            if count < 1:
                raise ValueError(f"Phase epoch count must be >= 1, got {count}.")
            if not rate > 0:
                raise ValueError(f"Learning rates must be > 0, got {rate}.")
        return phases

    @property
    def total_epochs(self) -> int:
        return sum(count for count, _ in self.phases)

    @classmethod
    def parse(cls, text: str) -> "LrSchedule":
        """Parses '5x0.001,3x0.0001,3x0.00004'."""
        phases = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                count, rate = chunk.lower().split("x", 1)
                phases.append((int(count), float(rate)))
            except ValueError:
                raise ValueError(f"Bad schedule phase '{chunk}'. Expected '<epochs>x<rate>'.")
        return cls(phases=phases)

    def __str__(self) -> str:
        return ",".join(f"{count}x{format_rate(rate)}" for count, rate in self.phases)


# --- 2. LOSS ---
class LossConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(1e-3, ge=0, alias="lambda", description="L2 strength")
    regularized_param_names: List[str] = Field(default_factory=lambda: list(DEFAULT_REGULARIZED))


# --- 3. ARCHITECTURE ---
class ArchitectureSpec(BaseModel):
    """Widths of the AKHCRNet graph. Defaults reproduce the published network."""
    input_size: int = Field(32, ge=4)
    stem_filters: int = Field(32, ge=1)
    stem_kernel: int = 5
    use_inception: bool = True
    # (3x3 branch, 5x5 branch, 1x1 branch, pool-projection branch); reduce width = first three
    inception_widths: Tuple[int, int, int, int] = (128, 128, 128, 64)
    rear_filters: List[int] = Field(default_factory=lambda: [256, 512])
    dense_widths: List[int] = Field(default_factory=lambda: [1024, 512, 256, 128])
    dropout_after: int = Field(2, ge=0, description="1-based dense layer followed by dropout; 0 disables")
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    n_classes: int = Field(84, ge=1)
    logit_init_gain: float = Field(0.01, gt=0, description="Scales the He draw of the output-layer kernel")

    @model_validator(mode="after")
    def _check_reduction(self):
        size = self.input_size // 2
        for _ in self.rear_filters:
            size = size // 2 // 2
        if size < 1:
            raise ValueError(f"Input size {self.input_size} is too small for "
                             f"{len(self.rear_filters)} rear blocks.")
        if self.dropout_after > len(self.dense_widths):
            raise ValueError("dropout_after points past the dense head.")
        return self

    @property
    def inception_channels(self) -> int:
        return sum(self.inception_widths)

    @classmethod
    def reduced_clone(cls, n_classes: int = 5) -> "ArchitectureSpec":
        """8x8 input, 4/8/8 channels, one rear block, two dense layers."""
        return cls(input_size=8, stem_filters=4, stem_kernel=3, inception_widths=(8, 8, 8, 4),
                   rear_filters=[8], dense_widths=[16, 8], dropout_after=2, n_classes=n_classes)


# --- 4. RUN CONFIG ---
class RunConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    data_root: Optional[Path] = None
    out_dir: Path = Path("runs/default")
    index_path: Optional[Path] = None
    seed: int = 0
    batch_size: int = Field(64, ge=1)
    lr_schedule: LrSchedule = Field(default_factory=LrSchedule)
    lam: float = Field(1e-3, ge=0, alias="lambda")
    val_fraction: float = Field(0.28, gt=0, lt=1)
    blank_threshold: float = Field(0.02, gt=0, lt=1)
    prefetch_depth: int = Field(4, ge=1)
    workers: int = Field(1, ge=1)
    use_inception: bool = True

    @field_validator("lr_schedule", mode="before")
    @classmethod
    def _parse_schedule(cls, value):
        if isinstance(value, str):
            return LrSchedule.parse(value)
        return value

    @property
    def epochs(self) -> int:
        return self.lr_schedule.total_epochs

    def loss_config(self, spec: Optional[ArchitectureSpec] = None) -> LossConfig:
        """L2 on every hidden dense kernel of `spec` (the run's architecture by default)."""
        spec = spec or self.architecture()
        names = [f"dense{k}.kernel" for k in range(1, len(spec.dense_widths) + 1)]
        return LossConfig(lam=self.lam, regularized_param_names=names)

    def architecture(self) -> ArchitectureSpec:
        return ArchitectureSpec(use_inception=self.use_inception)

    def as_text_items(self) -> List[Tuple[str, str]]:
        """Sorted (key, value) pairs for run_config.txt."""
        items = {
            "batch_size": str(self.batch_size),
            "blank_threshold": format_rate(self.blank_threshold),
            "data_root": str(self.data_root) if self.data_root else "",
            "dropout_rate": "0.5",
            "epochs": str(self.epochs),
            "index_path": str(self.index_path) if self.index_path else "",
            "lambda": format_rate(self.lam),
            "lr_schedule": str(self.lr_schedule),
            "out_dir": str(self.out_dir),
            "prefetch_depth": str(self.prefetch_depth),
            "seed": str(self.seed),
            "use_inception": "true" if self.use_inception else "false",
            "val_fraction": format_rate(self.val_fraction),
            "workers": str(self.workers),
        }
        return sorted(items.items())
