from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


# --- LOSS ---
class LossReport(BaseModel):
    data_loss: float = Field(..., ge=0, description="Mean CCE over the batch")
    reg_loss: float = Field(..., ge=0, description="(lambda / 2m) * sum ||W||^2")
    total: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_total(self):
        if abs(self.total - (self.data_loss + self.reg_loss)) > 1e-9 * max(1.0, abs(self.total)):
            raise ValueError("total must equal data_loss + reg_loss.")
        return self


# --- TRAINING CURVES ---
class CurveRow(BaseModel):
    epoch: int = Field(..., ge=1)
    lr: float = Field(..., gt=0)
    train_loss: float
    train_accuracy: float = Field(..., ge=0, le=1)
    val_loss: float
    val_accuracy: float = Field(..., ge=0, le=1)
    wall_seconds: float = Field(0.0, ge=0, description="Written to timings.csv, not curves.csv")


# --- DATASET ---
class IndexEntry(BaseModel):
    path: str
    class_id: int = Field(..., ge=0)
    split: Optional[Literal["train", "val"]] = None


# --- METRICS ---
class ClassMetrics(BaseModel):
    class_id: int
    class_name: str
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    support: int = Field(..., ge=0)
    degenerate: bool = Field(False, description="A zero denominator forced a metric to 0")


class ClassReport(BaseModel):
    classes: List[ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    accuracy: float
    total: int

    @property
    def degenerate_classes(self) -> List[str]:
        return [c.class_name for c in self.classes if c.degenerate]


# --- PREDICTION ---
class RankedClass(BaseModel):
    rank: int = Field(..., ge=1)
    class_id: int
    class_name: str
    probability: float = Field(..., ge=0, le=1)
