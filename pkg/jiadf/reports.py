"""Pydantic documents written by the command-line tools: metric reports, run reports and checkpoint manifests."""

from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .metrics import MetricsReport

CHECKPOINT_FORMAT_VERSION = 1


class ReliabilityBinModel(BaseModel):
    lower: float
    upper: float
    count: int = Field(..., ge=0)
    confidence: float = Field(..., ge=0.0, le=1.0)
    accuracy: float = Field(..., ge=0.0, le=1.0)


class PosteriorRow(BaseModel):
    id: str
    label: int
    prediction: int
    posterior: List[float]


class MetricsDocument(BaseModel):
    """Per-class metric panel with macro means, calibration and headline summaries"""
    split: str = "test"
    n_samples: int = Field(..., ge=1)
    class_names: List[str]
    panel: Dict[str, Dict[str, Optional[float]]] = Field(
        ..., description="Row name -> {'Mean' and each class name -> value in [0, 1]}"
    )
    auc_sens80_raw: Dict[str, Optional[float]] = Field(
        default_factory=dict, description="Band area over TPR in [0.8, 1] divided by 0.2, per class and 'Mean'"
    )
    overall_accuracy: float = Field(..., ge=0.0, le=1.0)
    macro_f1: float = Field(..., ge=0.0, le=1.0)
    macro_ppv: float = Field(..., ge=0.0, le=1.0)
    macro_ap: Optional[float] = Field(None, ge=0.0, le=1.0)
    ece: float = Field(..., ge=0.0, le=1.0)
    reliability: List[ReliabilityBinModel]
    degenerate: Dict[str, List[str]] = Field(default_factory=dict)
    undefined: Dict[str, List[str]] = Field(default_factory=dict)
    posteriors: Optional[List[PosteriorRow]] = None

    @field_validator("panel")
    @classmethod
    def values_in_unit_interval(cls, panel):
        for row, cells in panel.items():
            for column, value in cells.items():
                if value is not None and not 0.0 <= value <= 1.0:
                    raise ValueError(f"{row}/{column} = {value} lies outside [0, 1]")
        return panel


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_macro_f1: float
    lr: float


class RunReport(BaseModel):
    """Everything one training run produced"""
    app_version: str
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    seed: int
    data: Optional[str] = None
    config: Dict[str, Any]
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_macro_f1: Optional[float] = None
    final_metrics: Optional[MetricsDocument] = None
    wall_clock_seconds: float = Field(0.0, ge=0.0)


class TensorEntry(BaseModel):
    name: str
    shape: List[int]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class OptimizerManifest(BaseModel):
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    t: int = 0
    # First and second moments follow the parameters in the blob, in parameter order
    moments: List[str] = Field(default_factory=lambda: ["m", "v"])


class CheckpointManifest(BaseModel):
    format_version: int = CHECKPOINT_FORMAT_VERSION
    model: Dict[str, Any]
    params: List[TensorEntry]
    optimizer: Optional[OptimizerManifest] = None
    plateau: Optional[Dict[str, Any]] = None
    train: Dict[str, Any] = Field(default_factory=dict)
    class_names: List[str] = Field(default_factory=list)
    epoch: int = 0
    best_val_macro_f1: Optional[float] = None
    best_epoch: Optional[int] = None
    history: List[EpochRecord] = Field(default_factory=list)

    def blob_elements(self) -> int:
        count = sum(entry.size for entry in self.params)
        if self.optimizer is not None:
            count *= 1 + len(self.optimizer.moments)
        return count


def metrics_document(report: MetricsReport, split: str = "test",
                     posteriors: Optional[List[PosteriorRow]] = None) -> MetricsDocument:
    raw = {"Mean": report.macro.get("auc_sens80_raw")}
    raw.update(zip(report.class_names, report.per_class.get("auc_sens80_raw", [])))
    return MetricsDocument(
        split=split,
        n_samples=report.n_samples,
        class_names=report.class_names,
        panel=report.panel(),
        auc_sens80_raw=raw,
        overall_accuracy=report.overall_accuracy,
        macro_f1=report.macro_f1,
        macro_ppv=report.macro_ppv,
        macro_ap=report.macro_ap,
        ece=report.ece,
        reliability=[ReliabilityBinModel(**vars(b)) for b in report.reliability],
        degenerate=report.degenerate,
        undefined=report.undefined,
        posteriors=posteriors,
    )


def run_report_schema() -> Dict[str, Any]:
    return RunReport.model_json_schema()
