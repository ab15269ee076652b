"""
Training loop with validation-driven checkpointing.

Per epoch: seeded shuffled batches -> batch_loss -> backward -> AdamW step;
then validation macro-F1 drives the plateau scheduler and best-checkpoint
selection (strict improvement only).
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import __version__
from ..autodiff import Graph, ParamStore, backward
from ..config import ModelConfig, TrainConfig
from ..errors import DataFormatError, DegenerateProbabilityError, NonFiniteError, NumericalFailure
from ..logging_config import log_epoch, log_performance
from ..metrics import MetricsReport, PredictionSet, evaluate_predictions, macro_f1
from ..models.ji_adf import batch_loss, init_params, predict_proba
from ..optim import AdamWState, PlateauState, adamw_step, plateau_update
from ..reports import EpochRecord, PosteriorRow, RunReport, metrics_document
from ..utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..utils.dataset import DatasetTable, Split, batch_iter

logger = logging.getLogger(__name__)

BEST_DIR = "best"
LAST_DIR = "last"
PREDICT_CHUNK = 512


@dataclass
class TrainResult:
    store: ParamStore
    best_store: ParamStore
    config: ModelConfig
    optimizer: AdamWState
    plateau: PlateauState
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_macro_f1: Optional[float] = None
    wall_clock_seconds: float = 0.0

    @property
    def losses(self) -> List[float]:
        return [record.train_loss for record in self.history]


def predict_table(store: ParamStore, config: ModelConfig, table: DatasetTable,
                  split: Union[str, Split, None] = None) -> Tuple[PredictionSet, List[str]]:
    """Posteriors for every record of a split, in table order"""
    indices = table.indices(split)
    if indices.size == 0:
        raise DataFormatError(f"split '{split}' has no records")
    parts = []
    for start in range(0, indices.size, PREDICT_CHUNK):
        parts.append(predict_proba(store, table.batch(indices[start:start + PREDICT_CHUNK]), config))
    ids = [table.ids[i] for i in indices]
    return PredictionSet(y_true=table.labels[indices], posteriors=np.vstack(parts)), ids


def evaluate_table(store: ParamStore, config: ModelConfig, table: DatasetTable,
                   split: Union[str, Split, None] = None) -> MetricsReport:
    preds, _ = predict_table(store, config, table, split)
    return evaluate_predictions(preds, table.class_names)


def posterior_rows(preds: PredictionSet, ids: Sequence[str]) -> List[PosteriorRow]:
    return [
        PosteriorRow(id=ids[i], label=int(preds.y_true[i]), prediction=int(preds.y_pred[i]),
                     posterior=preds.posteriors[i].tolist())
        for i in range(len(preds))
    ]


class Trainer:
    """Runs one configuration on a table that carries train and val splits"""

    def __init__(self, table: DatasetTable, model_config: ModelConfig, train_config: TrainConfig,
                 out_dir: Optional[Union[str, Path]] = None, run_name: Optional[str] = None):
        self.table = table
        self.model_config = model_config
        self.train_config = train_config
        self.out_dir = Path(out_dir) if out_dir else None
        self.run_name = run_name
        if table.indices(Split.TRAIN).size == 0:
            raise DataFormatError("training split is empty")
        if table.indices(Split.VAL).size == 0:
            raise DataFormatError("validation split is empty")

    def _fresh_state(self) -> Tuple[ParamStore, AdamWState, PlateauState]:
        tc = self.train_config
        store = init_params(self.model_config)
        optimizer = AdamWState.for_store(store, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps,
                                         weight_decay=tc.weight_decay)
        plateau = PlateauState(lr=tc.lr, factor=tc.plateau_factor, patience=tc.plateau_patience,
                               min_lr=tc.min_lr)
        return store, optimizer, plateau

    def _meta(self, epoch: int, history: List[EpochRecord], best_epoch, best_f1) -> dict:
        return {
            "epoch": epoch,
            "history": history,
            "best_epoch": best_epoch,
            "best_val_macro_f1": best_f1,
            "class_names": list(self.table.class_names),
            "train": vars(self.train_config).copy(),
        }

    def _save(self, name: str, store: ParamStore, optimizer: AdamWState, plateau: PlateauState, meta: dict):
        if self.out_dir is not None:
            save_checkpoint(self.out_dir / name, store, self.model_config, optimizer, plateau, meta)

    def _train_epoch(self, store: ParamStore, optimizer: AdamWState, epoch: int) -> float:
        total, count = 0.0, 0
        batches = batch_iter(self.table, self.train_config.batch_size, self.train_config.seed, epoch, Split.TRAIN)
        for index, batch in enumerate(batches):
            graph = Graph()
            try:
                loss = batch_loss(store, batch, self.model_config, graph)
                backward(graph, loss, store)
                adamw_step(store, optimizer)
            except (NonFiniteError, DegenerateProbabilityError) as e:
                raise NumericalFailure(f"epoch {epoch + 1}, batch {index + 1}: {e}") from e
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalFailure(f"epoch {epoch + 1}, batch {index + 1}: loss is {value}")
            total += value * len(batch)
            count += len(batch)
        return total / count

    def fit(self, resume: Optional[Checkpoint] = None) -> TrainResult:
        started = time.perf_counter()
        history: List[EpochRecord] = []
        best_epoch, best_f1 = None, None
        start_epoch = 0

        if resume is None:
            store, optimizer, plateau = self._fresh_state()
            best_store = store.copy()
            self._save(BEST_DIR, store, optimizer, plateau, self._meta(0, history, None, None))
        else:
            store, optimizer, plateau = resume.store, resume.optimizer, resume.plateau
            if optimizer is None or plateau is None:
                raise DataFormatError("checkpoint lacks optimizer or scheduler state; cannot resume")
            history = list(resume.manifest.history)
            start_epoch = resume.manifest.epoch
            best_epoch, best_f1 = resume.manifest.best_epoch, resume.manifest.best_val_macro_f1
            best_path = self.out_dir / BEST_DIR if self.out_dir else None
            best_store = load_checkpoint(best_path).store if best_path and best_path.exists() else store.copy()
            logger.info(f"Resuming at epoch {start_epoch + 1} (best val macro-F1 {best_f1})")

        for epoch in range(start_epoch, self.train_config.epochs):
            lr_used = optimizer.lr
            train_loss = self._train_epoch(store, optimizer, epoch)
            preds, _ = predict_table(store, self.model_config, self.table, Split.VAL)
            val_f1 = macro_f1(preds)
            optimizer.lr = plateau_update(plateau, val_f1)

            record = EpochRecord(epoch=epoch + 1, train_loss=train_loss, val_macro_f1=val_f1, lr=lr_used)
            history.append(record)
            log_epoch(record.epoch, train_loss, val_f1, lr_used, self.run_name)

            if best_f1 is None or val_f1 > best_f1:
                best_f1, best_epoch = val_f1, epoch + 1
                best_store = store.copy()
                self._save(BEST_DIR, store, optimizer, plateau, self._meta(epoch + 1, history, best_epoch, best_f1))
            self._save(LAST_DIR, store, optimizer, plateau, self._meta(epoch + 1, history, best_epoch, best_f1))

        if self.train_config.epochs == 0 or start_epoch >= self.train_config.epochs:
            self._save(LAST_DIR, store, optimizer, plateau,
                       self._meta(max(start_epoch, 0), history, best_epoch, best_f1))

        elapsed = time.perf_counter() - started
        log_performance("train_wall_clock", elapsed, "s", {"run": self.run_name} if self.run_name else None)
        return TrainResult(store=store, best_store=best_store, config=self.model_config, optimizer=optimizer,
                           plateau=plateau, history=history, best_epoch=best_epoch, best_val_macro_f1=best_f1,
                           wall_clock_seconds=elapsed)


def build_run_report(result: TrainResult, table: DatasetTable, train_config: TrainConfig,
                     data_path: Optional[str] = None) -> RunReport:
    """Run summary with the validation panel of the best parameters"""
    final = evaluate_table(result.best_store, result.config, table, Split.VAL)
    return RunReport(
        app_version=__version__,
        seed=train_config.seed,
        data=data_path,
        config={"model": result.config.to_dict(), "train": vars(train_config).copy()},
        epochs=result.history,
        best_epoch=result.best_epoch,
        best_val_macro_f1=result.best_val_macro_f1,
        final_metrics=metrics_document(final, split=Split.VAL.value),
        wall_clock_seconds=result.wall_clock_seconds,
    )
