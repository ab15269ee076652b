"""Ablation suites: train and evaluate every configuration of a suite under shared seeds, one CSV row per run."""

import csv
import logging
from dataclasses import replace
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from ..config import FusionVariant, MMFAVariant, Modality, ModelConfig, TrainConfig, modality_label
from ..errors import ConfigError
from ..utils.dataset import DatasetTable, Split
from .trainer import Trainer, evaluate_table

logger = logging.getLogger(__name__)

SUITES = ("modality", "fusion", "mmfa")
PANEL_COLUMNS = ("auc", "auc_sens80", "average_precision", "accuracy", "sensitivity", "specificity", "dice",
                 "ppv", "npv")


def modality_subsets() -> List[Tuple[Modality, ...]]:
    """The seven non-empty subsets of {C, D, M}, smallest first"""
    modalities = tuple(Modality)
    subsets = []
    for size in range(1, len(modalities) + 1):
        subsets.extend(combinations(modalities, size))
    return subsets


def suite_configs(suite: str, base: ModelConfig) -> List[Tuple[str, ModelConfig]]:
    """(row label, model configuration) for every member of a suite"""
    if suite == "modality":
        return [(modality_label(mods), replace(base, modalities=mods)) for mods in modality_subsets()]
    if suite == "fusion":
        full = tuple(Modality)
        return [(variant.value, replace(base, fusion_variant=variant, modalities=full)) for variant in FusionVariant]
    if suite == "mmfa":
        return [(variant.value, replace(base, mmfa_variant=variant, fusion_variant=FusionVariant.JI_ADF))
                for variant in MMFAVariant]
    raise ConfigError(f"unknown ablation suite '{suite}' (expected one of {', '.join(SUITES)})")


def evaluation_split(table: DatasetTable) -> Split:
    if table.indices(Split.TEST).size:
        return Split.TEST
    logger.warning("Dataset has no test split; ablation rows report the validation split")
    return Split.VAL


def run_suite(suite: str, table: DatasetTable, base_model: ModelConfig, train_config: TrainConfig,
              seeds: Sequence[int]) -> List[Dict[str, Any]]:
    """
    Train every configuration of `suite` once per seed.

    Within a seed, every configuration shares the model-initialization seed
    and the batch-order seed.
    """
    split = evaluation_split(table)
    rows = []
    for seed in seeds:
        for label, model_config in suite_configs(suite, base_model):
            model_config = replace(model_config, seed=seed)
            run_train = replace(train_config, seed=seed)
            run_name = f"{suite}:{label}:seed{seed}"
            logger.info(f"Ablation run {run_name}")
            result = Trainer(table, model_config, run_train, run_name=run_name).fit()
            report = evaluate_table(result.best_store, model_config, table, split)
            row = {
                "suite": suite,
                "config": label,
                "seed": seed,
                "split": split.value,
                "epochs": run_train.epochs,
                "best_epoch": result.best_epoch,
                "best_val_macro_f1": result.best_val_macro_f1,
            }
            for key in PANEL_COLUMNS:
                row[f"macro_{key}"] = report.macro.get(key)
            row.update({
                "overall_accuracy": report.overall_accuracy,
                "macro_f1": report.macro_f1,
                "ece": report.ece,
                "wall_clock_seconds": result.wall_clock_seconds,
            })
            rows.append(row)
    return rows


def summarize(rows: Sequence[Dict[str, Any]], metric: str = "macro_auc") -> Dict[str, float]:
    """Mean of one column per configuration, in first-seen order"""
    grouped: Dict[str, List[float]] = {}
    for row in rows:
        value = row.get(metric)
        if value is not None:
            grouped.setdefault(row["config"], []).append(float(value))
    return {config: float(np.mean(values)) for config, values in grouped.items()}


def write_rows(rows: Sequence[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ConfigError("no ablation rows to write")
    keys = list(rows[0].keys())
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in keys})
    return path
