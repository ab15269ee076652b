"""
Checkpoint persistence.

A checkpoint is a directory holding `manifest.json` (format version, model
configuration, ordered parameter names and shapes, optimizer and scheduler
state, training history) and `params.bin`, the little-endian float64 values
of every parameter in manifest order followed by the optimizer's first and
second moments in the same order. Saves go to a temporary directory that is
swapped into place. A save interrupted between its two renames leaves the
previous checkpoint under a hidden `.<name>.old-<pid>` sibling, which
`load_checkpoint` falls back to.
"""

import json
import logging
import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from ..autodiff import ParamStore
from ..config import ModelConfig
from ..errors import CheckpointError, ConfigError
from ..models.ji_adf import init_params
from ..optim import AdamWState, PlateauState
from ..reports import CHECKPOINT_FORMAT_VERSION, CheckpointManifest, EpochRecord, OptimizerManifest, TensorEntry

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
BLOB_FILE = "params.bin"
BLOB_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    manifest: CheckpointManifest
    config: ModelConfig
    store: ParamStore
    optimizer: Optional[AdamWState] = None
    plateau: Optional[PlateauState] = None

    @property
    def history(self) -> List[EpochRecord]:
        return self.manifest.history


def _blob(store: ParamStore, optimizer: Optional[AdamWState]) -> bytes:
    names = store.names()
    parts = [store.value(name).ravel() for name in names]
    if optimizer is not None:
        parts += [optimizer.m[name].ravel() for name in names]
        parts += [optimizer.v[name].ravel() for name in names]
    if not parts:
        return b""
    return np.concatenate(parts).astype(BLOB_DTYPE).tobytes()


def save_checkpoint(path: Union[str, Path], store: ParamStore, config: ModelConfig,
                    optimizer: Optional[AdamWState] = None, plateau: Optional[PlateauState] = None,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a checkpoint directory atomically.

    `meta` may carry epoch, best_val_macro_f1, best_epoch, history,
    class_names and train (the training settings needed to resume).
    """
    path = Path(path)
    meta = dict(meta or {})
    manifest = CheckpointManifest(
        format_version=CHECKPOINT_FORMAT_VERSION,
        model=config.to_dict(),
        params=[TensorEntry(name=name, shape=list(store.value(name).shape)) for name in store.names()],
        optimizer=None if optimizer is None else OptimizerManifest(**optimizer.hyperparameters()),
        plateau=None if plateau is None else plateau.to_dict(),
        **meta,
    )

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp-{os.getpid()}"
    old = path.parent / f".{path.name}.old-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    if old.exists():
        shutil.rmtree(old)
    tmp.mkdir()
    with open(tmp / BLOB_FILE, "wb") as f:
        f.write(_blob(store, optimizer))
        f.flush()
        os.fsync(f.fileno())
    with open(tmp / MANIFEST_FILE, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))

    if path.exists():
        os.replace(path, old)
    os.replace(tmp, path)
    for leftover in _previous_versions(path):
        shutil.rmtree(leftover, ignore_errors=True)
    logger.debug(f"Saved checkpoint to {path} (epoch {manifest.epoch})")
    return path


def _previous_versions(path: Path) -> List[Path]:
    """Copies moved aside by interrupted saves, newest first"""
    if not path.parent.is_dir():
        return []
    found = [p for p in path.parent.glob(f".{path.name}.old-*") if (p / MANIFEST_FILE).exists()]
    return sorted(found, key=lambda p: p.stat().st_mtime, reverse=True)


def _resolve(path: Path) -> Path:
    """The checkpoint directory itself, or the copy left behind by a save that stopped between its two renames"""
    if (path / MANIFEST_FILE).exists():
        return path
    previous = _previous_versions(path)
    if previous and not path.exists():
        logger.warning(f"{path} missing after an interrupted save; loading {previous[0].name}")
        return previous[0]
    return path


def _read_manifest(path: Path) -> CheckpointManifest:
    manifest_path = path / MANIFEST_FILE
    if not manifest_path.exists():
        raise CheckpointError(f"{path} is not a checkpoint: {MANIFEST_FILE} missing")
    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"corrupt manifest in {path}: {e}")
    version = raw.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    try:
        return CheckpointManifest.model_validate(raw)
    except ValidationError as e:
        raise CheckpointError(f"invalid manifest in {path}: {e}")


def check_compatible(manifest: CheckpointManifest, config: ModelConfig) -> None:
    """Raise CheckpointError naming the first parameter whose shape differs under `config`"""
    try:
        expected = init_params(config, 0).shapes()
    except ConfigError as e:
        raise CheckpointError(f"cannot compare checkpoint with an invalid configuration: {e}")
    stored = {entry.name: tuple(entry.shape) for entry in manifest.params}
    for name, shape in expected.items():
        if name not in stored:
            raise CheckpointError(f"parameter {name} is missing from the checkpoint")
        if stored[name] != shape:
            raise CheckpointError(f"width mismatch for parameter {name}: checkpoint {stored[name]}, config {shape}")
    extra = sorted(set(stored) - set(expected))
    if extra:
        raise CheckpointError(f"checkpoint has parameters the configuration does not: {extra[0]}")


def load_checkpoint(path: Union[str, Path], config: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint; with `config`, also verify every parameter shape against it"""
    path = Path(path)
    path = _resolve(path)
    manifest = _read_manifest(path)
    stored_config = ModelConfig.from_dict(manifest.model)
    if config is not None:
        check_compatible(manifest, config)

    blob_path = path / BLOB_FILE
    if not blob_path.exists():
        raise CheckpointError(f"{BLOB_FILE} missing from {path}")
    data = blob_path.read_bytes()
    expected_bytes = BLOB_DTYPE.itemsize * manifest.blob_elements()
    if len(data) != expected_bytes:
        kind = "truncated" if len(data) < expected_bytes else "oversized"
        raise CheckpointError(f"{kind} parameter blob: {len(data)} bytes, manifest requires {expected_bytes}")
    values = np.frombuffer(data, dtype=BLOB_DTYPE).astype(np.float64)

    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape)) if shape else 1
        chunk = values[offset:offset + size].reshape(shape).copy()
        offset += size
        return chunk

    store = ParamStore()
    for entry in manifest.params:
        store.add(entry.name, take(tuple(entry.shape)))

    optimizer = None
    if manifest.optimizer is not None:
        hyper = manifest.optimizer.model_dump(exclude={"moments"})
        optimizer = AdamWState(**hyper)
        for entry in manifest.params:
            optimizer.m[entry.name] = take(tuple(entry.shape))
        for entry in manifest.params:
            optimizer.v[entry.name] = take(tuple(entry.shape))

    plateau = PlateauState.from_dict(manifest.plateau) if manifest.plateau else None
    return Checkpoint(manifest=manifest, config=stored_config, store=store, optimizer=optimizer, plateau=plateau)
