"""
Synthetic trimodal datasets, CSV persistence, stratified splits and batching.

A table holds one row per sample: an id, a split tag, a class label and
three feature blocks (clinical c, dermoscopic d, metadata m).
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from ..errors import ConfigError, DataFormatError

logger = logging.getLogger(__name__)


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNSPLIT = "unsplit"


SPLITS = tuple(s.value for s in Split)
BLOCKS = ("c", "d", "m")

# Category names and training-set counts of the long-tailed skin-lesion preset
MILK10K_CLASSES = ("AKIEC", "BCC", "BEN_OTH", "BKL", "DF", "INF", "MAL_OTH", "MEL", "NV", "SCCKA", "VASC")
MILK10K_COUNTS = (242, 2017, 35, 435, 42, 40, 7, 360, 597, 379, 38)


@dataclass
class DatasetSpec:
    """Parameters of a synthetic Gaussian class-conditional dataset"""
    n_classes: int = 3
    counts: Optional[List[int]] = None
    dc: int = 32
    dd: int = 32
    dm_raw: int = 16
    snr_c: float = 3.0
    snr_d: float = 3.0
    snr_m: float = 3.0
    complementary: bool = True
    seed: int = 0
    class_names: Optional[List[str]] = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = [100] * self.n_classes
        self.counts = [int(c) for c in self.counts]
        if self.class_names is None:
            self.class_names = default_class_names(self.n_classes)
        self.class_names = [str(name) for name in self.class_names]

    def validate(self) -> None:
        errors = []
        if self.n_classes < 2:
            errors.append("n_classes must be >= 2")
        if len(self.counts) != self.n_classes:
            errors.append(f"counts: {len(self.counts)} given for {self.n_classes} classes")
        if any(c < 1 for c in self.counts):
            errors.append(f"counts: every class count must be >= 1, got {self.counts}")
        for name in ("dc", "dd", "dm_raw"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        for name in ("snr_c", "snr_d", "snr_m"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                errors.append(f"{name} must be a finite value >= 0")
        if len(self.class_names) != self.n_classes:
            errors.append(f"{len(self.class_names)} class names for {self.n_classes} classes")
        if errors:
            raise ConfigError(f"Invalid dataset spec: {'; '.join(errors)}")


def default_class_names(n_classes: int) -> List[str]:
    return [f"class_{k}" for k in range(n_classes)]


def milk10k_spec(scale: float = 1.0, **overrides) -> DatasetSpec:
    """The eleven-category long-tailed preset; counts are scaled and kept >= 1"""
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    counts = [max(1, int(round(c * scale))) for c in MILK10K_COUNTS]
    return DatasetSpec(n_classes=len(MILK10K_CLASSES), counts=counts, class_names=list(MILK10K_CLASSES),
                       **overrides)


@dataclass
class Batch:
    ids: List[str]
    y: np.ndarray
    c: np.ndarray
    d: np.ndarray
    m: np.ndarray

    def __len__(self) -> int:
        return self.y.shape[0]


@dataclass
class DatasetTable:
    """Column-oriented sample table; row i is (ids[i], splits[i], labels[i], c[i], d[i], m[i])"""
    ids: List[str]
    splits: np.ndarray
    labels: np.ndarray
    c: np.ndarray
    d: np.ndarray
    m: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.splits = np.asarray(self.splits, dtype=object)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.ids)
        for name in BLOCKS:
            block = np.asarray(getattr(self, name), dtype=np.float64)
            if block.ndim != 2 or block.shape[0] != n:
                raise DataFormatError(f"block {name} has shape {block.shape} for {n} records")
            setattr(self, name, block)
        if self.labels.shape != (n,) or self.splits.shape != (n,):
            raise DataFormatError(f"labels/splits do not match {n} records")
        if len(set(self.ids)) != n:
            raise DataFormatError("record ids are not unique")
        bad = set(self.splits.tolist()) - set(SPLITS)
        if bad:
            raise DataFormatError(f"unknown split tag(s): {sorted(bad)}")
        if not self.class_names:
            self.class_names = default_class_names(int(self.labels.max()) + 1 if n else 0)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def widths(self) -> Dict[str, int]:
        return {"c": self.c.shape[1], "d": self.d.shape[1], "m": self.m.shape[1]}

    def indices(self, split: Union[str, Split, None] = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self))
        return np.flatnonzero(self.splits == Split(split).value)

    def with_splits(self, splits: np.ndarray) -> "DatasetTable":
        return DatasetTable(ids=list(self.ids), splits=np.asarray(splits, dtype=object).copy(),
                            labels=self.labels.copy(), c=self.c.copy(), d=self.d.copy(), m=self.m.copy(),
                            class_names=list(self.class_names))

    def batch(self, indices: Optional[Sequence[int]] = None) -> Batch:
        idx = np.arange(len(self)) if indices is None else np.asarray(indices, dtype=np.int64)
        return Batch(ids=[self.ids[i] for i in idx], y=self.labels[idx], c=self.c[idx], d=self.d[idx],
                     m=self.m[idx])

    def class_counts(self, split: Union[str, Split, None] = None) -> List[int]:
        labels = self.labels[self.indices(split)]
        return np.bincount(labels, minlength=self.n_classes).tolist()


def class_means(spec: DatasetSpec, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """
    Draw one unit-Gaussian mean per class and block.

    In complementary mode each class k >= 1 copies part of class k−1: odd k
    share its metadata mean (the pair is separable only through the images),
    even k share its image means (separable only through the metadata).
    """
    means = {
        "c": rng.standard_normal((spec.n_classes, spec.dc)),
        "d": rng.standard_normal((spec.n_classes, spec.dd)),
        "m": rng.standard_normal((spec.n_classes, spec.dm_raw)),
    }
    if spec.complementary:
        for k in range(1, spec.n_classes):
            shared = ("m",) if k % 2 == 1 else ("c", "d")
            for block in shared:
                means[block][k] = means[block][k - 1]
    return means


def generate(spec: DatasetSpec) -> DatasetTable:
    """Sample block = snr·μ_k + N(0, I); deterministic given spec.seed. All records are 'unsplit'"""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec, rng)
    snr = {"c": spec.snr_c, "d": spec.snr_d, "m": spec.snr_m}
    widths = {"c": spec.dc, "d": spec.dd, "m": spec.dm_raw}

    blocks = {name: [] for name in BLOCKS}
    labels = []
    for k, count in enumerate(spec.counts):
        labels.extend([k] * count)
        for name in BLOCKS:
            noise = rng.standard_normal((count, widths[name]))
            blocks[name].append(snr[name] * means[name][k] + noise)

    n = len(labels)
    table = DatasetTable(
        ids=[f"s{i:06d}" for i in range(n)],
        splits=np.full(n, Split.UNSPLIT.value, dtype=object),
        labels=np.array(labels),
        c=np.vstack(blocks["c"]),
        d=np.vstack(blocks["d"]),
        m=np.vstack(blocks["m"]),
        class_names=list(spec.class_names),
    )
    logger.info(f"Generated {n} samples over {spec.n_classes} classes, counts={spec.counts}")
    return table


def _stratified_assign(table: DatasetTable, eligible: np.ndarray, keep_fraction: float, keep_tag: str,
                       rest_tag: str, seed: int, small_tag: str) -> np.ndarray:
    """ceil(keep_fraction·n_k) of each class's eligible rows get keep_tag, the rest rest_tag"""
    splits = table.splits.copy()
    rng = np.random.default_rng(seed)
    for k in range(table.n_classes):
        members = eligible[table.labels[eligible] == k]
        if members.size == 0:
            continue
        if members.size < 2:
            logger.warning(f"Class {table.class_names[k]} has {members.size} sample(s); kept as '{small_tag}'")
            splits[members] = small_tag
            continue
        order = rng.permutation(members)
        n_keep = math.ceil(round(keep_fraction * members.size, 9))
        splits[order[:n_keep]] = keep_tag
        splits[order[n_keep:]] = rest_tag
    return splits


def split_train_val(table: DatasetTable, fraction: float = 0.8, seed: int = 0) -> DatasetTable:
    """
    Stratified train/val tagging of every record not tagged 'test'.

    Each class keeps ceil(fraction·n_k) records for training; a class with
    fewer than two records goes to training entirely.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {fraction}")
    eligible = np.flatnonzero(table.splits != Split.TEST.value)
    splits = _stratified_assign(table, eligible, fraction, Split.TRAIN.value, Split.VAL.value, seed,
                                small_tag=Split.TRAIN.value)
    return table.with_splits(splits)


def tag_test_split(table: DatasetTable, test_fraction: float = 0.2, seed: int = 0) -> DatasetTable:
    """Stratified test tagging; the remaining records become 'unsplit'"""
    if test_fraction == 0:
        return table.with_splits(np.full(len(table), Split.UNSPLIT.value, dtype=object))
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must lie in [0, 1), got {test_fraction}")
    eligible = np.arange(len(table))
    splits = _stratified_assign(table, eligible, 1.0 - test_fraction, Split.UNSPLIT.value, Split.TEST.value,
                                seed, small_tag=Split.UNSPLIT.value)
    return table.with_splits(splits)


def batch_iter(table: DatasetTable, batch_size: int = 16, seed: int = 0, epoch: int = 0,
               split: Union[str, Split, None] = Split.TRAIN) -> Iterator[Batch]:
    """Shuffled batches of one split; the order depends only on (seed, epoch), the last batch may be short"""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    indices = table.indices(split)
    if indices.size == 0:
        raise DataFormatError(f"split '{split}' is empty")
    order = np.random.default_rng([seed, epoch]).permutation(indices)
    for start in range(0, order.size, batch_size):
        yield table.batch(order[start:start + batch_size])


def inverse_frequency_weights(labels: np.ndarray, n_classes: int) -> List[float]:
    """w_k = n / (N·n_k); classes without samples get weight 0"""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
    n = counts.sum()
    weights = []
    for k, count in enumerate(counts):
        if count == 0:
            logger.warning(f"Class {k} has no training samples; its class weight is 0")
            weights.append(0.0)
        else:
            weights.append(float(n / (n_classes * count)))
    return weights


# CSV persistence


def csv_header(widths: Dict[str, int]) -> List[str]:
    header = ["id", "split", "label"]
    for name in BLOCKS:
        header.extend(f"{name}_{j}" for j in range(widths[name]))
    return header


def class_names_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".classes.json")


def write_csv(table: DatasetTable, path: Union[str, Path]) -> Path:
    """
    Write the table as UTF-8 CSV with LF newlines; floats use the shortest
    round-trip representation. Class names go to a `<file>.classes.json` sidecar.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(csv_header(table.widths))
        for i in range(len(table)):
            row = [table.ids[i], table.splits[i], str(int(table.labels[i]))]
            for name in BLOCKS:
                row.extend(repr(float(x)) for x in getattr(table, name)[i])
            writer.writerow(row)
    with open(class_names_path(path), "w", encoding="utf-8") as f:
        json.dump(list(table.class_names), f)
    logger.debug(f"Wrote {len(table)} records to {path}")
    return path


def _parse_header(header: List[str]) -> Dict[str, int]:
    for position, expected in enumerate(("id", "split", "label")):
        if position >= len(header) or header[position] != expected:
            found = header[position] if position < len(header) else "<end of header>"
            raise DataFormatError(f"expected column '{expected}' at position {position}, found '{found}'", line=1)
    widths = {}
    position = 3
    for name in BLOCKS:
        width = 0
        while position < len(header) and header[position] == f"{name}_{width}":
            width += 1
            position += 1
        if width == 0:
            raise DataFormatError(f"missing feature column '{name}_0'", line=1)
        widths[name] = width
    if position != len(header):
        raise DataFormatError(f"unexpected column '{header[position]}'", line=1)
    return widths


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"column {column}: '{text}' is not a number", line=line)
    if not math.isfinite(value):
        raise DataFormatError(f"column {column}: non-finite value '{text}'", line=line)
    return value


def load_csv(path: Union[str, Path], class_names: Optional[Sequence[str]] = None) -> DatasetTable:
    """Parse and validate a dataset CSV; errors carry the offending line number"""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"dataset file not found: {path}")

    ids, splits, labels = [], [], []
    rows = {name: [] for name in BLOCKS}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", line=1)
        widths = _parse_header(header)
        offsets = {"c": 3, "d": 3 + widths["c"], "m": 3 + widths["c"] + widths["d"]}

        for cells in reader:
            line = reader.line_num
            if not cells:
                continue
            if len(cells) != len(header):
                raise DataFormatError(f"row has {len(cells)} cells, header has {len(header)}", line=line)
            if cells[1] not in SPLITS:
                raise DataFormatError(f"unknown split '{cells[1]}'", line=line)
            try:
                label = int(cells[2])
            except ValueError:
                raise DataFormatError(f"label '{cells[2]}' is not an integer", line=line)
            if label < 0:
                raise DataFormatError(f"label {label} is negative", line=line)
            ids.append(cells[0])
            splits.append(cells[1])
            labels.append(label)
            for name in BLOCKS:
                start = offsets[name]
                rows[name].append([_parse_float(cells[start + j], header[start + j], line)
                                   for j in range(widths[name])])

    if not ids:
        raise DataFormatError(f"no records in {path}")
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"duplicate record ids in {path}")

    if class_names is None and class_names_path(path).exists():
        with open(class_names_path(path), "r", encoding="utf-8") as f:
            class_names = json.load(f)
    n_classes = max(labels) + 1
    if class_names is None or len(class_names) < n_classes:
        if class_names is not None:
            logger.warning(f"{len(class_names)} class names for labels up to {n_classes - 1}; using defaults")
        class_names = default_class_names(max(n_classes, 2))

    return DatasetTable(
        ids=ids,
        splits=np.array(splits, dtype=object),
        labels=np.array(labels),
        c=np.array(rows["c"]).reshape(len(ids), widths["c"]),
        d=np.array(rows["d"]).reshape(len(ids), widths["d"]),
        m=np.array(rows["m"]).reshape(len(ids), widths["m"]),
        class_names=list(class_names),
    )
