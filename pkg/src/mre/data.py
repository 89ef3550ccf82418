"""Dataset ingestion, synthetic generation, splitting and batching.

Datasets are JSON Lines files, one sample per line::

    {"id": "s0", "label": 2, "label_v": 2, "label_a": 0, "label_t": 2,
     "vision": [[...], ...], "audio": [[...], ...], "text": [[...], ...]}

``label_v``/``label_a``/``label_t`` are optional. A manifest
``{"n": ..., "classes": ..., "dims": [d_v, d_a, d_t]}`` is written next to the
dataset as ``<name>.manifest.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .exceptions import ConfigError, ContractError, ParseError, ValidationError

MODALITY_KEYS = ("vision", "audio", "text")
UNIMODAL_LABEL_KEYS = ("label_v", "label_a", "label_t")


@dataclass
class InstanceBag:
    id: str
    vision: np.ndarray
    audio: np.ndarray
    text: np.ndarray
    label: int
    label_v: Optional[int] = None
    label_a: Optional[int] = None
    label_t: Optional[int] = None

    def modality(self, key: str) -> np.ndarray:
        return getattr(self, key)

    def unimodal_label(self, index: int) -> Optional[int]:
        return getattr(self, UNIMODAL_LABEL_KEYS[index])

    def to_json(self) -> dict:
        out = {"id": self.id, "label": int(self.label)}
        for key in UNIMODAL_LABEL_KEYS:
            value = getattr(self, key)
            if value is not None:
                out[key] = int(value)
        for key in MODALITY_KEYS:
            out[key] = self.modality(key).tolist()
        return out


@dataclass
class Manifest:
    n: int
    classes: int
    dims: tuple

    def to_json(self) -> dict:
        return {"n": self.n, "classes": self.classes, "dims": list(self.dims)}


@dataclass
class Dataset:
    bags: list
    manifest: Manifest

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    def __getitem__(self, i):
        return self.bags[i]

    @property
    def n_classes(self) -> int:
        return self.manifest.classes

    @property
    def dims(self) -> tuple:
        return self.manifest.dims

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=np.int64)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


# ---------------------------------------------------------------------------
# JSONL io
# ---------------------------------------------------------------------------

def _parse_matrix(value, key, line_no) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ParseError(f"{key!r} must be a non-empty array of rows", line_no)
    width = None
    for row in value:
        if not isinstance(row, list) or not row:
            raise ParseError(f"{key!r} rows must be non-empty arrays of numbers", line_no)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"{key!r} is ragged: row lengths {width} and {len(row)}", line_no)
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParseError(f"{key!r} contains a non-numeric entry {v!r}", line_no)
    arr = np.array(value, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ParseError(f"{key!r} contains non-finite values", line_no)
    return arr


def _parse_label(value, key, line_no) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ParseError(f"{key!r} must be a non-negative integer, got {value!r}", line_no)
    return value


def parse_bag(record: dict, line_no: int) -> InstanceBag:
    if not isinstance(record, dict):
        raise ParseError("expected a JSON object", line_no)
    for key in ("id", "label") + MODALITY_KEYS:
        if key not in record:
            raise ParseError(f"missing required key {key!r}", line_no)
    unknown = set(record) - {"id", "label", *MODALITY_KEYS, *UNIMODAL_LABEL_KEYS}
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}", line_no)
    if not isinstance(record["id"], str):
        raise ParseError("'id' must be a string", line_no)
    mats = {key: _parse_matrix(record[key], key, line_no) for key in MODALITY_KEYS}
    extras = {key: _parse_label(record[key], key, line_no)
              for key in UNIMODAL_LABEL_KEYS if record.get(key) is not None}
    return InstanceBag(id=record["id"], label=_parse_label(record["label"], "label", line_no),
                       **mats, **extras)


def _dims_of(bag: InstanceBag) -> tuple:
    return tuple(bag.modality(k).shape[1] for k in MODALITY_KEYS)


def _max_label(bag: InstanceBag) -> int:
    labels = [bag.label] + [v for v in (bag.label_v, bag.label_a, bag.label_t) if v is not None]
    return max(labels)


def build_dataset(bags, classes: Optional[int] = None) -> Dataset:
    """Validate a list of bags and derive its manifest."""
    bags = list(bags)
    if not bags:
        raise ValidationError("dataset is empty")
    dims = _dims_of(bags[0])
    ids = set()
    for i, bag in enumerate(bags):
        if _dims_of(bag) != dims:
            raise ValidationError(f"sample {i} ({bag.id!r}) has feature dims {_dims_of(bag)}, "
                                  f"expected {dims}")
        if bag.id in ids:
            raise ValidationError(f"duplicate sample id {bag.id!r}")
        ids.add(bag.id)
    top = max(_max_label(b) for b in bags) + 1
    if classes is None:
        classes = max(top, 2)
    elif top > classes:
        raise ValidationError(f"label {top - 1} out of range for {classes} classes")
    return Dataset(bags, Manifest(n=len(bags), classes=int(classes), dims=dims))


def load_dataset(path) -> Dataset:
    path = Path(path)
    bags = []
    dims = None
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            bag = parse_bag(record, line_no)
            if dims is None:
                dims = _dims_of(bag)
            elif _dims_of(bag) != dims:
                raise ValidationError(f"line {line_no}: feature dims {_dims_of(bag)} differ from {dims}")
            bags.append(bag)
    classes = None
    mpath = manifest_path(path)
    if mpath.exists():
        try:
            classes = int(json.loads(mpath.read_text(encoding="utf-8"))["classes"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad manifest {mpath}: {exc}") from exc
    return build_dataset(bags, classes)


def save_dataset(dataset: Dataset, path) -> Path:
    """Write JSONL plus manifest; floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for bag in dataset.bags:
            fh.write(json.dumps(bag.to_json(), separators=(",", ":")))
            fh.write("\n")
    manifest_path(path).write_text(json.dumps(dataset.manifest.to_json()) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    n_samples: int = 2000
    n_classes: int = 5
    dims: tuple = (8, 8, 8)
    lengths: tuple = (6, 6, 6)
    separation: float = 1.0
    sigma: float = 0.5
    p_irr: tuple | float = 0.3
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.p_irr, (int, float)):
            self.p_irr = (float(self.p_irr),) * 3
        self.p_irr = tuple(float(p) for p in self.p_irr)
        self.dims = tuple(int(d) for d in self.dims)
        self.lengths = tuple(int(t) for t in self.lengths)
        if len(self.p_irr) != 3 or len(self.dims) != 3 or len(self.lengths) != 3:
            raise ConfigError("p_irr, dims and lengths need one entry per modality")
        if any(not 0.0 <= p <= 1.0 for p in self.p_irr):
            raise ConfigError(f"p_irr must lie in [0, 1], got {self.p_irr}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if self.n_classes < 2:
            raise ContractError(f"need at least 2 classes, got {self.n_classes}")
        if self.n_samples < 1 or min(self.dims) < 1 or min(self.lengths) < 1:
            raise ConfigError("n_samples, dims and lengths must be positive")


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Class-prototype data where each modality may express an unrelated class.

    For each sample and each modality independently, with probability
    ``p_irr`` the modality shows a uniformly drawn *other* class; the shown
    class is recorded as that modality's label.
    """
    rng = np.random.default_rng(cfg.seed)
    C = cfg.n_classes
    prototypes = [rng.normal(0.0, cfg.separation, size=(C, d)) for d in cfg.dims]
    labels = rng.integers(0, C, size=cfg.n_samples)
    bags = []
    for i, y in enumerate(labels):
        y = int(y)
        shown, mats = [], []
        for m in range(3):
            cls = y
            if rng.random() < cfg.p_irr[m]:
                other = int(rng.integers(0, C - 1))
                cls = other + (other >= y)
            shown.append(cls)
            rows = prototypes[m][cls] + rng.normal(0.0, 1.0, size=(cfg.lengths[m], cfg.dims[m])) * cfg.sigma
            mats.append(rows)
        bags.append(InstanceBag(id=f"s{i:06d}", vision=mats[0], audio=mats[1], text=mats[2],
                                label=y, label_v=shown[0], label_a=shown[1], label_t=shown[2]))
    return Dataset(bags, Manifest(n=cfg.n_samples, classes=C, dims=cfg.dims))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Zero-padded modality arrays plus valid lengths for a list of bags."""

    ids: list
    features: tuple  # three arrays (B, T_max, d)
    lengths: tuple  # three int arrays (B,)
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


def collate(bags, dtype=np.float64) -> Batch:
    bags = list(bags)
    feats, lens = [], []
    for key in MODALITY_KEYS:
        mats = [b.modality(key) for b in bags]
        lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
        out = np.zeros((len(mats), int(lengths.max()), mats[0].shape[1]), dtype=dtype)
        for i, m in enumerate(mats):
            out[i, :m.shape[0]] = m
        feats.append(out)
        lens.append(lengths)
    labels = np.array([b.label for b in bags], dtype=np.int64)
    return Batch([b.id for b in bags], tuple(feats), tuple(lens), labels)


def _batches(bags, batch_size) -> Iterator[list]:
    for start in range(0, len(bags), batch_size):
        yield bags[start:start + batch_size]


@dataclass
class SplitStreams:
    train: list
    val: list
    test: list
    batch_size: int = 64
    seed: int = 0

    def split(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def train_batches(self, epoch: int, seed: Optional[int] = None) -> Iterator[list]:
        """Train bags reshuffled per epoch; deterministic in (seed, epoch)."""
        rng = np.random.default_rng([self.seed if seed is None else seed, epoch])
        order = rng.permutation(len(self.train))
        return _batches([self.train[i] for i in order], self.batch_size)

    def eval_batches(self, name: str) -> Iterator[list]:
        return _batches(self.split(name), self.batch_size)


def split_sizes(n: int, ratios) -> tuple:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = n - n_train - n_val
    return n_train, n_val, n_test


def split_and_batch(dataset, ratios=(0.8, 0.1, 0.1), batch_size=64, seed=0) -> SplitStreams:
    """Seeded shuffle followed by a contiguous train/val/test split."""
    bags = list(dataset)
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    sizes = split_sizes(len(bags), ratios)
    for name, size in zip(("train", "val", "test"), sizes):
        if size < 1:
            raise ConfigError(f"{name} split is empty ({len(bags)} samples, ratios {tuple(ratios)})")
    order = np.random.default_rng(seed).permutation(len(bags))
    shuffled = [bags[i] for i in order]
    a, b = sizes[0], sizes[0] + sizes[1]
    return SplitStreams(shuffled[:a], shuffled[a:b], shuffled[b:], batch_size=batch_size, seed=seed)
