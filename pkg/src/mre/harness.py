"""Training, evaluation, multi-seed reports, ablation and consistency analysis."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import numcore as nc
from .data import Dataset, collate, split_and_batch
from .exceptions import ConfigError, ContractError, DivergenceError, ParseError
from .metrics import accuracy, confusion_matrix, f1_score, mean_std
from .model import ModelConfig, MRENetwork

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "mre-v1"
CONFIG_ALIASES = {"lambda_sa": "lambda_rs"}


@dataclass
class TrainConfig:
    """Hyperparameters of one experiment; JSON config files use these names.

    ``lambda_sa`` is accepted as an alias of ``lambda_rs``.
    """

    learning_rate: float = 5e-5
    dropout: float = 0.2
    batch_size: int = 64
    epochs: int = 100
    patience: int = 8
    d_model: int = 32
    rank: int = 4
    d_out: Optional[int] = None
    head_hidden: Optional[int] = None
    tau: float = 0.1
    lambda_rs: float = 1.0
    lambda_cnce: float = 1.0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_seed: int = 0
    f1_average: str = "weighted"
    dtype: str = "float64"

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        self.split_ratios = [float(r) for r in self.split_ratios]
        if self.learning_rate <= 0 or self.tau <= 0:
            raise ConfigError("learning_rate and tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, epochs and patience must be positive")
        if self.lambda_rs < 0 or self.lambda_cnce < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.f1_average not in ("weighted", "macro"):
            raise ConfigError(f"f1_average must be 'weighted' or 'macro', got {self.f1_average!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for alias, name in CONFIG_ALIASES.items():
            if alias in d:
                value = d.pop(alias)
                if name in d and d[name] != value:
                    raise ConfigError(f"{alias!r} and {name!r} given with different values")
                d[name] = value
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", exc.lineno) from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def model_config(self, dims, n_classes) -> ModelConfig:
        return ModelConfig(dims=dims, n_classes=n_classes, d_model=self.d_model, rank=self.rank,
                           d_out=self.d_out, head_hidden=self.head_hidden, dropout=self.dropout,
                           dtype=self.dtype)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict(model: MRENetwork, bags, batch_size=256) -> np.ndarray:
    bags = list(bags)
    out = [model.predict(collate(bags[i:i + batch_size], dtype=model.dtype))
           for i in range(0, len(bags), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: MRENetwork, split, f1_average="weighted") -> tuple:
    """Accuracy and F1 of ``model`` on a list of bags."""
    bags = list(split)
    if not bags:
        raise ContractError("evaluate: empty split")
    y = np.array([b.label for b in bags])
    pred = predict(model, bags)
    return accuracy(y, pred), f1_score(y, pred, model.config.n_classes, f1_average)


def mean_loss(model: MRENetwork, bags, cfg: TrainConfig, batch_size=256) -> float:
    """Eval-mode total objective averaged over ``bags``."""
    bags = list(bags)
    total = 0.0
    with nc.no_grad():
        for i in range(0, len(bags), batch_size):
            batch = collate(bags[i:i + batch_size], dtype=model.dtype)
            lb = model.loss(model.forward(batch), batch.labels, lambda_rs=cfg.lambda_rs,
                            lambda_cnce=cfg.lambda_cnce, tau=cfg.tau)
            total += lb.total.item() * len(batch)
    return total / len(bags)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class SeedRecord:
    seed: int
    test_acc: float
    test_f1: float
    val_acc: float
    best_epoch: int
    epochs_run: int
    initial_loss: float
    history: list

    def to_dict(self) -> dict:
        return asdict(self)


def train(cfg: TrainConfig, dataset: Dataset, seed: Optional[int] = None):
    """Train one model; returns ``(model, SeedRecord)``.

    The model returned carries the parameters of the epoch with the best
    validation accuracy.
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    if dataset.n_classes < 2:
        raise ContractError("training needs at least 2 classes")
    splits = split_and_batch(dataset, cfg.split_ratios, cfg.batch_size, cfg.split_seed)
    model = MRENetwork(cfg.model_config(dataset.dims, dataset.n_classes), seed=seed)
    history, best = fit_network(model, cfg, splits.train, splits.val, seed,
                                train_batches=lambda epoch: splits.train_batches(epoch, seed))
    test_acc, test_f1 = evaluate(model, splits.test, cfg.f1_average)
    record = SeedRecord(seed=seed, test_acc=test_acc, test_f1=test_f1, val_acc=best["val_acc"],
                        best_epoch=best["epoch"], epochs_run=len(history),
                        initial_loss=best["initial_loss"], history=history)
    return model, record


def fit_network(model: MRENetwork, cfg: TrainConfig, train_bags, val_bags, seed, train_batches=None):
    """Adam on the total objective with early stopping on validation accuracy."""
    train_bags, val_bags = list(train_bags), list(val_bags)
    if train_batches is None:
        def train_batches(epoch):
            order = np.random.default_rng([seed, epoch]).permutation(len(train_bags))
            shuffled = [train_bags[i] for i in order]
            return (shuffled[i:i + cfg.batch_size] for i in range(0, len(shuffled), cfg.batch_size))

    opt = nc.Adam(model.parameters(), lr=cfg.learning_rate)
    dropout_rng = np.random.default_rng([seed, 0x5EED])
    initial_loss = mean_loss(model, train_bags, cfg)
    best = {"val_acc": -1.0, "epoch": 0, "state": model.state_dict(), "initial_loss": initial_loss}
    history = []
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        sums = {"ce": 0.0, "l_rs": 0.0, "l_cnce": 0.0, "total": 0.0}
        seen = 0
        for b_idx, bags in enumerate(train_batches(epoch)):
            batch = collate(bags, dtype=model.dtype)
            out = model.forward(batch, training=True, rng=dropout_rng)
            lb = model.loss(out, batch.labels, lambda_rs=cfg.lambda_rs,
                            lambda_cnce=cfg.lambda_cnce, tau=cfg.tau)
            values = lb.values()
            if not all(math.isfinite(v) for v in values.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b_idx}: {values}",
                                      epoch=epoch, batch=b_idx)
            opt.zero_grad()
            nc.backward(lb.total)
            opt.step()
            for k, v in values.items():
                sums[k] += v * len(batch)
            seen += len(batch)
        val_acc, val_f1 = evaluate(model, val_bags, cfg.f1_average) if val_bags else (0.0, 0.0)
        entry = {"epoch": epoch, **{k: v / seen for k, v in sums.items()},
                 "val_acc": val_acc, "val_f1": val_f1}
        history.append(entry)
        logger.debug("seed %s epoch %d: %s", seed, epoch, entry)
        if val_acc > best["val_acc"]:
            best.update(val_acc=val_acc, epoch=epoch, state=model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best["state"])
    return history, best


# ---------------------------------------------------------------------------
# multi-seed reports
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    records: list

    @property
    def aggregate(self) -> dict:
        acc_mean, acc_std = mean_std([r.test_acc for r in self.records])
        f1_mean, f1_std = mean_std([r.test_f1 for r in self.records])
        return {"acc_mean": acc_mean, "acc_std": acc_std, "f1_mean": f1_mean, "f1_std": f1_std}

    def to_dict(self) -> dict:
        return {"config": self.config, "records": [r.to_dict() for r in self.records],
                "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(d["config"], [SeedRecord(**r) for r in d["records"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _train_record(args):
    cfg, dataset, seed = args
    return train(cfg, dataset, seed)[1]


def run_seeds(cfg: TrainConfig, dataset: Dataset, n_jobs: int = 1) -> RunReport:
    """Train once per seed in ``cfg.seeds``; records keep seed order regardless of ``n_jobs``."""
    jobs = [(cfg, dataset, s) for s in cfg.seeds]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(_train_record, jobs))
    else:
        records = [_train_record(j) for j in jobs]
    return RunReport(cfg.to_dict(), records)


ABLATION_VARIANTS = (
    ("Baseline", False, False),
    ("L_rs", True, False),
    ("L_cnce", False, True),
    ("L_rs + L_cnce", True, True),
)


@dataclass
class AblationReport:
    rows: list  # (variant name, RunReport)

    def table(self) -> list:
        out = []
        for name, report in self.rows:
            agg = report.aggregate
            out.append({"variant": name, "lambda_rs": report.config["lambda_rs"],
                        "lambda_cnce": report.config["lambda_cnce"], **agg})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["variant", "lambda_rs", "lambda_cnce", "acc_mean", "acc_std", "f1_mean", "f1_std"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.table():
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_markdown(self) -> str:
        rows = [("Variant", "Acc", "F1-Score")]
        for row in self.table():
            rows.append((row["variant"],
                         f"{100 * row['acc_mean']:.2f} ± {100 * row['acc_std']:.2f}",
                         f"{100 * row['f1_mean']:.2f} ± {100 * row['f1_std']:.2f}"))
        return _markdown_table(rows)

    def to_dict(self) -> dict:
        return {"rows": [{"variant": n, "report": r.to_dict()} for n, r in self.rows]}


def ablation_configs(cfg: TrainConfig) -> list:
    """Per-variant configs; only the two loss coefficients differ from ``cfg``."""
    on_rs = cfg.lambda_rs or 1.0
    on_cnce = cfg.lambda_cnce or 1.0
    return [(name, replace(cfg, lambda_rs=on_rs if rs else 0.0, lambda_cnce=on_cnce if cn else 0.0))
            for name, rs, cn in ABLATION_VARIANTS]


def ablation_run(cfg: TrainConfig, dataset: Dataset, n_jobs: int = 1) -> AblationReport:
    rows = []
    for name, variant in ablation_configs(cfg):
        logger.info("ablation variant %s", name)
        rows.append((name, run_seeds(variant, dataset, n_jobs)))
    return AblationReport(rows)


# ---------------------------------------------------------------------------
# cross-modal consistency
# ---------------------------------------------------------------------------

MODALITY_DISPLAY = ("visual", "audio", "text")


@dataclass
class ModalityConsistency:
    modality: str
    matrix: np.ndarray  # rows: bag label, columns: modality label
    coverage: int  # samples carrying this modality's label
    n_samples: int
    neutral: Optional[int] = None

    @property
    def consistency(self) -> float:
        total = self.matrix.sum()
        return float(np.trace(self.matrix) / total) if total else float("nan")

    @property
    def consistency_without_neutral(self) -> Optional[float]:
        """Consistency over samples whose bag label is not the neutral class."""
        if self.neutral is None:
            return None
        keep = [i for i in range(len(self.matrix)) if i != self.neutral]
        sub = self.matrix[keep]
        total = sub.sum()
        return float(sum(self.matrix[i, i] for i in keep) / total) if total else float("nan")

    def summary(self) -> str:
        if not self.coverage:
            return f"{self.modality} consistency: n/a (no unimodal labels)"
        line = f"{self.modality} consistency: {100 * self.consistency:.2f}%"
        excl = self.consistency_without_neutral
        if excl is not None:
            line += f" (without neutral: {100 * excl:.2f}%)"
        if self.coverage < self.n_samples:
            line += f" [coverage {self.coverage}/{self.n_samples}]"
        return line


@dataclass
class ConsistencyReport:
    modalities: list

    def summary(self) -> str:
        return "\n".join(m.summary() for m in self.modalities)

    def to_dict(self) -> dict:
        return {m.modality: {"matrix": m.matrix.tolist(), "consistency": m.consistency,
                             "consistency_without_neutral": m.consistency_without_neutral,
                             "coverage": m.coverage, "n_samples": m.n_samples}
                for m in self.modalities}

    def matrix_csv(self, modality: str) -> str:
        m = next(x for x in self.modalities if x.modality == modality)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bag_label"] + [f"{modality}_{j}" for j in range(len(m.matrix))])
        for i, row in enumerate(m.matrix):
            writer.writerow([i] + row.tolist())
        return buf.getvalue()


def relevance_report(dataset: Dataset, neutral: Optional[int] = None) -> ConsistencyReport:
    """Bag-label vs modality-label confusion per modality.

    Samples without a label for a modality are counted as a coverage gap.
    """
    C = dataset.n_classes
    out = []
    for m, name in enumerate(MODALITY_DISPLAY):
        pairs = [(b.label, b.unimodal_label(m)) for b in dataset.bags if b.unimodal_label(m) is not None]
        if pairs:
            bag, mod = zip(*pairs)
            matrix = confusion_matrix(bag, mod, C)
        else:
            matrix = np.zeros((C, C), dtype=np.int64)
        out.append(ModalityConsistency(name, matrix, len(pairs), len(dataset), neutral))
    return ConsistencyReport(out)


# ---------------------------------------------------------------------------
# checkpoints and output helpers
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: MRENetwork, cfg: TrainConfig, meta: Optional[dict] = None) -> Path:
    params = {name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
              for name, p in model.named_parameters()}
    doc = {"version": CHECKPOINT_VERSION, "train_config": cfg.to_dict(),
           "model_config": model.config.to_dict(), "meta": meta or {}, "params": params}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def load_checkpoint(path):
    """Returns ``(model, train_config, meta)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid checkpoint JSON: {exc.msg}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    cfg = TrainConfig.from_dict(doc["train_config"])
    model = MRENetwork(ModelConfig.from_dict(doc["model_config"]))
    state = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64)
        if arr.size != int(np.prod(entry["shape"])):
            raise ParseError(f"{path}: parameter {name} has {arr.size} values for shape {entry['shape']}")
        state[name] = arr.reshape(entry["shape"])
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model, cfg, doc.get("meta", {})


def _markdown_table(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = ["| " + " | ".join(str(c).ljust(w) for c, w in zip(rows[0], widths)) + " |",
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    for r in rows[1:]:
        lines.append("| " + " | ".join(str(c).ljust(w) for c, w in zip(r, widths)) + " |")
    return "\n".join(lines) + "\n"


def run_report_markdown(report: RunReport) -> str:
    rows = [("Seed", "Acc", "F1-Score", "Best epoch")]
    for r in report.records:
        rows.append((r.seed, f"{100 * r.test_acc:.2f}", f"{100 * r.test_f1:.2f}", r.best_epoch))
    agg = report.aggregate
    rows.append(("mean ± std", f"{100 * agg['acc_mean']:.2f} ± {100 * agg['acc_std']:.2f}",
                 f"{100 * agg['f1_mean']:.2f} ± {100 * agg['f1_std']:.2f}", ""))
    return _markdown_table(rows)
