"""Metrics, single experiments, scenario x hyperparameter grids, result files."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (PAPER_SCENARIOS, ScenarioSpec, apply_scenario, augment_flip,
                   generate_gaussians, load_idx, split_train_test)
from .errors import MetricUndefinedError, ValidationError
from .losses import LossParams
from .model import EncoderSpec, TrainConfig, init_model, predict_labels, train_stage1, train_stage2

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("scenario", "loss", "eta", "gamma", "tau", "seed", "accuracy", "uwa",
                  "tp", "tn", "fp", "fn", "runtime_seconds")
ETA_GRID = (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)
GAMMA_GRID = (0.0, 1.0, 2.0, 4.0, 7.0, 10.0)
# (loss, eta, gamma) rows of the loss-comparison table
LOSS_TABLE = (("cl", 0.0, 0.0), ("fcl", 0.0, 1.0), ("acl", 300.0, 0.0),
              ("afcl", 300.0, 2.0), ("afcl", 300.0, 7.0))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValidationError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def confusion(predictions, truths) -> ConfusionCounts:
    """Confusion counts with class 1 (the minority) as the positive class."""
    p = np.asarray(predictions).reshape(-1)
    t = np.asarray(truths).reshape(-1)
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.size} predictions, {t.size} truths")
    if p.size == 0:
        raise ValidationError("need at least one prediction")
    for name, v in (("predictions", p), ("truths", t)):
        if np.any((v != 0) & (v != 1)):
            raise ValidationError(f"{name} must be binary")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (t == 1))), tn=int(np.sum((p == 0) & (t == 0))),
        fp=int(np.sum((p == 1) & (t == 0))), fn=int(np.sum((p == 0) & (t == 1))),
    )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ValidationError("accuracy of an empty confusion matrix")
    return (c.tp + c.tn) / c.total


def uwa(c: ConfusionCounts) -> float:
    """Unweighted accuracy: the mean of the two per-class recalls."""
    if c.tp + c.fn == 0:
        raise MetricUndefinedError("UWA undefined: no positive (class 1) samples in the test set")
    if c.tn + c.fp == 0:
        raise MetricUndefinedError("UWA undefined: no negative (class 0) samples in the test set")
    return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp))


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "90:10"
    loss: str = "afcl"
    eta: float = 0.0
    gamma: float = 0.0
    tau: float = 0.07
    seed: int = 0
    epochs1: int = 20
    epochs2: int = 10
    lr: float = 1e-2
    batch_size: int = 128
    data: str = "synthetic"
    images: str | None = None
    labels: str | None = None
    class_a: int = 0
    class_b: int = 6
    dim: int = 8
    separation: float = 6.0
    total: int = 1000
    train_fraction: float = 0.7
    hidden_dims: tuple[int, ...] = (64,)
    feature_dim: int = 32
    projection_dim: int = 16
    stage2_loss: str = "ce"
    stage2_gamma: float = 2.0
    augment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.data not in ("synthetic", "idx"):
            raise ValidationError(f"data must be 'synthetic' or 'idx', got {self.data!r}")
        if self.data == "idx" and not (self.images and self.labels):
            raise ValidationError("idx data needs both images and labels paths")
        ScenarioSpec.parse(self.scenario, self.total)
        self.train_config()

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            stage1_epochs=self.epochs1, stage2_epochs=self.epochs2, learning_rate=self.lr,
            batch_size=self.batch_size, loss=self.loss,
            loss_params=LossParams(tau=self.tau, eta=self.eta, gamma=self.gamma),
            stage2_loss=self.stage2_loss, stage2_gamma=self.stage2_gamma, seed=self.seed,
        )


@dataclass
class ResultRow:
    scenario: str
    loss: str
    eta: float
    gamma: float
    tau: float
    seed: int
    accuracy: float | None
    uwa: float | None
    counts: ConfusionCounts | None
    runtime_seconds: float
    error: str | None = None

    def as_record(self) -> dict:
        c = self.counts
        return {
            "scenario": self.scenario, "loss": self.loss, "eta": self.eta, "gamma": self.gamma,
            "tau": self.tau, "seed": self.seed, "accuracy": self.accuracy, "uwa": self.uwa,
            "tp": c.tp if c else None, "tn": c.tn if c else None,
            "fp": c.fp if c else None, "fn": c.fn if c else None,
            "runtime_seconds": self.runtime_seconds,
        }


def build_datasets(config: ExperimentConfig):
    spec = ScenarioSpec.parse(config.scenario, config.total, config.seed)
    if config.data == "synthetic":
        d = generate_gaussians(config.dim, config.separation, spec)
    else:
        d = apply_scenario(load_idx(config.images, config.labels, config.class_a, config.class_b), spec)
    train, test = split_train_test(d, config.train_fraction, config.seed)
    if config.augment and train.image_shape is not None:
        train = augment_flip(train, train.image_shape[1], config.seed)
    return train, test


def run_experiment(config: ExperimentConfig) -> ResultRow:
    """data -> scenario -> split -> (augment) -> stage 1 -> stage 2 -> metrics.

    Failures are captured in an error row with empty metrics.
    """
    start = time.perf_counter()
    row = ResultRow(config.scenario, config.loss, float(config.eta), float(config.gamma),
                    float(config.tau), int(config.seed), None, None, None, 0.0)
    try:
        train, test = build_datasets(config)
        enc_spec = EncoderSpec(train.samples.shape[1], config.hidden_dims,
                               config.feature_dim, config.projection_dim)
        tc = config.train_config()
        state = init_model(enc_spec, config.seed)
        state, _ = train_stage1(state, train, tc)
        state, _ = train_stage2(state, train, tc)
        counts = confusion(predict_labels(state, test.samples), test.labels)
        row.counts, row.accuracy, row.uwa = counts, accuracy(counts), uwa(counts)
    except (ValueError, OSError) as exc:
        log.error("run %s/%s seed %d failed: %s", config.scenario, config.loss, config.seed, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    row.runtime_seconds = time.perf_counter() - start
    return row


# -- grids -------------------------------------------------------------------

@dataclass
class GridCell:
    row: ResultRow
    runs: list[ResultRow] = field(default_factory=list)
    std_accuracy: float | None = None
    std_uwa: float | None = None


def _scenario_key(name: str) -> tuple[float, str]:
    return ScenarioSpec.parse(name).majority_fraction, name


def sort_rows(rows):
    return sorted(rows, key=lambda r: (_scenario_key(r.scenario), r.eta, r.gamma, r.loss, r.seed))


def aggregate(runs: list[ResultRow]) -> GridCell:
    """Mean accuracy/UWA over the successful runs; counts are summed.

    Every run of a cell shares one scenario and stratified split sizes, so
    metrics recomputed from the summed counts equal the means.
    """
    first = runs[0]
    ok = [r for r in runs if r.error is None]
    row = ResultRow(first.scenario, first.loss, first.eta, first.gamma, first.tau, first.seed,
                    None, None, None, float(np.mean([r.runtime_seconds for r in runs])))
    cell = GridCell(row, runs)
    if not ok:
        row.error = f"all {len(runs)} runs failed"
        return cell
    if len(ok) < len(runs):
        log.warning("cell %s/%s eta=%g gamma=%g: %d of %d runs failed", row.scenario, row.loss,
                    row.eta, row.gamma, len(runs) - len(ok), len(runs))
    accs = [r.accuracy for r in ok]
    uwas = [r.uwa for r in ok]
    row.accuracy, row.uwa = math.fsum(accs) / len(accs), math.fsum(uwas) / len(uwas)
    total = ok[0].counts
    for r in ok[1:]:
        total = total + r.counts
    row.counts = total
    cell.std_accuracy, cell.std_uwa = float(np.std(accs)), float(np.std(uwas))
    return cell


def grid_configs(base: ExperimentConfig, table: str, scenarios=None, eta_grid=ETA_GRID,
                 gamma_grid=GAMMA_GRID) -> list[ExperimentConfig]:
    """One config per table cell. ``table`` is ``eta``, ``gamma`` or ``losses``."""
    if table == "losses":
        scenarios = scenarios or (base.scenario,)
        cells = [(s, loss, e, g) for s in scenarios for loss, e, g in LOSS_TABLE]
    elif table == "eta":
        scenarios = scenarios or PAPER_SCENARIOS
        cells = [(s, "afcl", float(e), 0.0) for s in scenarios for e in eta_grid]
    elif table == "gamma":
        scenarios = scenarios or PAPER_SCENARIOS
        cells = [(s, "afcl", 0.0, float(g)) for s in scenarios for g in gamma_grid]
    else:
        raise ValidationError(f"unknown table {table!r}; use eta, gamma or losses")
    if not cells:
        raise ValidationError("grid is empty")
    return [dataclasses.replace(base, scenario=s, loss=loss, eta=e, gamma=g)
            for s, loss, e, g in cells]


def run_grid(base: ExperimentConfig, table: str = "eta", scenarios=None, eta_grid=ETA_GRID,
             gamma_grid=GAMMA_GRID, repeats: int = 4, workers: int = 1) -> list[GridCell]:
    """Run every cell ``repeats`` times with seeds ``base.seed + k`` and average."""
    if repeats < 1:
        raise ValidationError("repeats must be positive")
    cells = grid_configs(base, table, scenarios, eta_grid, gamma_grid)
    jobs = [dataclasses.replace(c, seed=base.seed + k) for c in cells for k in range(repeats)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_experiment, jobs))
    else:
        results = [run_experiment(j) for j in jobs]
    out = [aggregate(results[i * repeats:(i + 1) * repeats]) for i in range(len(cells))]
    order = sort_rows([c.row for c in out])
    by_id = {id(c.row): c for c in out}
    return [by_id[id(r)] for r in order]


# -- result files ------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def emit_results(rows, fmt: str = "csv", path=None) -> str:
    """Serialise rows to CSV or JSON; writes to ``path`` if given and returns the text."""
    rows = list(rows)
    if not rows:
        raise ValidationError("no rows to emit")
    records = [r.as_record() for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for rec in records:
            w.writerow([_fmt(rec[k]) for k in RESULT_COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        # json.dumps would print 0.5 rather than 0.500000; format floats ourselves
        text = _fixed_json_floats(records)
    else:
        raise ValidationError(f"unknown format {fmt!r}; use csv or json")
    if path is not None:
        Path(path).write_text(text)
    return text


def _fixed_json_floats(records) -> str:
    parts = []
    for rec in records:
        fields = []
        for k in RESULT_COLUMNS:
            v = rec[k]
            fields.append(f"{json.dumps(k)}: " + ("null" if v is None else
                          f"{v:.6f}" if isinstance(v, float) else json.dumps(v)))
        parts.append("  {" + ", ".join(fields) + "}")
    return "[\n" + ",\n".join(parts) + "\n]\n"


def _row_from_record(rec: dict) -> ResultRow:
    def num(v, kind=float):
        return None if v in ("", None) else kind(v)

    counts = None
    if num(rec["tp"], int) is not None:
        counts = ConfusionCounts(*(int(rec[k]) for k in ("tp", "tn", "fp", "fn")))
    return ResultRow(rec["scenario"], rec["loss"], float(rec["eta"]), float(rec["gamma"]),
                     float(rec["tau"]), int(rec["seed"]), num(rec["accuracy"]), num(rec["uwa"]),
                     counts, float(rec["runtime_seconds"]))


def load_results(path) -> list[ResultRow]:
    """Read a file written by :func:`emit_results` (format inferred from content)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("["):
        records = json.loads(text)
    else:
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValidationError(f"unexpected CSV columns {reader.fieldnames}")
        records = list(reader)
    return [_row_from_record(rec) for rec in records]
