"""Three-phase training: cross-table pretraining, task calibration, refinement.

Pretraining samples a dataset uniformly at every step and trains the
shared body together with every dataset's own parts.  Calibration
freezes the shared body (except normalization parameters) and trains the
new dataset's tokenizer, head, and context from scratch.  Refinement
briefly unfreezes everything.  Calibration and refinement keep the best
validation checkpoint, with the initial state included as a candidate,
so refinement can never end worse than the calibration result.

Dataset-specific parameters follow the warmup/decay schedule; shared
parameters train at the constant base rate.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from . import data as D
from . import evaluate as E
from .errors import UsageError
from .model import ModelAssembly
from .nn import Parameter, compute_loss
from .optim import AdamW, lr_at


@dataclass
class PhaseSpec:
    phase: str                 # "pretrain" | "calibrate" | "refine" | "scratch"
    epochs: int
    batch_cap: int = 1024
    base_lr: float = 1e-4
    weight_decay: float = 1e-5
    warmup_frac: float = 0.2
    seed: int = 0


def default_calibrate_epochs(setting_name: str) -> int:
    return 240 if setting_name == "T-full" else 40


DEFAULT_REFINE_EPOCHS = 5


@dataclass
class LogEntry:
    epoch: int
    train_loss: float
    valid_metric: float
    metric_name: str
    lr_dataset: float
    lr_shared: float
    wall_time: float
    changed_params: list[str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainLog:
    phase: str
    dataset: str | None = None
    entries: list[LogEntry] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("nan")
    diverged: bool = False
    step_losses: list[float] = field(default_factory=list)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            meta = {"phase": self.phase, "dataset": self.dataset,
                    "best_epoch": self.best_epoch, "best_metric": self.best_metric,
                    "diverged": self.diverged}
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for e in self.entries:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.entries]


def _digest(p: Parameter) -> str:
    return hashlib.sha256(np.ascontiguousarray(p.data).tobytes()).hexdigest()


def _digests(params: dict[str, Parameter]) -> dict[str, str]:
    return {n: _digest(p) for n, p in params.items()}


def _changed(before: dict[str, str], params: dict[str, Parameter]) -> list[str]:
    return sorted(n for n, p in params.items() if _digest(p) != before[n])


def _snapshot(params: dict[str, Parameter]) -> dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in params.items()}


def _restore(params: dict[str, Parameter], snap: dict[str, np.ndarray]) -> None:
    for n, arr in snap.items():
        params[n].data = arr.copy()


class _Best:
    """Arg-best tracker over {initial state} plus every epoch end."""

    def __init__(self, higher_better: bool):
        self.higher_better = higher_better
        self.metric: float | None = None
        self.epoch = 0
        self.snap: dict[str, np.ndarray] | None = None

    def consider(self, epoch: int, metric: float,
                 params: dict[str, Parameter]) -> bool:
        better = (self.metric is None
                  or (metric > self.metric if self.higher_better
                      else metric < self.metric))
        if better:
            self.metric = metric
            self.epoch = epoch
            self.snap = _snapshot(params)
        return better


def _valid_score(assembly: ModelAssembly, bundle: D.DatasetBundle) -> E.Score:
    return E.score(assembly, bundle, "valid")


def _run_supervised(assembly: ModelAssembly, bundle: D.DatasetBundle,
                    spec: PhaseSpec, scheduled: dict[str, Parameter],
                    constant: dict[str, Parameter]) -> TrainLog:
    """Minibatch training of one dataset with best-checkpoint retention."""
    name = bundle.schema.name
    x_num, x_cat, y = D.matrices(bundle, "train")
    n = y.shape[0]
    steps_per_epoch = max(1, ceil(n / spec.batch_cap))
    total_steps = max(1, spec.epochs * steps_per_epoch)
    trainable = {**scheduled, **constant}

    opt = AdamW([{"params": list(scheduled.values()), "lr": 0.0},
                 {"params": list(constant.values()), "lr": spec.base_lr}],
                weight_decay=spec.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xba7c4]))
    log = TrainLog(phase=spec.phase, dataset=name)

    first = _valid_score(assembly, bundle)
    best = _Best(first.higher_better)
    best.consider(0, first.value, trainable)

    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, spec.epochs + 1):
        before = _digests(trainable)
        order = rng.permutation(n)
        losses = []
        lr_ds = 0.0
        for lo in range(0, n, spec.batch_cap):
            idx = order[lo:lo + spec.batch_cap]
            step += 1
            lr_ds = lr_at(step, total_steps, spec.base_lr, spec.warmup_frac)
            opt.groups[0]["lr"] = lr_ds
            pred = assembly.forward(name, x_num[idx], x_cat[idx])
            loss = compute_loss(pred, y[idx], bundle.schema.task)
            value = loss.item()
            if not np.isfinite(value):
                log.diverged = True
                _restore(trainable, best.snap)
                log.best_epoch = best.epoch
                log.best_metric = best.metric
                return log
            loss.backward()
            opt.step()
            opt.zero_grad()
            losses.append(value)
        val = _valid_score(assembly, bundle)
        best.consider(epoch, val.value, trainable)
        log.entries.append(LogEntry(
            epoch=epoch, train_loss=float(np.mean(losses)),
            valid_metric=val.value, metric_name=val.metric,
            lr_dataset=lr_ds, lr_shared=spec.base_lr,
            wall_time=time.perf_counter() - t0,
            changed_params=_changed(before, trainable)))
    _restore(trainable, best.snap)
    log.best_epoch = best.epoch
    log.best_metric = best.metric
    return log


def calibrate(assembly: ModelAssembly, bundle: D.DatasetBundle,
              spec: PhaseSpec) -> TrainLog:
    """Train {tokenizer, head, context} plus shared norms; freeze the rest."""
    if assembly.provenance is None:
        raise UsageError("calibration needs a pretrained (or loaded) shared body")
    name = assembly.attach_dataset(bundle.schema.signature())
    part = assembly.partition_parameters(name)
    log = _run_supervised(assembly, bundle, spec,
                          scheduled=part.dataset, constant=part.shared_norm)
    assembly.dataset_phase[name] = "calibrate"
    return log


def refine(assembly: ModelAssembly, bundle: D.DatasetBundle,
           spec: PhaseSpec) -> TrainLog:
    """Short all-parameter fine-tuning after calibration."""
    name = bundle.schema.name
    if assembly.dataset_phase.get(name) != "calibrate":
        raise UsageError(f"refinement requires calibration of {name!r} first")
    part = assembly.partition_parameters(name)
    log = _run_supervised(assembly, bundle, spec,
                          scheduled=part.dataset, constant=part.shared)
    assembly.dataset_phase[name] = "refine"
    return log


def train_from_scratch(assembly: ModelAssembly, bundle: D.DatasetBundle,
                       spec: PhaseSpec) -> TrainLog:
    """Supervised baseline: all parameters trainable on one dataset."""
    name = bundle.schema.name
    if name not in assembly.datasets:
        assembly.attach_dataset(bundle.schema.signature())
    part = assembly.partition_parameters(name)
    log = _run_supervised(assembly, bundle, spec,
                          scheduled=part.dataset, constant=part.shared)
    assembly.dataset_phase[name] = "scratch"
    return log


def pretrain(assembly: ModelAssembly, bundles: list[D.DatasetBundle],
             spec: PhaseSpec, steps_total: int | None = None) -> TrainLog:
    """Cross-table pretraining with uniform per-step dataset sampling.

    ``steps_total`` defaults to spec.epochs * sum_i ceil(rows_i / batch_cap),
    which makes the expected per-dataset epoch count equal spec.epochs for
    same-sized datasets.
    """
    if not bundles:
        raise UsageError("pretraining needs at least one dataset")
    for b in bundles:
        if b.schema.name not in assembly.datasets:
            raise UsageError(f"attach {b.schema.name!r} before pretraining")

    mats = {b.schema.name: D.matrices(b, "train") for b in bundles}
    names = [b.schema.name for b in bundles]
    by_name = {b.schema.name: b for b in bundles}
    steps_per_epoch = sum(ceil(m[2].shape[0] / spec.batch_cap)
                          for m in mats.values())
    total = steps_total if steps_total is not None else spec.epochs * steps_per_epoch
    if total <= 0:
        raise UsageError("pretraining needs a positive step count")
    log_every = max(1, round(total / max(spec.epochs, 1)))

    all_params = assembly.parameters()
    ds_params = {n: p for n, p in all_params.items() if n.startswith("datasets.")}
    shared_params = {n: p for n, p in all_params.items()
                     if not n.startswith("datasets.")}
    opt = AdamW([{"params": list(ds_params.values()), "lr": 0.0},
                 {"params": list(shared_params.values()), "lr": spec.base_lr}],
                weight_decay=spec.weight_decay)

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x9e7a1]))
    cursors = {n: {"order": rng.permutation(mats[n][2].shape[0]), "pos": 0}
               for n in names}

    def next_batch(n: str) -> np.ndarray:
        cur = cursors[n]
        size = mats[n][2].shape[0]
        if cur["pos"] >= size:
            cur["order"] = rng.permutation(size)
            cur["pos"] = 0
        lo = cur["pos"]
        hi = min(lo + spec.batch_cap, size)
        cur["pos"] = hi
        return cur["order"][lo:hi]

    log = TrainLog(phase="pretrain")
    losses: list[float] = []
    good = _snapshot(all_params)
    before = _digests(all_params)
    t0 = time.perf_counter()
    epoch = 0
    lr_ds = 0.0
    for step in range(1, total + 1):
        name = names[int(rng.integers(len(names)))]
        x_num, x_cat, y = mats[name]
        idx = next_batch(name)
        lr_ds = lr_at(step, total, spec.base_lr, spec.warmup_frac)
        opt.groups[0]["lr"] = lr_ds
        pred = assembly.forward(name, x_num[idx], x_cat[idx])
        loss = compute_loss(pred, y[idx], by_name[name].schema.task)
        value = loss.item()
        if not np.isfinite(value):
            log.diverged = True
            _restore(all_params, good)
            break
        loss.backward()
        opt.step()
        opt.zero_grad()
        losses.append(value)
        if step % log_every == 0 or step == total:
            epoch += 1
            window = losses[-log_every:]
            vals = [_valid_score(assembly, by_name[n]).value for n in names]
            log.entries.append(LogEntry(
                epoch=epoch, train_loss=float(np.mean(window)),
                valid_metric=float(np.mean(vals)), metric_name="mean_valid",
                lr_dataset=lr_ds, lr_shared=spec.base_lr,
                wall_time=time.perf_counter() - t0,
                changed_params=_changed(before, all_params)))
            before = _digests(all_params)
            good = _snapshot(all_params)
    assembly.provenance = "pretrain"
    log.best_epoch = epoch
    log.step_losses = losses
    return log
