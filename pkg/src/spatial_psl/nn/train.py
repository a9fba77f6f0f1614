"""Training loops for baseline, teacher and student variants, plus gradient checking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import QADataset
from .losses import DistillConfig, cross_entropy, distill_loss
from .model import RNModel, backward, forward, softmax
from .optim import SGD, Adam

__all__ = [
    "VARIANTS",
    "TrainConfig",
    "accuracy",
    "grad_check",
    "predict",
    "read_trace",
    "train",
    "write_trace",
]

VARIANTS = ("baseline", "teacher-external-mask", "teacher-attention", "student")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 50
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        return Adam(self.lr) if self.optimizer == "adam" else SGD(self.lr)


def predict(model: RNModel, data: QADataset, batch_size: int = 256) -> np.ndarray:
    """Logits for the whole dataset."""
    out = []
    for start in range(0, len(data), batch_size):
        logits, _ = forward(model, data.X[start : start + batch_size], data.Q[start : start + batch_size])
        out.append(logits)
    if not out:
        return np.zeros((0, model.spec.n_answers), dtype=model.dtype)
    return np.concatenate(out)


def accuracy(model: RNModel, data: QADataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float((predict(model, data).argmax(axis=1) == data.y).mean())


def _soft_labels(model: RNModel, data: QADataset) -> np.ndarray:
    return softmax(predict(model, data), axis=1)


def _epoch(model, data, config, opt, perm, soft=None, distill=None, epoch=1, pi=None):
    """One pass over ``data`` in ``perm`` order; returns (accuracy, mean loss) seen during training."""
    correct = 0
    total_loss = 0.0
    for start in range(0, len(perm), config.batch_size):
        idx = perm[start : start + config.batch_size]
        logits, cache = forward(model, data.X[idx], data.Q[idx])
        if soft is None:
            loss, dlogits = cross_entropy(logits, data.y[idx])
        else:
            loss, dlogits = distill_loss(data.y[idx], soft[idx], logits, distill, epoch, pi=pi)
        correct += int((logits.argmax(axis=1) == data.y[idx]).sum())
        total_loss += loss * len(idx)
        opt.step(model.params, backward(model, cache, dlogits))
    return correct / len(perm), total_loss / len(perm)


def train(
    model: RNModel,
    data: QADataset,
    config: TrainConfig,
    variant: str = "baseline",
    val: QADataset | None = None,
    distill: DistillConfig | None = None,
    teacher: RNModel | None = None,
    teacher_data: QADataset | None = None,
    log=None,
):
    """Train ``model`` in place and return ``(model, trace)``.

    Baseline and teacher variants minimise cross-entropy on ``data`` (a
    teacher-external-mask run simply receives masked features). The student
    variant minimises the distillation loss against the teacher's soft
    predictions on ``teacher_data``, which must be aligned with ``data``. In
    iterative mode odd epochs update the student and even epochs update the
    teacher, which then imitates the student with weight ``teacher_pi``.

    The trace holds one ``{"epoch", "split", "accuracy", "loss"}`` row per
    split and epoch. Runs are deterministic given the seed.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if len(data) == 0:
        raise ValueError("empty training set")
    if variant == "teacher-attention" and not model.spec.attention:
        raise ValueError("teacher-attention needs a model with attention parameters")
    if variant == "student":
        if teacher is None or teacher_data is None:
            raise ValueError("student training needs a teacher and the teacher's view of the data")
        if teacher.spec.n_answers != model.spec.n_answers or teacher.spec.n_question != model.spec.n_question:
            raise ValueError("teacher and student vocabularies differ")
        if len(teacher_data) != len(data) or teacher_data.keys != data.keys:
            raise ValueError("teacher data is not aligned with the student data")
        distill = distill or DistillConfig()
    rng = np.random.default_rng(config.seed)
    opt = config.make_optimizer()
    teacher_opt = config.make_optimizer() if variant == "student" and distill.mode == "iterative" else None
    soft = _soft_labels(teacher, teacher_data) if variant == "student" else None
    trace = []
    acc = loss = float("nan")
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(data))
        if variant != "student":
            acc, loss = _epoch(model, data, config, opt, perm)
        elif distill.mode == "sequential" or epoch % 2 == 1:
            if distill.mode == "iterative":
                soft = _soft_labels(teacher, teacher_data)
            acc, loss = _epoch(model, data, config, opt, perm, soft, distill, epoch)
        else:
            student_soft = _soft_labels(model, data)
            _epoch(teacher, teacher_data, config, teacher_opt, perm, student_soft, distill, epoch, pi=distill.teacher_pi)
            # the student did not move this epoch; repeat its last numbers
        trace.append({"epoch": epoch, "split": "train", "accuracy": acc, "loss": loss})
        if val is not None and len(val):
            logits = predict(model, val)
            val_loss, _ = cross_entropy(logits, val.y)
            val_acc = float((logits.argmax(axis=1) == val.y).mean())
            trace.append({"epoch": epoch, "split": "val", "accuracy": val_acc, "loss": val_loss})
        if log is not None:
            log(trace[-1] if val is None else trace[-2:])
    return model, trace


def write_trace(path, trace) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "split", "accuracy", "loss"])
        for row in trace:
            w.writerow([row["epoch"], row["split"], repr(float(row["accuracy"])), repr(float(row["loss"]))])
    return path


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if rows and set(rows[0]) != {"epoch", "split", "accuracy", "loss"}:
        raise ValueError(f"{path}: not a metrics trace")
    return [
        {"epoch": int(r["epoch"]), "split": r["split"], "accuracy": float(r["accuracy"]), "loss": float(r["loss"])}
        for r in rows
    ]


def grad_check(model: RNModel, X, Q, y, soft=None, distill: DistillConfig | None = None, h: float = 1e-5):
    """Largest relative error between analytic and central-difference gradients.

    Runs in float64 on a copy of ``model``. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, 1e-6)``, so entries whose gradient is below 1e-6
    are compared in absolute terms.

    Returns:
        ``(max_error, worst_parameter_name)``.
    """
    m = model.astype(np.float64)
    X = np.asarray(X, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)

    def loss_and_grad():
        logits, cache = forward(m, X, Q)
        if soft is None:
            loss, dl = cross_entropy(logits, y)
        else:
            loss, dl = distill_loss(y, soft, logits, distill or DistillConfig())
        return loss, cache, dl

    _, cache, dl = loss_and_grad()
    grads = backward(m, cache, dl)
    worst, worst_name = 0.0, ""
    for name, p in m.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_and_grad()[0]
            flat[i] = old - h
            lm = loss_and_grad()[0]
            flat[i] = old
            num = (lp - lm) / (2 * h)
            err = abs(g[i] - num) / max(abs(g[i]), abs(num), 1e-6)
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return worst, worst_name
