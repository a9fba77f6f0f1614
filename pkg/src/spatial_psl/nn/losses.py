"""Cross-entropy and the teacher-student distillation objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DistillConfig", "cross_entropy", "distill_loss", "effective_pi"]


@dataclass(frozen=True)
class DistillConfig:
    """Imitation settings.

    Attributes:
        pi: Imitation parameter in [0, 1].
        schedule: ``"fixed"`` uses ``pi`` throughout; ``"ramp"`` uses
            ``min(pi, 1 - pi**t)`` at epoch ``t`` (1-based).
        l2: ``"euclidean"`` (squared distance between probability vectors) or
            ``"cross-entropy"`` against the teacher's soft labels.
        mode: ``"sequential"`` (frozen teacher) or ``"iterative"`` (teacher and
            student alternate epochs).
        teacher_pi: Imitation weight of the teacher's update in iterative mode.
    """

    pi: float = 0.575
    schedule: str = "fixed"
    l2: str = "euclidean"
    mode: str = "sequential"
    teacher_pi: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError("pi must lie in [0, 1]")
        if not 0.0 <= self.teacher_pi <= 1.0:
            raise ValueError("teacher_pi must lie in [0, 1]")
        if self.schedule not in ("fixed", "ramp"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.l2 not in ("euclidean", "cross-entropy"):
            raise ValueError(f"unknown l2 loss {self.l2!r}")
        if self.mode not in ("sequential", "iterative"):
            raise ValueError(f"unknown distillation mode {self.mode!r}")


def effective_pi(config: DistillConfig, epoch: int) -> float:
    """Imitation weight at 1-based ``epoch``."""
    if config.schedule == "fixed":
        return config.pi
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return min(config.pi, 1.0 - config.pi**epoch)


def _onehot(labels, n: int, dtype) -> np.ndarray:
    y = np.zeros((len(labels), n), dtype=dtype)
    y[np.arange(len(labels)), labels] = 1
    return y


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), labels].mean()
    grad = (np.exp(logp) - _onehot(labels, logits.shape[1], logits.dtype)) / B
    return float(loss), grad


def _check_soft(soft: np.ndarray, shape) -> None:
    if soft.shape != shape:
        raise ValueError(f"soft labels have shape {soft.shape}, expected {shape}")
    if np.any(soft < 0) or not np.allclose(soft.sum(axis=1), 1.0, atol=1e-5):
        raise ValueError("soft labels must be probability vectors")


def _soft_term(logits: np.ndarray, soft: np.ndarray, kind: str) -> tuple[float, np.ndarray]:
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    if kind == "cross-entropy":
        loss = -(soft * logp).sum(axis=1).mean()
        return float(loss), (p - soft) / B
    diff = p - soft
    loss = (diff * diff).sum(axis=1).mean()
    u = 2.0 * diff / B
    return float(loss), p * (u - (p * u).sum(axis=1, keepdims=True))


def distill_loss(labels, soft, logits, config: DistillConfig, epoch: int = 1, pi: float | None = None):
    """``(1 - pi_t) * CE(labels, p) + pi_t * l2(soft, p)`` and its logit gradient.

    Args:
        labels: Integer class labels (B,).
        soft: Teacher probability vectors (B, A).
        logits: Student logits (B, A).
        config: Loss and schedule settings.
        epoch: 1-based epoch for the ramp schedule.
        pi: Override for the effective imitation weight.

    Returns:
        ``(loss, dlogits)``.
    """
    logits = np.asarray(logits)
    soft = np.asarray(soft, dtype=logits.dtype)
    _check_soft(soft, logits.shape)
    pi_t = effective_pi(config, epoch) if pi is None else pi
    l1, g1 = cross_entropy(logits, labels)
    if pi_t == 0.0:
        return l1, g1
    l2, g2 = _soft_term(logits, soft, config.l2)
    w1 = logits.dtype.type(1.0 - pi_t)
    w2 = logits.dtype.type(pi_t)
    return float(w1 * l1 + w2 * l2), w1 * g1 + w2 * g2

