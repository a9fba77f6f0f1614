"""Grid-mean region features and question encodings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..matching import apply_mask
from ..questions import ANSWERS, COLORS, TEMPLATES, Vocabulary, encode_question, onehot_index

__all__ = ["QADataset", "encode_questions", "extract_object_features", "N_FEATURES"]

N_FEATURES = 5


def extract_object_features(image: np.ndarray, grid: int = 8, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-cell ``[mean R, mean G, mean B, cx, cy]`` over a ``grid x grid`` partition.

    Colours are scaled to [0, 1]; ``cx``/``cy`` are cell centres divided by the
    image size. Cells are listed row by row. A mask is applied to the image
    first.

    Raises:
        ValueError: ``grid`` does not divide the image size.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] != image.shape[1]:
        raise ValueError("expected a square (S, S, 3) image")
    s = image.shape[0]
    if grid < 1 or s % grid:
        raise ValueError(f"grid {grid} does not divide image size {s}")
    if mask is not None:
        image = apply_mask(image, mask)
    c = s // grid
    means = image.astype(np.float64).reshape(grid, c, grid, c, 3).mean(axis=(1, 3)) / 255.0
    centers = (np.arange(grid) + 0.5) / grid
    cy, cx = np.meshgrid(centers, centers, indexing="ij")
    return np.concatenate([means, cx[..., None], cy[..., None]], axis=-1).reshape(grid * grid, N_FEATURES)


def encode_questions(records, encoding: str = "onehot") -> np.ndarray:
    """Question matrix: anchor-colour x template one-hot, or normalised bag of words."""
    if encoding == "onehot":
        out = np.zeros((len(records), len(COLORS) * len(TEMPLATES)))
        for n, r in enumerate(records):
            out[n, onehot_index(r.slots["color"], r.template)] = 1.0
        return out
    if encoding == "bow":
        rows = [encode_question(r.text, Vocabulary.for_mode(r.mode))[1] for r in records]
        return np.array(rows).reshape(len(records), -1)
    raise ValueError(f"unknown question encoding {encoding!r}")


@dataclass
class QADataset:
    """Aligned arrays for training: features (N, R, F), questions (N, Q), labels (N,)."""

    X: np.ndarray
    Q: np.ndarray
    y: np.ndarray
    keys: list[tuple[str, int]]

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape[0] != n or self.Q.shape[0] != n or len(self.keys) != n:
            raise ValueError("dataset arrays are not aligned")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> QADataset:
        idx = np.asarray(idx)
        return QADataset(self.X[idx], self.Q[idx], self.y[idx], [self.keys[i] for i in idx])

    @classmethod
    def build(cls, scenes, questions, images, grid: int = 8, masks=None, encoding: str = "onehot", dtype=np.float32):
        """Assemble a dataset.

        Args:
            scenes: Mapping scene id -> Scene (unused beyond lookup checks).
            questions: Question records, in dataset order.
            images: Mapping scene id -> rendered image.
            grid: Feature grid size.
            masks: Optional mapping ``(scene_id, q_index)`` -> mask grid; each
                question then sees its own masked image.
            encoding: ``"onehot"`` or ``"bow"``.
        """
        feats_cache: dict[str, np.ndarray] = {}
        X = np.empty((len(questions), grid * grid, N_FEATURES))
        for n, q in enumerate(questions):
            if q.scene_id not in scenes:
                raise KeyError(f"question refers to unknown scene {q.scene_id!r}")
            if masks is not None:
                X[n] = extract_object_features(images[q.scene_id], grid, masks[(q.scene_id, q.q_index)])
            else:
                if q.scene_id not in feats_cache:
                    feats_cache[q.scene_id] = extract_object_features(images[q.scene_id], grid)
                X[n] = feats_cache[q.scene_id]
        Q = encode_questions(questions, encoding)
        y = np.array([ANSWERS.index(q.answer) for q in questions], dtype=np.int64)
        keys = [(q.scene_id, q.q_index) for q in questions]
        return cls(X.astype(dtype), Q.astype(dtype), y, keys)
