"""Relation network with optional in-network attention, with manual gradients.

The relational module computes ``f(sum_{i,j} g([o_i; o_j; q]))`` over all
ordered region pairs. The attention variant first reweights regions by
``alpha = softmax(tanh(W_I flatten(r) + W_q q + b))``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ModelSpec",
    "RNModel",
    "attention_forward",
    "backward",
    "forward",
    "load_checkpoint",
    "rn_forward",
    "save_checkpoint",
    "softmax",
]

CHECKPOINT_MAGIC = b"SPATIAL-PSL-CKPT 1\n"


@dataclass(frozen=True)
class ModelSpec:
    """Layer sizes.

    Attributes:
        n_features: Per-region feature length F.
        n_regions: Number of regions R (fixes the attention layer shapes).
        n_question: Length of the question encoding fed to the embedding.
        n_answers: Answer vocabulary size.
        embed_dim: Question embedding size d.
        g_widths: Widths of the four g layers.
        f_widths: Hidden widths of f; a final layer maps to ``n_answers``.
        attention: Whether the model has attention parameters.
    """

    n_features: int
    n_regions: int
    n_question: int
    n_answers: int
    embed_dim: int = 32
    g_widths: tuple[int, ...] = (64, 64, 64, 64)
    f_widths: tuple[int, ...] = (64, 64, 32)
    attention: bool = False

    def __post_init__(self):
        for name in ("n_features", "n_regions", "n_question", "n_answers", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.g_widths or min(self.g_widths) < 1 or min(self.f_widths, default=1) < 1:
            raise ValueError("layer widths must be >= 1")
        object.__setattr__(self, "g_widths", tuple(self.g_widths))
        object.__setattr__(self, "f_widths", tuple(self.f_widths))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in canonical order."""
        out: dict[str, tuple[int, ...]] = {"embed": (self.n_question, self.embed_dim)}
        prev = 2 * self.n_features + self.embed_dim
        for k, w in enumerate(self.g_widths):
            out[f"g.{k}.W"] = (prev, w)
            out[f"g.{k}.b"] = (w,)
            prev = w
        for k, w in enumerate(self.f_widths + (self.n_answers,)):
            out[f"f.{k}.W"] = (prev, w)
            out[f"f.{k}.b"] = (w,)
            prev = w
        if self.attention:
            out["att.W_I"] = (self.n_regions * self.n_features, self.n_regions)
            out["att.W_q"] = (self.embed_dim, self.n_regions)
            out["att.b"] = (self.n_regions,)
        return out


class RNModel:
    """Parameter container; ``params`` maps names to arrays of ``dtype``.

    ``input_shift`` and ``input_scale`` hold a fixed per-feature
    standardisation ``(x - shift) * scale`` applied to region features before
    anything else. They are not trained; the identity is the default and
    :meth:`fit_inputs` sets them from training features.
    """

    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray], input_shift=None, input_scale=None):
        shapes = spec.shapes()
        if list(params) != list(shapes):
            raise ValueError("parameter names do not match the model spec")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} does not chain, expected {shape}")
        self.spec = spec
        self.params = params
        F = spec.n_features
        self.input_shift = np.zeros(F) if input_shift is None else np.asarray(input_shift, dtype=np.float64)
        self.input_scale = np.ones(F) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        if self.input_shift.shape != (F,) or self.input_scale.shape != (F,):
            raise ValueError(f"input standardisation must have {F} entries")

    @classmethod
    def init(cls, spec: ModelSpec, seed: int, dtype=np.float32) -> RNModel:
        """He-uniform weights, zero biases; the embedding is N(0, 1).

        The first layer of f is further scaled by ``1 / n_regions**2`` because
        it receives a sum over all region pairs.
        """
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in spec.shapes().items():
            if name == "embed":
                arr = rng.standard_normal(shape)
            elif len(shape) == 1:
                arr = np.zeros(shape)
            else:
                bound = np.sqrt(6.0 / shape[0])
                if name == "f.0.W":
                    bound /= spec.n_regions**2
                arr = rng.uniform(-bound, bound, size=shape)
            params[name] = arr.astype(dtype)
        return cls(spec, params)

    @property
    def dtype(self):
        return self.params["embed"].dtype

    def astype(self, dtype) -> RNModel:
        return RNModel(self.spec, {k: v.astype(dtype) for k, v in self.params.items()}, self.input_shift, self.input_scale)

    def copy(self) -> RNModel:
        return RNModel(
            self.spec, {k: v.copy() for k, v in self.params.items()}, self.input_shift.copy(), self.input_scale.copy()
        )

    def fit_inputs(self, X) -> RNModel:
        """Set the input standardisation to the per-feature mean and 1/std of ``X`` (N, R, F).

        Constant features keep scale 1.
        """
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.spec.n_features)
        if len(X) == 0:
            raise ValueError("cannot fit the input standardisation on no data")
        sd = X.std(axis=0)
        self.input_shift = X.mean(axis=0)
        self.input_scale = np.where(sd > 1e-8, 1.0 / np.maximum(sd, 1e-8), 1.0)
        return self

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=self.dtype)
        if not self.input_shift.any() and (self.input_scale == 1).all():
            return X
        return (X - self.input_shift.astype(self.dtype)) * self.input_scale.astype(self.dtype)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(v))) for v in self.params.values())


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _check_inputs(model: RNModel, X, Q):
    s = model.spec
    if X.ndim != 3 or X.shape[2] != s.n_features or X.shape[1] < 1:
        raise ValueError(f"features must have shape (B, R, {s.n_features}) with R >= 1, got {X.shape}")
    if Q.ndim != 2 or Q.shape[1] != s.n_question or Q.shape[0] != X.shape[0]:
        raise ValueError(f"question encoding must have shape ({X.shape[0]}, {s.n_question}), got {Q.shape}")
    if s.attention and X.shape[1] != s.n_regions:
        raise ValueError(f"attention model expects {s.n_regions} regions, got {X.shape[1]}")


def _attend(model: RNModel, X, q):
    p = model.params
    B, R, F = X.shape
    v = np.tanh(X.reshape(B, R * F) @ p["att.W_I"] + q @ p["att.W_q"] + p["att.b"])
    alpha = softmax(v)
    return v, alpha, alpha[:, :, None] * X


def attention_forward(X, q_emb, model: RNModel):
    """Attention weights ``alpha`` (B, R) and attended features ``alpha_r * r``."""
    X = np.asarray(X, dtype=model.dtype)
    q_emb = np.asarray(q_emb, dtype=model.dtype)
    if not model.spec.attention:
        raise ValueError("model has no attention parameters")
    if X.ndim != 3 or X.shape[1:] != (model.spec.n_regions, model.spec.n_features):
        raise ValueError(f"features must have shape (B, {model.spec.n_regions}, {model.spec.n_features})")
    if q_emb.shape != (X.shape[0], model.spec.embed_dim):
        raise ValueError(f"question embedding must have shape ({X.shape[0]}, {model.spec.embed_dim})")
    _, alpha, attended = _attend(model, model.standardize(X), q_emb)
    return alpha, attended


def forward(model: RNModel, X, Q, attention: bool | None = None):
    """Logits (B, A) and the cache needed by :func:`backward`.

    Args:
        X: Region features (B, R, F).
        Q: Question encodings (B, n_question).
        attention: Reweight regions first; defaults to ``model.spec.attention``.
    """
    X = np.asarray(X, dtype=model.dtype)
    Q = np.asarray(Q, dtype=model.dtype)
    _check_inputs(model, X, Q)
    X = model.standardize(X)
    attention = model.spec.attention if attention is None else attention
    q = Q @ model.params["embed"]
    cache = {"X": X, "Q": Q, "q": q, "attention": attention}
    if attention:
        v, alpha, Xa = _attend(model, X, q)
        cache.update(v=v, alpha=alpha)
    else:
        Xa = X
    cache["Xa"] = Xa
    return _relational(model, Xa, q, cache), cache


def _relational(model: RNModel, Xa, q, cache: dict) -> np.ndarray:
    p = model.params
    s = model.spec
    F = s.n_features
    W0 = p["g.0.W"]
    # the first layer splits over [o_i; o_j; q] so it runs per region, not per pair
    a = Xa @ W0[:F]
    c = Xa @ W0[F : 2 * F]
    e = q @ W0[2 * F :] + p["g.0.b"]
    B, R, H = a.shape
    z = a[:, :, None, :] + c[:, None, :, :] + e[:, None, None, :]
    h = np.maximum(z, 0, out=z).reshape(B * R * R, H)
    g_out = [h]
    for k in range(1, len(s.g_widths)):
        # 2-D matmuls over all pairs are markedly faster than batched 4-D ones
        h = h @ p[f"g.{k}.W"]
        h += p[f"g.{k}.b"]
        np.maximum(h, 0, out=h)
        g_out.append(h)
    cache["g"] = g_out
    cache["shape"] = (B, R)
    x = h.reshape(B, R * R, -1).sum(axis=1)
    f_in = []
    n_f = len(s.f_widths) + 1
    for k in range(n_f):
        f_in.append(x)
        x = x @ p[f"f.{k}.W"] + p[f"f.{k}.b"]
        if k < n_f - 1:
            x = np.maximum(x, 0)
    cache["f"] = f_in
    return x


def rn_forward(X, q_emb, model: RNModel) -> np.ndarray:
    """Logits of the relational module for features (B, R, F) and embeddings (B, d)."""
    X = np.asarray(X, dtype=model.dtype)
    q_emb = np.asarray(q_emb, dtype=model.dtype)
    s = model.spec
    if X.ndim != 3 or X.shape[2] != s.n_features or X.shape[1] < 1:
        raise ValueError(f"features must have shape (B, R, {s.n_features}) with R >= 1, got {X.shape}")
    if q_emb.shape != (X.shape[0], s.embed_dim):
        raise ValueError(f"question embedding must have shape ({X.shape[0]}, {s.embed_dim}), got {q_emb.shape}")
    return _relational(model, model.standardize(X), q_emb, {})


def backward(model: RNModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every parameter given the loss gradient w.r.t. the logits.

    Raises:
        FloatingPointError: a gradient is not finite; the message names the parameter.
    """
    p = model.params
    s = model.spec
    F = s.n_features
    grads: dict[str, np.ndarray] = {}
    dx = np.asarray(dlogits, dtype=model.dtype)
    n_f = len(s.f_widths) + 1
    for k in reversed(range(n_f)):
        x_in = cache["f"][k]
        if k < n_f - 1:
            dx = dx * (cache["f"][k + 1] > 0)
        grads[f"f.{k}.W"] = x_in.T @ dx
        grads[f"f.{k}.b"] = dx.sum(0)
        dx = dx @ p[f"f.{k}.W"].T
    g_out = cache["g"]
    B, R = cache["shape"]
    n_pairs = R * R
    dh = np.broadcast_to(dx[:, None, :], (B, n_pairs, dx.shape[1])).reshape(B * n_pairs, -1)
    for k in reversed(range(1, len(s.g_widths))):
        dz = dh * (g_out[k] > 0)
        grads[f"g.{k}.W"] = g_out[k - 1].T @ dz
        grads[f"g.{k}.b"] = dz.sum(0)
        dh = dz @ p[f"g.{k}.W"].T
    dz = (dh * (g_out[0] > 0)).reshape(B, R, R, -1)
    da = dz.sum(axis=2)  # over j: gradient of the o_i block
    dc = dz.sum(axis=1)  # over i: gradient of the o_j block
    de = dz.sum(axis=(1, 2))
    Xa, q = cache["Xa"], cache["q"]
    W0 = p["g.0.W"]
    gW0 = np.empty_like(W0)
    Xf = Xa.reshape(B * R, F)
    gW0[:F] = Xf.T @ da.reshape(B * R, -1)
    gW0[F : 2 * F] = Xf.T @ dc.reshape(B * R, -1)
    gW0[2 * F :] = q.T @ de
    grads["g.0.W"] = gW0
    grads["g.0.b"] = de.sum(0)
    dq = de @ W0[2 * F :].T
    if cache["attention"]:
        X, alpha, v = cache["X"], cache["alpha"], cache["v"]
        dXa = da @ W0[:F].T + dc @ W0[F : 2 * F].T
        dalpha = (dXa * X).sum(-1)
        dv = alpha * (dalpha - (alpha * dalpha).sum(-1, keepdims=True))
        du = dv * (1 - v * v)
        grads["att.W_I"] = X.reshape(B, -1).T @ du
        grads["att.W_q"] = q.T @ du
        grads["att.b"] = du.sum(0)
        dq = dq + du @ p["att.W_q"].T
    elif s.attention:
        for name in ("att.W_I", "att.W_q", "att.b"):
            grads[name] = np.zeros_like(p[name])
    grads["embed"] = cache["Q"].T @ dq
    out = {}
    for name in p:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        out[name] = g.astype(model.dtype, copy=False)
    return out


def save_checkpoint(path, model: RNModel) -> Path:
    """Magic line, one JSON manifest line, then raw little-endian float64 values."""
    path = Path(path)
    manifest = {
        "spec": asdict(model.spec),
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
        "input_shift": [float(x) for x in model.input_shift],
        "input_scale": [float(x) for x in model.input_scale],
    }
    blob = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in model.params.values())
    path.write_bytes(CHECKPOINT_MAGIC + json.dumps(manifest, sort_keys=True).encode() + b"\n" + blob)
    return path


def load_checkpoint(path, dtype=np.float32) -> RNModel:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a model checkpoint")
    rest = data[len(CHECKPOINT_MAGIC) :]
    nl = rest.index(b"\n")
    manifest = json.loads(rest[:nl])
    blob = rest[nl + 1 :]
    spec_d = manifest["spec"]
    spec = ModelSpec(**{**spec_d, "g_widths": tuple(spec_d["g_widths"]), "f_widths": tuple(spec_d["f_widths"])})
    params, offset = {}, 0
    for name, shape in manifest["params"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset * 8).reshape(shape)
        params[name] = arr.astype(dtype)
        offset += n
    if offset * 8 != len(blob):
        raise ValueError(f"{path}: checkpoint size does not match its manifest")
    return RNModel(spec, params, manifest.get("input_shift"), manifest.get("input_scale"))
