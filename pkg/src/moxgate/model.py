"""Modality-aware cross-attention classifier.

Pipeline per forward pass::

    X_m --encoder_m--> Z_m  (one encoder per modality, no weight sharing)
    [Z_1..Z_M] --cross attention over modality tokens--> F_1..F_M
    sum_i softmax(logits)_i * F_i --classifier--> class probabilities

Parameters live in a flat, ordered ``dict[str, ndarray]``. Each forward pass
wraps them in fresh leaf tensors so the tape is rebuilt every call.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import RngState, ShapeError, Tensor


class ConfigError(ValueError):
    pass


ATTENTION_AXES = ("tokens", "batch")
FUSION_MODES = ("cross_attention", "concat")


@dataclass
class ModelConfig:
    modality_input_dims: list[int]
    num_classes: int
    embed_dim: int = 256
    encoder_heads: int = 8
    cross_heads: int = 32
    encoder_dropout: float = 0.1
    classifier_dropout: float = 0.3
    classifier_hidden_dim: int = 128
    attention_axis: str = "tokens"
    token_count: int = 8
    fusion_mode: str = "cross_attention"
    use_batchnorm: bool = False
    use_skip: bool = False
    use_feedforward_attention: bool = False

    def __post_init__(self):
        self.modality_input_dims = [int(d) for d in self.modality_input_dims]
        self.validate()

    @property
    def num_modalities(self) -> int:
        return len(self.modality_input_dims)

    def validate(self) -> None:
        d = self.embed_dim
        if not self.modality_input_dims or any(n < 1 for n in self.modality_input_dims):
            raise ConfigError("modality_input_dims must be a nonempty list of positive sizes")
        for name in ("num_classes", "embed_dim", "encoder_heads", "cross_heads", "classifier_hidden_dim", "token_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("encoder_dropout", "classifier_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.attention_axis not in ATTENTION_AXES:
            raise ConfigError(f"attention_axis must be one of {ATTENTION_AXES}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        for name in ("encoder_heads", "cross_heads", "token_count"):
            if d % getattr(self, name):
                raise ConfigError(f"embed_dim {d} is not divisible by {name}={getattr(self, name)}")
        if self.attention_axis == "tokens" and (d // self.token_count) % self.encoder_heads:
            raise ConfigError(
                f"token width {d // self.token_count} is not divisible by encoder_heads={self.encoder_heads}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelConfig:
        return cls(**dict(data))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ModelParams:
    """Trainable arrays plus non-trainable batch-norm running statistics."""

    arrays: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, {k: v.copy() for k, v in self.buffers.items()})

    def leaves(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def modality_weights(self) -> np.ndarray:
        if "fusion.logits" not in self.arrays:
            return np.array([])
        return _softmax_np(self.arrays["fusion.logits"])

    def count(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def _softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def init_params(cfg: ModelConfig, rng: RngState) -> ModelParams:
    """Glorot-uniform matrices, zero biases, zero modality logits (uniform weights)."""
    g = rng.generator
    d = cfg.embed_dim
    a: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for m, dm in enumerate(cfg.modality_input_dims):
        p = f"enc{m}."
        a[p + "W"] = glorot(g, dm, d)
        a[p + "b"] = np.zeros(d)
        for name in ("W_Q", "W_K", "W_V"):
            a[p + name] = glorot(g, d, d)
        if cfg.use_batchnorm:
            a[f"bn{m}.gamma"] = np.ones(d)
            a[f"bn{m}.beta"] = np.zeros(d)
            buffers[f"bn{m}.mean"] = np.zeros(d)
            buffers[f"bn{m}.var"] = np.ones(d)
    if cfg.fusion_mode == "cross_attention":
        for name in ("W_Q", "W_K", "W_V"):
            a["cross." + name] = glorot(g, d, d)
        a["fusion.logits"] = np.zeros(cfg.num_modalities)
    else:
        a["concat.P"] = glorot(g, cfg.num_modalities * d, d)
    if cfg.use_feedforward_attention:
        a["ff.W1"] = glorot(g, d, 4 * d)
        a["ff.b1"] = np.zeros(4 * d)
        a["ff.W2"] = glorot(g, 4 * d, d)
        a["ff.b2"] = np.zeros(d)
    h = cfg.classifier_hidden_dim
    a["clf.W1"] = glorot(g, d, h)
    a["clf.b1"] = np.zeros(h)
    a["clf.W2"] = glorot(g, h, cfg.num_classes)
    a["clf.b2"] = np.zeros(cfg.num_classes)
    return ModelParams(a, buffers)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    The last axis (width w) is split into ``heads`` contiguous slices; each
    head uses scale 1/sqrt(w/heads). Heads are concatenated back to width w
    with no output projection.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention: q, k, v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    *lead, L, w = q.shape
    if w % heads:
        raise ConfigError(f"attention width {w} is not divisible by {heads} heads")
    dh = w // heads
    nl = len(lead)
    # [..., L, w] -> [..., heads, L, dh]
    split = (*lead, L, heads, dh)
    perm = (*range(nl), nl + 1, nl, nl + 2)

    def heads_first(x):
        return T.transpose(T.reshape(x, split), perm)

    qh, kh, vh = heads_first(q), heads_first(k), heads_first(v)
    scores = T.mul(T.matmul(qh, T.swap_last(kh)), 1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, vh)
    return T.reshape(T.transpose(out, perm), (*lead, L, w))


def encode_modality(x: Tensor, p: Mapping[str, Tensor], m: int, cfg: ModelConfig, training: bool,
                    rng: RngState | None = None) -> Tensor:
    """H = relu(x W + b); Z = dropout(attention(H W_Q, H W_K, H W_V)) + H."""
    x = T.as_tensor(x)
    pre = f"enc{m}."
    if x.ndim != 2 or x.shape[1] != p[pre + "W"].shape[0]:
        raise ShapeError(f"modality {m}: expected input width {p[pre + 'W'].shape[0]}, got shape {x.shape}")
    h = T.relu(T.add(T.matmul(x, p[pre + "W"]), p[pre + "b"]))
    q, k, v = (T.matmul(h, p[pre + n]) for n in ("W_Q", "W_K", "W_V"))
    n, d = h.shape
    if cfg.attention_axis == "tokens":
        tok = (n, cfg.token_count, d // cfg.token_count)
        att = multihead_attention(T.reshape(q, tok), T.reshape(k, tok), T.reshape(v, tok), cfg.encoder_heads)
        att = T.reshape(att, (n, d))
    else:
        att = multihead_attention(q, k, v, cfg.encoder_heads)
    att = T.dropout(att, cfg.encoder_dropout, rng, training)
    return T.add(att, h)


def batch_norm(z: Tensor, p: Mapping[str, Tensor], buffers: dict[str, np.ndarray] | None, m: int,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    gamma, beta = p[f"bn{m}.gamma"], p[f"bn{m}.beta"]
    if training:
        mu = T.mean(z, axis=0, keepdims=True)
        centred = T.sub(z, mu)
        var = T.mean(T.mul(centred, centred), axis=0, keepdims=True)
        if buffers is not None:
            n = z.shape[0]
            unbiased = var.data[0] * (n / max(n - 1, 1))
            buffers[f"bn{m}.mean"] = (1 - momentum) * buffers[f"bn{m}.mean"] + momentum * mu.data[0]
            buffers[f"bn{m}.var"] = (1 - momentum) * buffers[f"bn{m}.var"] + momentum * unbiased
        normed = T.div(centred, T.sqrt(T.add(var, eps)))
    else:
        if buffers is None:
            raise ConfigError("batch norm in eval mode needs running statistics")
        mu = buffers[f"bn{m}.mean"]
        normed = T.mul(T.sub(z, mu), 1.0 / np.sqrt(buffers[f"bn{m}.var"] + eps))
    return T.add(T.mul(normed, gamma), beta)


def cross_fuse(z: Sequence[Tensor], p: Mapping[str, Tensor], cfg: ModelConfig) -> list[Tensor]:
    """Each sample's M modality vectors attend to one another as M tokens."""
    if not z:
        raise ShapeError("cross_fuse needs at least one modality")
    shape = z[0].shape
    for zi in z:
        if zi.shape != shape:
            raise ShapeError(f"cross_fuse: modality shapes differ: {[t.shape for t in z]}")
    c = T.stack(z, axis=1)  # N x M x d
    q, k, v = (T.matmul(c, p["cross." + n]) for n in ("W_Q", "W_K", "W_V"))
    f = multihead_attention(q, k, v, cfg.cross_heads)
    return [T.take(f, (slice(None), i, slice(None))) for i in range(len(z))]


def modality_weights(logits: Tensor) -> Tensor:
    return T.softmax(logits, axis=-1)


def fuse_weighted(f: Sequence[Tensor], weights: Tensor) -> Tensor:
    if len(f) != weights.shape[0]:
        raise ShapeError(f"fuse_weighted: {len(f)} inputs but {weights.shape[0]} weights")
    out = None
    for i, fi in enumerate(f):
        term = T.mul(fi, T.take(weights, i))
        out = term if out is None else T.add(out, term)
    return out


def fuse_concat(z: Sequence[Tensor], projection: Tensor) -> Tensor:
    shape = z[0].shape
    for zi in z:
        if zi.shape != shape:
            raise ShapeError(f"fuse_concat: modality shapes differ: {[t.shape for t in z]}")
    if projection.shape[0] != len(z) * shape[1]:
        raise ShapeError(f"fuse_concat: projection {projection.shape} does not fit {len(z)} x {shape[1]} inputs")
    return T.matmul(T.concat(z, axis=1), projection)


def feedforward(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Position-wise two-layer block with residual, width 4d."""
    hidden = T.relu(T.add(T.matmul(x, p["ff.W1"]), p["ff.b1"]))
    return T.add(x, T.add(T.matmul(hidden, p["ff.W2"]), p["ff.b2"]))


def classify(f: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig, training: bool,
             rng: RngState | None = None) -> Tensor:
    if f.ndim != 2 or f.shape[1] != p["clf.W1"].shape[0]:
        raise ShapeError(f"classifier expects width {p['clf.W1'].shape[0]}, got shape {f.shape}")
    hidden = T.relu(T.add(T.matmul(f, p["clf.W1"]), p["clf.b1"]))
    hidden = T.dropout(hidden, cfg.classifier_dropout, rng, training)
    logits = T.add(T.matmul(hidden, p["clf.W2"]), p["clf.b2"])
    return T.softmax(logits, axis=-1)


def forward(xs: Sequence, p: Mapping[str, Tensor], cfg: ModelConfig, training: bool,
            rng: RngState | None = None, buffers: dict[str, np.ndarray] | None = None) -> Tensor:
    """Class probabilities, shape N x K."""
    if len(xs) != cfg.num_modalities:
        raise ShapeError(f"expected {cfg.num_modalities} modality arrays, got {len(xs)}")
    xs = [T.as_tensor(x) for x in xs]
    n = xs[0].shape[0]
    for m, x in enumerate(xs):
        if x.ndim != 2 or x.shape != (n, cfg.modality_input_dims[m]):
            raise ShapeError(f"modality {m}: expected ({n}, {cfg.modality_input_dims[m]}), got {x.shape}")
    z = [encode_modality(x, p, m, cfg, training, rng) for m, x in enumerate(xs)]
    if cfg.use_batchnorm:
        z = [batch_norm(zm, p, buffers, m, training) for m, zm in enumerate(z)]
    if cfg.fusion_mode == "cross_attention":
        f = cross_fuse(z, p, cfg)
        if cfg.use_feedforward_attention:
            f = [feedforward(fi, p) for fi in f]
        fused = fuse_weighted(f, modality_weights(p["fusion.logits"]))
    else:
        fused = fuse_concat(z, p["concat.P"])
        if cfg.use_feedforward_attention:
            fused = feedforward(fused, p)
    if cfg.use_skip:
        skip = z[0]
        for zm in z[1:]:
            skip = T.add(skip, zm)
        fused = T.add(fused, T.mul(skip, 1.0 / len(z)))
    return classify(fused, p, cfg, training, rng)


def predict_proba(params: ModelParams, cfg: ModelConfig, xs: Sequence[np.ndarray]) -> np.ndarray:
    leaves = params.leaves(requires_grad=False)
    return forward(xs, leaves, cfg, training=False, buffers=params.buffers).data
