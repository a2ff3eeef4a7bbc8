"""Focal loss, the two regularisers, and AdamW."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import ParameterError, ShapeError, Tensor

PROB_FLOOR = 1e-12


@dataclass
class FocalLossConfig:
    alpha: list[float] | None = None  # None means 1 for every class
    gamma: float = 2.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ParameterError("focal gamma must be >= 0")
        if self.alpha is not None:
            self.alpha = [float(a) for a in self.alpha]
            if any(a <= 0 for a in self.alpha):
                raise ParameterError("focal alpha entries must be > 0")

    def alpha_vector(self, k: int) -> np.ndarray:
        if self.alpha is None:
            return np.ones(k)
        if len(self.alpha) != k:
            raise ParameterError(f"alpha has {len(self.alpha)} entries for {k} classes")
        return np.asarray(self.alpha)


@dataclass
class RegularizerConfig:
    # not given in the source material; small enough not to dominate the focal term
    lambda1: float = 1e-3
    lambda2: float = 1e-4

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("regulariser coefficients must be non-negative")


def _check_targets(targets, n: int, k: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.shape != (n,):
        raise ShapeError(f"expected {n} targets, got shape {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise IndexError("targets must be integer class indices")
        t = t.astype(np.int64)
    if t.size and (t.min() < 0 or t.max() >= k):
        raise IndexError(f"target out of range [0, {k}): {t.min()}..{t.max()}")
    return t


def focal_loss(probs: Tensor, targets, cfg: FocalLossConfig | None = None) -> Tensor:
    """Mean over the batch of -alpha_c (1 - p_c)^gamma log p_c for the true class c."""
    cfg = cfg or FocalLossConfig()
    probs = T.as_tensor(probs)
    n, k = probs.shape
    t = _check_targets(targets, n, k)
    p_true = T.clamp(T.take(probs, (np.arange(n), t)), PROB_FLOOR, 1.0)
    alpha = cfg.alpha_vector(k)[t]
    log_p = T.log(p_true)
    if cfg.gamma == 0:
        per_sample = T.mul(log_p, -alpha)
    else:
        factor = T.power(T.sub(1.0, p_true), cfg.gamma)
        per_sample = T.mul(T.mul(factor, log_p), -alpha)
    return T.mean(per_sample)


def weight_balance_penalty(weights: Tensor) -> Tensor:
    """||w - 1||^2 against the all-ones vector.

    On the simplex this equals ||w||^2 + (M - 2), so the minimum is the uniform point.
    """
    diff = T.sub(T.as_tensor(weights), 1.0)
    return T.tensor_sum(T.mul(diff, diff))


def frobenius_penalty(matrices: Sequence[Tensor]) -> Tensor:
    total = Tensor(0.0)
    for w in matrices:
        w = T.as_tensor(w)
        total = T.add(total, T.tensor_sum(T.mul(w, w)))
    return total


def fusion_matrices(p: Mapping[str, Tensor]) -> list[Tensor]:
    """The matrices the Frobenius term covers: the cross-attention trio, or the concat projection."""
    names = [n for n in ("cross.W_Q", "cross.W_K", "cross.W_V") if n in p]
    if not names and "concat.P" in p:
        names = ["concat.P"]
    return [p[n] for n in names]


@dataclass
class LossTerms:
    total: Tensor
    focal: float
    balance: float
    frobenius: float


def total_loss(probs: Tensor, targets, weights: Tensor | None, cross_params: Sequence[Tensor],
               fl: FocalLossConfig | None = None, reg: RegularizerConfig | None = None) -> LossTerms:
    fl = fl or FocalLossConfig()
    reg = reg or RegularizerConfig()
    focal = focal_loss(probs, targets, fl)
    total = focal
    balance = frob = 0.0
    if weights is not None:
        bal = weight_balance_penalty(weights)
        balance = bal.item()
        if reg.lambda1:
            total = T.add(total, T.mul(bal, reg.lambda1))
    if cross_params:
        fro = frobenius_penalty(cross_params)
        frob = fro.item()
        if reg.lambda2:
            total = T.add(total, T.mul(fro, reg.lambda2))
    return LossTerms(total, focal.item(), balance, frob)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

NO_DECAY = ("fusion.logits",)


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        d = asdict(self)
        d.pop("m")
        d.pop("v")
        return d


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update with decoupled weight decay.

    Returns new arrays and a new state; the inputs are left untouched.
    """
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        m = b1 * state.m.get(name, np.zeros_like(theta)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(theta)) + (1.0 - b2) * (g * g)
        out = theta
        if state.weight_decay and name not in NO_DECAY:
            out = out - state.lr * state.weight_decay * theta
        out = out - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params[name], new_m[name], new_v[name] = out, m, v
    new_state = OptimizerState(state.lr, state.weight_decay, b1, b2, state.eps, step, new_m, new_v)
    return new_params, new_state
