"""Central finite-difference checks of the tape's gradients.

The error for one array is ``max|g_tape - g_fd| / (max|g_fd| + 1e-8)``. Every
op is checked through a random linear read-out of its output so that
gradients of normalised ops (softmax, attention) are not trivially zero.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import model as M
from . import objective as O
from . import tensor as T
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    count: int  # number of scalar entries perturbed

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric)) / (np.max(np.abs(numeric)) + 1e-8))


def numerical_gradients(fn: Callable[[dict[str, np.ndarray]], float], arrays: Mapping[str, np.ndarray],
                        step: float = STEP) -> dict[str, np.ndarray]:
    base = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    out = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn(base)
            flat[i] = orig - step
            down = fn(base)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def analytic_gradients(fn: Callable[[dict[str, Tensor]], Tensor], arrays: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}
    T.backward(fn(leaves))
    return {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in leaves.items()}


def check(name: str, fn: Callable[[dict[str, Tensor]], Tensor], arrays: Mapping[str, np.ndarray],
          step: float = STEP) -> CheckResult:
    """Compare tape and finite-difference gradients of a scalar-valued ``fn``."""
    analytic = analytic_gradients(fn, arrays)
    numeric = numerical_gradients(lambda a: fn({k: Tensor(v) for k, v in a.items()}).item(), arrays, step)
    errors = [relative_error(analytic[k], numeric[k]) for k in arrays]
    return CheckResult(name, max(errors), int(sum(np.size(v) for v in arrays.values())))


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    sign = rng.choice([-1.0, 1.0], size=shape)
    return sign * rng.uniform(margin, 2.0, size=shape)


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-2.0, 2.0, size=shape)  # noqa: E731
    pos = lambda *shape: rng.uniform(0.5, 2.0, size=shape)  # noqa: E731
    results = []

    def op(name, f, **arrays):
        ro = np.random.default_rng(zlib.crc32(name.encode()))
        weights = {}

        def loss(leaves):
            out = f(**leaves)
            if out.data.size == 1:
                return T.tensor_sum(out)
            if "w" not in weights:
                weights["w"] = ro.uniform(-1.0, 1.0, size=out.shape)
            return T.tensor_sum(T.mul(out, weights["w"]))

        results.append(check(name, loss, arrays))

    op("add", lambda a, b: T.add(a, b), a=u(3, 4), b=u(4))
    op("sub", lambda a, b: T.sub(a, b), a=u(3, 4), b=u(3, 1))
    op("mul", lambda a, b: T.mul(a, b), a=u(3, 4), b=u(3, 4))
    op("div", lambda a, b: T.div(a, b), a=u(3, 4), b=pos(4))
    op("power", lambda a: T.power(a, 2.0), a=u(5))
    op("exp", lambda a: T.exp(a), a=u(2, 3))
    op("log", lambda a: T.log(a), a=pos(2, 3))
    op("sqrt", lambda a: T.sqrt(a), a=pos(2, 3))
    op("relu", lambda a: T.relu(a), a=_away_from_zero(rng, (4, 5)))
    op("sum_axis", lambda a: T.tensor_sum(a, axis=1), a=u(3, 4))
    op("mean_keepdims", lambda a: T.mean(a, axis=0, keepdims=True), a=u(3, 4))
    op("reshape", lambda a: T.reshape(a, (2, 6)), a=u(3, 4))
    op("transpose", lambda a: T.transpose(a, (2, 0, 1)), a=u(2, 3, 4))
    op("take", lambda a: T.take(a, (slice(None), 1)), a=u(3, 4))
    op("concat", lambda a, b: T.concat([a, b], axis=1), a=u(2, 3), b=u(2, 2))
    op("stack", lambda a, b: T.stack([a, b], axis=1), a=u(2, 3), b=u(2, 3))
    op("matmul", lambda a, b: T.matmul(a, b), a=u(3, 4), b=u(4, 2))
    op("matmul_batched", lambda a, b: T.matmul(a, b), a=u(2, 3, 4), b=u(4, 5))
    op("softmax_rows", lambda a: T.softmax_rows(a), a=u(3, 5))
    op("multihead_attention", lambda q, k, v: M.multihead_attention(q, k, v, 2), q=u(2, 3, 4), k=u(2, 3, 4),
       v=u(2, 3, 4))
    op("fuse_weighted", lambda a, b, c, z: M.fuse_weighted([a, b, c], T.softmax(z)), a=u(2, 4), b=u(2, 4),
       c=u(2, 4), z=u(3))
    op("fuse_concat", lambda a, b, p: M.fuse_concat([a, b], p), a=u(2, 3), b=u(2, 3), p=u(6, 3))
    targets = np.array([0, 2, 1])
    op("focal_loss", lambda z: O.focal_loss(T.softmax(z), targets), z=u(3, 3))
    op("focal_loss_gamma0", lambda z: O.focal_loss(T.softmax(z), targets, O.FocalLossConfig(gamma=0.0)), z=u(3, 3))
    op("weight_balance_penalty", lambda z: O.weight_balance_penalty(T.softmax(z)), z=u(3))
    op("frobenius_penalty", lambda a, b: O.frobenius_penalty([a, b]), a=u(3, 3), b=u(3, 3))
    return results


def small_model_config(**overrides) -> M.ModelConfig:
    opts = dict(modality_input_dims=[5, 4, 3], num_classes=3, embed_dim=16, encoder_heads=2, cross_heads=2,
                encoder_dropout=0.0, classifier_dropout=0.0, classifier_hidden_dim=8, token_count=4)
    opts.update(overrides)
    return M.ModelConfig(**opts)


MODEL_VARIANTS = {
    "model_cross_attention": {},
    "model_concat": {"fusion_mode": "concat"},
    "model_batch_axis": {"attention_axis": "batch"},
    "model_all_blocks": {"use_batchnorm": True, "use_skip": True, "use_feedforward_attention": True},
}


def model_check(name: str, cfg: M.ModelConfig, seed: int = 0, n: int = 4) -> CheckResult:
    """Gradient of the full regularised objective w.r.t. every parameter."""
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, T.RngState(seed))
    xs = [rng.uniform(-2.0, 2.0, size=(n, d)) for d in cfg.modality_input_dims]
    y = rng.integers(0, cfg.num_classes, size=n)
    arrays = dict(params.arrays)
    # nonzero logits so the balance term has a nontrivial gradient
    if "fusion.logits" in arrays:
        arrays["fusion.logits"] = rng.uniform(-1.0, 1.0, size=arrays["fusion.logits"].shape)
    focal = O.FocalLossConfig()
    reg = O.RegularizerConfig(lambda1=0.1, lambda2=0.01)

    def loss(leaves):
        probs = M.forward(xs, leaves, cfg, training=True, rng=None, buffers=None)
        w = T.softmax(leaves["fusion.logits"]) if "fusion.logits" in leaves else None
        return O.total_loss(probs, y, w, O.fusion_matrices(leaves), focal, reg).total

    return check(name, loss, arrays)


def run_all(seed: int = 0, include_model: bool = True) -> list[CheckResult]:
    results = op_checks(seed)
    if include_model:
        for name, overrides in MODEL_VARIANTS.items():
            results.append(model_check(name, small_model_config(**overrides), seed))
    return results


def report(results: list[CheckResult], elapsed: float | None = None) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}" for r in results]
    worst = max(r.max_rel_error for r in results)
    tail = f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})"
    if elapsed is not None:
        tail += f" in {elapsed:.1f}s"
    return "\n".join(lines + [tail])


def main_check(seed: int = 0) -> tuple[bool, str]:
    t0 = time.perf_counter()
    results = run_all(seed)
    text = report(results, time.perf_counter() - t0)
    return all(r.passed for r in results), text
