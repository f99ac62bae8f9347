"""Contrastive time-series encoder (TS2Vec-style) in plain numpy.

Architecture: a per-timestep linear projection 9 -> H, three residual blocks of
dilated causal convolution (kernel 3, dilations 1, 2, 4) with GELU, then a
linear projection H -> D. Per-timestep representations are max-pooled over
time to give a window embedding.

Training uses two overlapping crops of a 32-frame context, random timestamp
masking, the hierarchical temporal + instance contrastive loss and Adam. All
gradients are derived by hand; ``tests/test_encoder.py`` checks them against
central finite differences.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import N_CHANNELS, WINDOW_LEN, Window

MODEL_FORMAT = "magsense-encoder/1"
KERNEL = 3
DILATIONS = (1, 2, 4)
CONTEXT_LEN = 32
_GELU_C = math.sqrt(2.0 / math.pi)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during pretraining."""


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _shift(a: np.ndarray, s: int) -> np.ndarray:
    """a[:, t - s] with zeros for t < s (causal shift along axis 1)."""
    if s == 0:
        return a
    out = np.zeros_like(a)
    if s < a.shape[1]:
        out[:, s:] = a[:, :-s]
    return out


def _unshift(g: np.ndarray, s: int) -> np.ndarray:
    """Adjoint of ``_shift``."""
    if s == 0:
        return g
    out = np.zeros_like(g)
    if s < g.shape[1]:
        out[:, :-s] = g[:, s:]
    return out


@dataclass(eq=False)
class EncoderModel:
    params: dict[str, np.ndarray]
    hidden: int = 32
    embed_dim: int = 64
    dilations: tuple[int, ...] = DILATIONS
    version: str = MODEL_FORMAT

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 32, embed_dim: int = 64,
             dilations: Sequence[int] = DILATIONS) -> "EncoderModel":
        rng = np.random.default_rng(seed)
        p = {
            "W_in": rng.normal(0.0, 1.0 / math.sqrt(N_CHANNELS), (N_CHANNELS, hidden)),
            "b_in": np.zeros(hidden),
        }
        for i, _ in enumerate(dilations):
            p[f"W_conv{i}"] = rng.normal(0.0, 0.5 / math.sqrt(KERNEL * hidden), (KERNEL, hidden, hidden))
            p[f"b_conv{i}"] = np.zeros(hidden)
        p["W_out"] = rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, embed_dim))
        p["b_out"] = np.zeros(embed_dim)
        return cls(p, hidden, embed_dim, tuple(dilations))

    def __post_init__(self) -> None:
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"parameter {name} has non-finite values")

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "EncoderModel":
        return EncoderModel({k: v.copy() for k, v in self.params.items()}, self.hidden,
                            self.embed_dim, self.dilations, self.version)

    # -- forward / backward ---------------------------------------------------

    def forward(self, x: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
        """Per-timestep representations (B, T, D) for input (B, T, 9).

        ``mask`` (B, T) zeroes whole timesteps after the input projection.
        Returns the output and a cache for ``backward``.
        """
        p = self.params
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[-1] != N_CHANNELS:
            raise ValueError(f"expected input (B, T, {N_CHANNELS}), got {x.shape}")
        h = x @ p["W_in"] + p["b_in"]
        if mask is not None:
            h = h * mask[..., None]
        cache = {"x": x, "mask": mask, "blocks": []}
        for i, d in enumerate(self.dilations):
            a = gelu(h)
            w = p[f"W_conv{i}"]
            c = p[f"b_conv{i}"] + sum(_shift(a, (KERNEL - 1 - k) * d) @ w[k] for k in range(KERNEL))
            cache["blocks"].append((h, a))
            h = h + c
        cache["h_last"] = h
        z = h @ p["W_out"] + p["b_out"]
        return z, cache

    def backward(self, cache: dict, dz: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        g: dict[str, np.ndarray] = {}
        h = cache["h_last"]
        g["W_out"] = np.einsum("bth,btd->hd", h, dz)
        g["b_out"] = dz.sum(axis=(0, 1))
        dh = dz @ p["W_out"].T
        for i in reversed(range(len(self.dilations))):
            d = self.dilations[i]
            h_in, a = cache["blocks"][i]
            w = p[f"W_conv{i}"]
            g[f"b_conv{i}"] = dh.sum(axis=(0, 1))
            gw = np.empty_like(w)
            da = np.zeros_like(a)
            for k in range(KERNEL):
                s = (KERNEL - 1 - k) * d
                gw[k] = np.einsum("bti,bto->io", _shift(a, s), dh)
                da += _unshift(dh @ w[k].T, s)
            g[f"W_conv{i}"] = gw
            dh = dh + da * gelu_grad(h_in)
        if cache["mask"] is not None:
            dh = dh * cache["mask"][..., None]
        x = cache["x"]
        g["W_in"] = np.einsum("btc,bth->ch", x, dh)
        g["b_in"] = dh.sum(axis=(0, 1))
        return g

    # -- inference --------------------------------------------------------------

    def encode_batch(self, windows: np.ndarray) -> np.ndarray:
        """Embeddings (n, D) for windows (n, T, 9), max-pooled over time."""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        if len(windows) == 0:
            return np.zeros((0, self.embed_dim))
        z, _ = self.forward(windows)
        return z.max(axis=1)

    # -- serialization ------------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        lines = [self.version, f"hidden {self.hidden}", f"embed_dim {self.embed_dim}",
                 "dilations " + " ".join(str(d) for d in self.dilations)]
        for name, v in self.params.items():
            lines.append(f"param {name} " + " ".join(str(s) for s in v.shape))
            lines.append(" ".join(repr(float(x)) for x in v.ravel()))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EncoderModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} model file")
        hidden = int(lines[1].split()[1])
        embed_dim = int(lines[2].split()[1])
        dilations = tuple(int(s) for s in lines[3].split()[1:])
        params = {}
        i = 4
        while i < len(lines):
            head = lines[i].split()
            if not head:
                i += 1
                continue
            if head[0] != "param":
                raise ValueError(f"{path}:{i + 1}: expected a param header")
            shape = tuple(int(s) for s in head[2:])
            vals = np.array([float(s) for s in lines[i + 1].split()])
            params[head[1]] = vals.reshape(shape)
            i += 2
        return cls(params, hidden, embed_dim, dilations)


def encode(model: EncoderModel, w: Window | np.ndarray) -> np.ndarray:
    data = w.data if isinstance(w, Window) else np.asarray(w, dtype=float)
    if data.shape != (WINDOW_LEN, N_CHANNELS):
        raise ValueError(f"expected a {WINDOW_LEN}x{N_CHANNELS} window, got {data.shape}")
    return model.encode_batch(data[None])[0]


# --- contrastive loss -----------------------------------------------------------

def _paired_contrast(z: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Mean InfoNCE over groups: z is (G, 2n, D), row i pairs with row i +/- n.

    Each row's softmax runs over all other rows of its group.
    """
    g_, m, _ = z.shape
    n = m // 2
    sim = z @ z.transpose(0, 2, 1) / temperature
    diag = np.eye(m, dtype=bool)
    sim = np.where(diag, -np.inf, sim)
    mx = sim.max(axis=-1, keepdims=True)
    e = np.exp(sim - mx)
    denom = e.sum(axis=-1, keepdims=True)
    logp = sim - mx - np.log(denom)
    pos = np.r_[np.arange(n, m), np.arange(n)]
    rows = np.arange(m)
    loss = -logp[:, rows, pos].mean()
    # d loss / d sim = (softmax - onehot) / (G * m); sim is symmetric in z
    gs = e / denom
    gs[:, rows, pos] -= 1.0
    gs /= g_ * m
    dz = (gs + gs.transpose(0, 2, 1)) @ z / temperature
    return float(loss), dz


def _instance_term(z1, z2, temperature):
    b = z1.shape[0]
    z = np.concatenate([z1, z2], axis=0).transpose(1, 0, 2)  # (T, 2B, D)
    loss, dz = _paired_contrast(z, temperature)
    dz = dz.transpose(1, 0, 2)
    return loss, dz[:b], dz[b:]


def _temporal_term(z1, z2, temperature):
    t = z1.shape[1]
    z = np.concatenate([z1, z2], axis=1)  # (B, 2T, D)
    loss, dz = _paired_contrast(z, temperature)
    return loss, dz[:, :t], dz[:, t:]


def _maxpool2(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b, t, d = z.shape
    t2 = t // 2
    pairs = z[:, : 2 * t2].reshape(b, t2, 2, d)
    arg = pairs.argmax(axis=2)
    return np.take_along_axis(pairs, arg[:, :, None], axis=2)[:, :, 0], arg


def _maxpool2_backward(g: np.ndarray, arg: np.ndarray, t: int) -> np.ndarray:
    b, t2, d = g.shape
    out = np.zeros((b, t2, 2, d))
    np.put_along_axis(out, arg[:, :, None], g[:, :, None], axis=2)
    full = np.zeros((b, t, d))
    full[:, : 2 * t2] = out.reshape(b, 2 * t2, d)
    return full


def contrastive_loss_and_grad(reprs_a: np.ndarray, reprs_b: np.ndarray, alpha: float = 0.5,
                              temperature: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Hierarchical contrastive loss of two aligned views (B, T, D) and its gradients.

    At each scale the instance term (other windows in the batch are negatives)
    and temporal term (other timestamps of the same window are negatives) are
    mixed with weight ``alpha``; the representations are then max-pooled by 2
    along time. Scales are averaged; at T == 1 only the instance term applies.
    """
    a = np.asarray(reprs_a, dtype=float)
    b = np.asarray(reprs_b, dtype=float)
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError("views must share shape (B, T, D)")
    if a.shape[0] < 2:
        raise ValueError("instance contrast needs a batch of at least 2 windows")
    total = 0.0
    levels = []
    z1, z2 = a, b
    while True:
        t = z1.shape[1]
        l_i, gi1, gi2 = _instance_term(z1, z2, temperature)
        lvl_loss = alpha * l_i
        g1, g2 = alpha * gi1, alpha * gi2
        if t > 1:
            l_t, gt1, gt2 = _temporal_term(z1, z2, temperature)
            lvl_loss += (1.0 - alpha) * l_t
            g1 = g1 + (1.0 - alpha) * gt1
            g2 = g2 + (1.0 - alpha) * gt2
        total += lvl_loss
        if t == 1:
            levels.append((g1, g2, None, None, t))
            break
        p1, arg1 = _maxpool2(z1)
        p2, arg2 = _maxpool2(z2)
        levels.append((g1, g2, arg1, arg2, t))
        z1, z2 = p1, p2
    n_levels = len(levels)
    # backprop through the pooling pyramid, coarsest first
    up1 = up2 = None
    for g1, g2, arg1, arg2, t in reversed(levels):
        if up1 is not None:
            g1 = g1 + _maxpool2_backward(up1, arg1, t)
            g2 = g2 + _maxpool2_backward(up2, arg2, t)
        up1, up2 = g1, g2
    return total / n_levels, up1 / n_levels, up2 / n_levels


def contrastive_loss(reprs_a: np.ndarray, reprs_b: np.ndarray, alpha: float = 0.5,
                     temperature: float = 1.0) -> float:
    return contrastive_loss_and_grad(reprs_a, reprs_b, alpha, temperature)[0]


# --- pretraining ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    temperature: float = 1.0
    alpha: float = 0.5
    hidden: int = 32
    embed_dim: int = 64
    mask_rate: float = 0.1
    context_len: int = CONTEXT_LEN
    context_stride: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def crop_pair_loss(model: EncoderModel, ctx: np.ndarray, a1: int, s: int, b2: int, length: int,
                   mask1: np.ndarray | None, mask2: np.ndarray | None, alpha: float = 0.5,
                   temperature: float = 1.0) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and parameter gradients for one batch of contexts (B, L, 9).

    View 1 is ``ctx[:, a1:s+length]`` and view 2 is ``ctx[:, s:b2]``; they
    overlap on ``[s, s+length)`` and only the overlap enters the loss.
    """
    x1 = ctx[:, a1:s + length]
    x2 = ctx[:, s:b2]
    z1, c1 = model.forward(x1, mask1)
    z2, c2 = model.forward(x2, mask2)
    off = s - a1
    r1 = z1[:, off:off + length]
    r2 = z2[:, :length]
    loss, g1, g2 = contrastive_loss_and_grad(r1, r2, alpha, temperature)
    dz1 = np.zeros_like(z1)
    dz1[:, off:off + length] = g1
    dz2 = np.zeros_like(z2)
    dz2[:, :length] = g2
    grads = model.backward(c1, dz1)
    for k, v in model.backward(c2, dz2).items():
        grads[k] += v
    return loss, grads


def sample_crops(rng: np.random.Generator, context_len: int, length: int) -> tuple[int, int, int]:
    s = int(rng.integers(0, context_len - length + 1))
    a1 = int(rng.integers(0, s + 1))
    b2 = int(rng.integers(s + length, context_len + 1))
    return a1, s, b2


def pretrain_arrays(contexts: np.ndarray, cfg: TrainConfig,
                    log=None) -> tuple[EncoderModel, list[float]]:
    """Train on prepared (n, context_len, 9) normalized contexts."""
    contexts = np.asarray(contexts, dtype=float)
    if len(contexts) < 2:
        raise ValueError("need at least two training contexts")
    rng = np.random.default_rng(cfg.seed)
    model = EncoderModel.init(int(rng.integers(2**31)), cfg.hidden, cfg.embed_dim)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[float] = []
    n = len(contexts)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n - 1, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = contexts[idx]
            a1, s, b2 = sample_crops(rng, batch.shape[1], WINDOW_LEN)
            m1 = (rng.random((len(idx), s + WINDOW_LEN - a1)) >= cfg.mask_rate).astype(float)
            m2 = (rng.random((len(idx), b2 - s)) >= cfg.mask_rate).astype(float)
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
                loss, grads = crop_pair_loss(model, batch, a1, s, b2, WINDOW_LEN, m1, m2,
                                             cfg.alpha, cfg.temperature)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, step {opt.step_count + 1}; "
                    f"try a lower learning rate than {cfg.learning_rate:g}")
            opt.step(model.params, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if log is not None:
            log(epoch + 1, history[-1])
    return model, history


def pretrain(corpus, cfg: TrainConfig | None = None, pipeline_cfg=None,
             log=None) -> tuple[EncoderModel, list[float]]:
    """Pretrain on unlabelled recordings (smoothed, background-subtracted, normalized)."""
    from .pipeline import PipelineConfig, pretraining_contexts

    cfg = cfg or TrainConfig()
    contexts = pretraining_contexts(corpus, pipeline_cfg or PipelineConfig(), cfg.context_len,
                                    cfg.context_stride)
    if len(contexts) < 2:
        raise ValueError(f"recordings too short: need at least {cfg.context_len} frames each")
    return pretrain_arrays(contexts, cfg, log)
