"""Dual-encoder: linear projections into a shared space, InfoNCE training.

Clips and captions get separate projections (W_v, b_v) and (W_c, b_c);
segment rows are projected then mean-pooled then L2-normalized, captions
are projected then normalized. Similarity is the dot product of unit
vectors. Training minimizes a symmetric InfoNCE over in-batch negatives
with analytic gradients (no autodiff dependency).

Checkpoint format `.cfp`: magic b"CFP1", uint32-LE d_in, uint32-LE d_out,
float64-LE tau, then W_v (d_out*d_in), b_v (d_out), W_c (d_out*d_in),
b_c (d_out) as float32-LE.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ClipAssignment, FeatureStore, clip_features

CKPT_MAGIC = b"CFP1"

_EPS = 1e-12


class NumericError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class EncoderParams:
    W_v: np.ndarray
    b_v: np.ndarray
    W_c: np.ndarray
    b_c: np.ndarray
    tau: float = 0.07

    def __post_init__(self) -> None:
        d_out, d_in = self.W_v.shape
        if self.W_c.shape != (d_out, d_in):
            raise ValueError(f"W_c shape {self.W_c.shape} != W_v shape {self.W_v.shape}")
        if self.b_v.shape != (d_out,) or self.b_c.shape != (d_out,):
            raise ValueError("bias shapes must be (d_out,)")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        for name in ("W_v", "b_v", "W_c", "b_c"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")

    @property
    def d_in(self) -> int:
        return self.W_v.shape[1]

    @property
    def d_out(self) -> int:
        return self.W_v.shape[0]

    @classmethod
    def init_random(
        cls, d_in: int, d_out: int | None = None, tau: float = 0.07,
        rng: np.random.Generator | None = None, dtype=np.float32,
    ) -> "EncoderParams":
        """Uniform [-1/sqrt(d_in), 1/sqrt(d_in)] weights, zero biases."""
        if rng is None:
            rng = np.random.default_rng()
        d_out = d_in if d_out is None else d_out
        bound = 1.0 / np.sqrt(d_in)
        return cls(
            W_v=rng.uniform(-bound, bound, (d_out, d_in)).astype(dtype),
            b_v=np.zeros(d_out, dtype=dtype),
            W_c=rng.uniform(-bound, bound, (d_out, d_in)).astype(dtype),
            b_c=np.zeros(d_out, dtype=dtype),
            tau=tau,
        )

    @classmethod
    def identity(cls, d: int, tau: float = 0.07, dtype=np.float64) -> "EncoderParams":
        """Both projections the identity: embeddings are normalized inputs."""
        eye = np.eye(d, dtype=dtype)
        zero = np.zeros(d, dtype=dtype)
        return cls(W_v=eye.copy(), b_v=zero.copy(), W_c=eye.copy(), b_c=zero.copy(), tau=tau)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            W_v=self.W_v.copy(), b_v=self.b_v.copy(),
            W_c=self.W_c.copy(), b_c=self.b_c.copy(), tau=self.tau,
        )

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(
            W_v=self.W_v.astype(dtype), b_v=self.b_v.astype(dtype),
            W_c=self.W_c.astype(dtype), b_c=self.b_c.astype(dtype), tau=self.tau,
        )

    def equals(self, other: "EncoderParams") -> bool:
        return (
            self.tau == other.tau
            and np.array_equal(self.W_v, other.W_v)
            and np.array_equal(self.b_v, other.b_v)
            and np.array_equal(self.W_c, other.W_c)
            and np.array_equal(self.b_c, other.b_c)
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 10
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd|adam, got {self.optimizer!r}")


def _normalize(z: np.ndarray, what: str) -> np.ndarray:
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norm < _EPS):
        raise ValueError(f"degenerate embedding: zero-norm {what}")
    return z / norm


def embed_clip(params: EncoderParams, seg_feats: np.ndarray) -> np.ndarray:
    """normalize(W_v @ meanpool(seg_feats) + b_v)."""
    seg_feats = np.asarray(seg_feats)
    if seg_feats.ndim != 2 or seg_feats.shape[0] < 1:
        raise ValueError("segment features must be (n_segments >= 1, d_in)")
    pooled = seg_feats.mean(axis=0) @ params.W_v.T + params.b_v
    return _normalize(pooled, "clip")


def embed_caption(params: EncoderParams, cap_feat: np.ndarray) -> np.ndarray:
    """normalize(W_c @ caption + b_c)."""
    return _normalize(np.asarray(cap_feat) @ params.W_c.T + params.b_c, "caption")


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v))


def info_nce(
    params: EncoderParams,
    clip_batch: list[np.ndarray],
    cap_batch: np.ndarray | list[np.ndarray],
    with_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Symmetric InfoNCE over a batch of aligned (clip, caption) pairs.

    L = -(1/2B) * sum_i [ log softmax_row(S/tau)_ii + log softmax_col(S/tau)_ii ]
    where S_ij = <clip_i, caption_j> on unit embeddings. Returns (loss,
    grads) with grads keyed W_v/b_v/W_c/b_c, or (loss, None) when
    with_grads is False. A batch of one pair has no negatives: loss 0.
    """
    B = len(clip_batch)
    cap_feats = np.asarray(cap_batch)
    if B < 1 or cap_feats.shape[0] != B:
        raise ValueError(f"batch mismatch: {B} clips vs {cap_feats.shape[0]} captions")
    tau = params.tau

    # forward, keeping pre-normalization values for backprop
    means = np.stack([np.asarray(sf).mean(axis=0) for sf in clip_batch])  # (B, d_in)
    pooled = means @ params.W_v.T + params.b_v  # (B, d_out)
    z_c = cap_feats @ params.W_c.T + params.b_c
    norm_v = np.maximum(np.linalg.norm(pooled, axis=1, keepdims=True), _EPS)
    norm_c = np.maximum(np.linalg.norm(z_c, axis=1, keepdims=True), _EPS)
    U = pooled / norm_v
    V = z_c / norm_c
    S = U @ V.T

    A = S / tau
    P = np.exp(A - A.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)  # row softmax: clip i over captions
    Q = np.exp(A - A.max(axis=0, keepdims=True))
    Q /= Q.sum(axis=0, keepdims=True)  # column softmax: caption j over clips

    diag = np.arange(B)
    with np.errstate(divide="ignore"):  # log(0) is caught as NumericError below
        terms = -0.5 / B * (np.log(P[diag, diag]) + np.log(Q[diag, diag]))
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise NumericError(f"non-finite loss contribution at batch index {int(bad[0])}")
    loss = float(terms.sum())
    if not with_grads:
        return loss, None

    dS = (P + Q - 2.0 * np.eye(B)) / (2.0 * B * tau)
    dU = dS @ V
    dV = dS.T @ U
    # through L2 normalization: dz = (g - (g.u)u)/||z||
    d_pooled = (dU - (dU * U).sum(axis=1, keepdims=True) * U) / norm_v
    d_zc = (dV - (dV * V).sum(axis=1, keepdims=True) * V) / norm_c

    grads = {
        "W_v": d_pooled.T @ means,
        "b_v": d_pooled.sum(axis=0),
        "W_c": d_zc.T @ cap_feats,
        "b_c": d_zc.sum(axis=0),
    }
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    return loss, grads


@dataclass
class AdamState:
    """Adam with bias correction; one moment slot per parameter tensor."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: EncoderParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            p = getattr(params, name)
            if name not in self.m:
                self.m[name] = np.zeros_like(p, dtype=np.float64)
                self.v[name] = np.zeros_like(p, dtype=np.float64)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            setattr(params, name, (p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype))


@dataclass
class SGDState:
    lr: float = 1e-2

    def step(self, params: EncoderParams, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            p = getattr(params, name)
            setattr(params, name, (p - self.lr * g).astype(p.dtype))


def make_optimizer(cfg: TrainConfig) -> AdamState | SGDState:
    if cfg.optimizer == "sgd":
        return SGDState(lr=cfg.learning_rate)
    return AdamState(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def train_epoch(
    params: EncoderParams,
    store: FeatureStore,
    clips: ClipAssignment,
    cfg: TrainConfig,
    rng: np.random.Generator,
    optimizer: AdamState | SGDState | None = None,
) -> tuple[EncoderParams, float]:
    """One shuffled pass over the assigned clips; params updated in place.

    A trailing partial batch is dropped only when it would hold a single
    pair (no negative to contrast against). Pass `optimizer` to keep
    moment state across epochs. Returns (params, mean batch loss).
    """
    caption_ids = sorted(clips)
    if not caption_ids:
        return params, 0.0
    if optimizer is None:
        optimizer = make_optimizer(cfg)
    order = rng.permutation(len(caption_ids))
    losses = []
    for lo in range(0, len(order), cfg.batch_size):
        idx = order[lo:lo + cfg.batch_size]
        if idx.size < 2:
            continue
        batch_ids = [caption_ids[i] for i in idx]
        clip_feats = [clip_features(store, clips[cid]) for cid in batch_ids]
        cap_feats = np.stack([store.caption_features[cid] for cid in batch_ids])
        loss, grads = info_nce(params, clip_feats, cap_feats, with_grads=True)
        optimizer.step(params, grads)
        losses.append(loss)
    return params, float(np.mean(losses)) if losses else 0.0


def save_checkpoint(path: str | Path, params: EncoderParams) -> None:
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IId", params.d_in, params.d_out, params.tau))
        for arr in (params.W_v, params.b_v, params.W_c, params.b_c):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> EncoderParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic bytes {raw[:4]!r}, expected {CKPT_MAGIC!r}")
    d_in, d_out, tau = struct.unpack("<IId", raw[4:20])
    sizes = [d_out * d_in, d_out, d_out * d_in, d_out]
    expect = 20 + 4 * sum(sizes)
    if len(raw) != expect:
        raise ValueError(f"{path}: expected {expect} bytes, got {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4", offset=20)
    arrs, cursor = [], 0
    for size in sizes:
        arrs.append(flat[cursor:cursor + size].copy())
        cursor += size
    return EncoderParams(
        W_v=arrs[0].reshape(d_out, d_in), b_v=arrs[1],
        W_c=arrs[2].reshape(d_out, d_in), b_c=arrs[3], tau=tau,
    )
