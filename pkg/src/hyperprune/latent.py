"""Per-layer latent vectors, their proximal l1 shrinkage, and channel masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError, StateError
from .numeric import Tensor

DEFAULT_TAU = 5e-3


@dataclass
class LatentVector:
    """One trainable scalar per output channel of the owning layer.

    Fixed latents (network input channels and the final image channels) are
    built with ``prunable=False, trainable=False`` and stay at ones.
    """

    layer_id: str
    values: Tensor
    prunable: bool = True

    def __post_init__(self):
        if self.values.ndim != 1:
            raise DimensionError(f"latent {self.layer_id!r} must be a vector, got shape {self.values.shape}")

    @classmethod
    def ones(cls, layer_id: str, n: int, prunable: bool = True, trainable: bool = True) -> "LatentVector":
        return cls(layer_id, Tensor(np.ones(n), requires_grad=trainable), prunable)

    @property
    def trainable(self) -> bool:
        return self.values.requires_grad

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class Mask:
    layer_id: str
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.int8).reshape(-1)
        if not np.isin(self.bits, (0, 1)).all():
            raise ArgumentError("mask bits must be 0 or 1")
        if self.bits.sum() < 1:
            raise ArgumentError(f"mask for {self.layer_id!r} removes every channel")

    @classmethod
    def full(cls, layer_id: str, n: int) -> "Mask":
        return cls(layer_id, np.ones(n, dtype=np.int8))

    @property
    def kept(self) -> int:
        return int(self.bits.sum())

    @property
    def keep_index(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def __len__(self) -> int:
        return self.bits.shape[0]


def soft_threshold(v, t: float):
    """Proximal operator of ``t * ||.||_1``: ``sign(v) * max(|v| - t, 0)``.

    Accepts a Tensor (returns a new constant Tensor) or anything array-like
    (returns an ndarray).
    """
    if t < 0:
        raise ArgumentError(f"threshold must be non-negative, got {t}")
    data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    out = np.sign(data) * np.maximum(np.abs(data) - t, 0.0)
    return Tensor(out) if isinstance(v, Tensor) else out


def proximal_update(v: LatentVector, grad=None, lr: float = 2e-4, lam: float = 0.5) -> None:
    """One proximal-gradient step on ``v`` in place.

    Prunable latents get ``soft_threshold(v - lr*grad, lr*lam)``; the others
    a plain gradient step. ``grad`` defaults to ``v.values.grad`` which is
    cleared afterwards.
    """
    if lr <= 0:
        raise ArgumentError("lr must be positive")
    if lam < 0:
        raise ArgumentError("lambda must be non-negative")
    g = v.values.grad if grad is None else (grad.data if isinstance(grad, Tensor) else np.asarray(grad))
    if g is None:
        raise StateError(f"latent {v.layer_id!r} has no gradient")
    if g.shape != v.values.shape:
        raise DimensionError(f"gradient shape {g.shape} != latent shape {v.values.shape}")
    stepped = v.values.data - lr * g
    if v.prunable:
        stepped = soft_threshold(stepped, lr * lam)
    v.values.data[...] = stepped
    v.values.grad = None


def compute_mask(v: LatentVector, tau: float = DEFAULT_TAU) -> Mask:
    if tau <= 0:
        raise ArgumentError("tau must be positive")
    mag = np.abs(v.values.data)
    if not v.prunable:
        return Mask.full(v.layer_id, len(mag))
    bits = (mag > tau).astype(np.int8)
    if bits.sum() == 0:
        # first index wins on ties, keeps this deterministic
        bits[int(np.argmax(mag))] = 1
    return Mask(v.layer_id, bits)


def compute_masks(latents, tau: float = DEFAULT_TAU) -> dict[str, Mask]:
    items = latents.values() if isinstance(latents, dict) else latents
    return {v.layer_id: compute_mask(v, tau) for v in items}


def sparsity_report(latents, tau: float = DEFAULT_TAU) -> dict[str, tuple[int, int]]:
    return {lid: (m.kept, len(m)) for lid, m in compute_masks(latents, tau).items()}
