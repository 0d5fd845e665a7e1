"""Per-layer hypernetwork that turns a pair of latent vectors into a conv kernel.

For a layer with ``n`` output channels, ``c`` input channels and a ``w x h``
kernel the generator runs three stages:

    V = v_out . v_in^T + B0                      (n, c)
    S[i, j, :] = V[i, j] * W1[i, j, :] + B1[i, j, :]     (n, c, m)
    F[i, j, :] = W2[i, j] @ S[i, j, :] + B2[i, j, :]     (n, c, w*h)

Every stage keeps the (i, j) indexing, so zeroing ``v_out[i]`` (with zero
biases) zeroes the whole output slice ``F[i]`` and zeroing ``v_in[j]``
zeroes ``F[:, j]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .errors import ArgumentError, DimensionError
from .numeric import Tensor

DEFAULT_EMBED_DIM = 8


@dataclass
class HyperParams:
    B0: Tensor
    W1: Tensor
    B1: Tensor
    W2: Tensor
    B2: Tensor

    def __post_init__(self):
        n, c = self.B0.shape
        m = self.W1.shape[-1]
        wh = self.B2.shape[-1]
        expected = {
            "W1": (n, c, m),
            "B1": (n, c, m),
            "W2": (n, c, wh, m),
            "B2": (n, c, wh),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n(self) -> int:
        return self.B0.shape[0]

    @property
    def c(self) -> int:
        return self.B0.shape[1]

    @property
    def m(self) -> int:
        return self.W1.shape[-1]

    @property
    def wh(self) -> int:
        return self.B2.shape[-1]

    def tensors(self) -> list[Tensor]:
        return [self.B0, self.W1, self.B1, self.W2, self.B2]

    def named_tensors(self) -> dict[str, Tensor]:
        return dict(zip(("B0", "W1", "B1", "W2", "B2"), self.tensors()))

    def size(self) -> int:
        return sum(t.size for t in self.tensors())


def hyper_param_count(n: int, c: int, w: int, h: int, m: int = DEFAULT_EMBED_DIM) -> int:
    """Number of hypernetwork scalars that generate one n x c x w x h kernel."""
    wh = w * h
    return n * c * (1 + 2 * m + wh * m + wh)


def init_hyper_params(n: int, c: int, w: int, h: int, m: int = DEFAULT_EMBED_DIM, seed=0) -> HyperParams:
    """Zero biases, uniform projection weights.

    W1 has unit variance, W2 is uniform in +-1/sqrt(m*c*w*h); with all-ones
    latents that gives generated kernels a spread of about 0.58/sqrt(c*w*h).
    """
    if min(n, c, w, h, m) <= 0:
        raise ArgumentError("all dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    wh = w * h
    bound = 1.0 / np.sqrt(m * c * wh)
    s3 = np.sqrt(3.0)
    return HyperParams(
        B0=Tensor(np.zeros((n, c)), requires_grad=True),
        W1=Tensor(rng.uniform(-s3, s3, size=(n, c, m)), requires_grad=True),
        B1=Tensor(np.zeros((n, c, m)), requires_grad=True),
        W2=Tensor(rng.uniform(-bound, bound, size=(n, c, wh, m)), requires_grad=True),
        B2=Tensor(np.zeros((n, c, wh)), requires_grad=True),
    )


def latent_matrix(v_l: Tensor, v_prev: Tensor, B0: Tensor) -> Tensor:
    if v_l.ndim != 1 or v_prev.ndim != 1 or B0.shape != (v_l.shape[0], v_prev.shape[0]):
        raise DimensionError(f"latent_matrix: sizes {v_l.shape} x {v_prev.shape} do not match B0 {B0.shape}")
    return nm.outer(v_l, v_prev) + B0


def embed(V: Tensor, W1: Tensor, B1: Tensor) -> Tensor:
    if V.ndim != 2 or W1.shape[:2] != V.shape or W1.shape != B1.shape:
        raise DimensionError(f"embed: V {V.shape}, W1 {W1.shape}, B1 {B1.shape}")
    n, c = V.shape
    m = W1.shape[2]
    spread = nm.broadcast_to(nm.reshape(V, (n, c, 1)), (n, c, m))
    return spread * W1 + B1


def explicit_out(S: Tensor, W2: Tensor, B2: Tensor) -> Tensor:
    if W2.ndim != 4 or W2.shape[:2] != S.shape[:2] or W2.shape[3] != S.shape[2] or B2.shape != W2.shape[:3]:
        raise DimensionError(f"explicit_out: S {S.shape}, W2 {W2.shape}, B2 {B2.shape}")
    return nm.bmv(W2, S) + B2


def _values(v) -> Tensor:
    return v.values if hasattr(v, "values") else v


def generate_weights(v_l, v_prev_effective, params: HyperParams, layer_kind: str = "conv", kernel=None) -> Tensor:
    """Run the three hypernetwork stages and lay the result out as a kernel.

    ``conv`` kernels come out as (n, c, w, h); ``conv_transpose`` kernels are
    generated in the same (n, c) order and stored as (c, n, w, h).
    """
    vl, vp = _values(v_l), _values(v_prev_effective)
    if vp.shape[0] != params.c:
        raise DimensionError(f"input latent has length {vp.shape[0]}, layer expects {params.c} input channels")
    if vl.shape[0] != params.n:
        raise DimensionError(f"output latent has length {vl.shape[0]}, layer expects {params.n} output channels")
    if kernel is None:
        side = int(round(np.sqrt(params.wh)))
        kernel = (side, side)
    kw, kh = kernel
    if kw * kh != params.wh:
        raise DimensionError(f"kernel {kernel} does not hold {params.wh} values")
    V = latent_matrix(vl, vp, params.B0)
    S = embed(V, params.W1, params.B1)
    F = explicit_out(S, params.W2, params.B2)
    weight = nm.reshape(F, (params.n, params.c, kw, kh))
    if layer_kind == "conv":
        return weight
    if layer_kind == "conv_transpose":
        return nm.transpose(weight, (1, 0, 2, 3))
    raise ArgumentError(f"unknown layer kind {layer_kind!r}")


def concat_skip_latents(latents, expected_length: int | None = None) -> Tensor:
    """Join the latents of concatenated branches, in feature-map channel order."""
    parts = [_values(v) for v in latents]
    if len(parts) < 1:
        raise DimensionError("need at least one latent")
    joined = nm.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    if expected_length is not None and joined.shape[0] != expected_length:
        raise DimensionError(f"joined latent has length {joined.shape[0]}, layer expects {expected_length}")
    return joined
