"""Running, binding, masking and compacting layer graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numeric as nm
from ..errors import DimensionError, StateError
from ..hypernet import HyperParams, concat_skip_latents, generate_weights, init_hyper_params
from ..latent import LatentVector, Mask
from ..numeric import Tensor
from .spec import NetSpec


class WeightSet(dict):
    """layer id -> {"weight" | "bias" | "gamma" | "beta": Tensor}."""

    def tensors(self) -> list[Tensor]:
        return [t for lid in self for t in self[lid].values()]

    def named(self) -> dict[str, Tensor]:
        return {f"{lid}.{k}": t for lid, entry in self.items() for k, t in entry.items()}

    def leaves(self) -> list[Tensor]:
        return [t for t in self.tensors() if t.is_leaf]

    def detached(self, requires_grad: bool = False) -> "WeightSet":
        return WeightSet(
            {lid: {k: Tensor(t.data.copy(), requires_grad=requires_grad) for k, t in e.items()} for lid, e in self.items()}
        )


# ---------------------------------------------------------------------------
# initialisation


def init_extras(spec: NetSpec) -> WeightSet:
    """Conv biases (zeros) and norm affine params (ones / zeros), all trainable."""
    ws = WeightSet()
    for layer in spec.layers:
        if layer.is_conv and layer.bias:
            ws[layer.id] = {"bias": Tensor(np.zeros(layer.out_channels), requires_grad=True)}
        elif layer.kind == "norm" and layer.affine:
            ws[layer.id] = {
                "gamma": Tensor(np.ones(layer.in_channels), requires_grad=True),
                "beta": Tensor(np.zeros(layer.in_channels), requires_grad=True),
            }
    return ws


def init_weights(spec: NetSpec, seed=0, std: float = 0.02) -> WeightSet:
    """Ordinary (non-generated) weights: N(0, std) kernels plus :func:`init_extras`."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ws = init_extras(spec)
    for layer in spec.conv_layers():
        ws.setdefault(layer.id, {})["weight"] = Tensor(rng.normal(0.0, std, size=layer.weight_shape), requires_grad=True)
    return ws


def init_latents(spec: NetSpec) -> dict[str, LatentVector]:
    """All-ones latents; the input latent and non-prunable ones are frozen."""
    out = {}
    for lid, (n, prunable) in spec.latent_table().items():
        out[lid] = LatentVector.ones(lid, n, prunable=prunable, trainable=prunable)
    return out


def init_hyper(spec: NetSpec, m: int = 8, seed=0) -> dict[str, HyperParams]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = {}
    for layer in spec.conv_layers():
        out[layer.id] = init_hyper_params(layer.out_channels, layer.in_channels, layer.kernel, layer.kernel, m, rng)
    return out


# ---------------------------------------------------------------------------
# forward


def _activation(layer, x: Tensor) -> Tensor:
    a = layer.activation
    if a == "relu":
        return nm.relu(x)
    if a == "leaky_relu":
        return nm.leaky_relu(x, layer.alpha)
    if a == "tanh":
        return nm.tanh(x)
    if a == "sigmoid":
        return nm.sigmoid(x)
    return x


def _crop_for_conv(x: Tensor, layer) -> Tensor:
    """Drop trailing rows/cols a strided conv never reaches (floor output size)."""
    _, _, h, w = x.shape
    k, s, p = layer.kernel, layer.stride, layer.pad
    need_h = (h + 2 * p - k) // s * s + k - 2 * p
    need_w = (w + 2 * p - k) // s * s + k - 2 * p
    if need_h == h and need_w == w:
        return x
    return x[:, :, :need_h, :need_w]


def forward(spec: NetSpec, weights: WeightSet, x: Tensor, return_all: bool = False):
    """Evaluate the graph on a batch ``x`` of shape (B, C, H, W)."""
    if x.ndim != 4 or x.shape[1] != spec.input_shape[0]:
        raise DimensionError(f"{spec.name} expects (B, {spec.input_shape[0]}, H, W) input, got {x.shape}")
    values: dict[str, Tensor] = {}
    for layer in spec.layers:
        if layer.kind == "input":
            values[layer.id] = x
            continue
        src = values[layer.inputs[0]]
        entry = weights.get(layer.id, {})
        if layer.is_conv:
            if "weight" not in entry:
                raise StateError(f"layer {layer.id!r} has no bound weight")
            bias = entry.get("bias") if layer.bias else None
            if layer.kind == "conv":
                out = nm.conv2d(_crop_for_conv(src, layer), entry["weight"], bias, layer.stride, layer.pad)
            else:
                out = nm.conv_transpose2d(src, entry["weight"], bias, layer.stride, layer.pad, layer.output_padding)
        elif layer.kind == "norm":
            gamma = entry.get("gamma") if layer.affine else None
            beta = entry.get("beta") if layer.affine else None
            fn = nm.instance_norm if layer.norm_kind == "instance" else nm.batch_norm
            out = fn(src, gamma, beta)
        elif layer.kind == "activation":
            out = _activation(layer, src)
        elif layer.kind == "upsample":
            out = nm.upsample_nearest(src, layer.scale)
        elif layer.kind == "concat_skip":
            out = nm.concat([values[s] for s in layer.inputs], axis=1)
        elif layer.kind == "add":
            out = values[layer.inputs[0]]
            for s in layer.inputs[1:]:
                out = out + values[s]
        else:  # pragma: no cover - guarded by LayerSpec
            raise StateError(f"cannot run layer kind {layer.kind!r}")
        values[layer.id] = out
    result = values[spec.output_layer.id]
    return (result, values) if return_all else result


# ---------------------------------------------------------------------------
# hypernetwork binding


def input_latent(spec: NetSpec, layer_id: str, latents: dict[str, LatentVector]) -> Tensor:
    """Effective input latent: the producers' latents joined in channel order."""
    layer = spec.layer(layer_id)
    segments = spec.input_layout(layer_id)
    missing = [lid for lid, _ in segments if lid not in latents]
    if missing:
        raise StateError(f"layer {layer_id!r} needs latents {missing}")
    return concat_skip_latents([latents[lid] for lid, _ in segments], expected_length=layer.in_channels)


def bind_hyper(spec: NetSpec, latents: dict[str, LatentVector], hyper: dict[str, HyperParams],
               extras: WeightSet | None = None) -> WeightSet:
    """Generate every conv kernel from its latents for this pass.

    Biases and norm parameters in ``extras`` are passed through as-is.
    """
    ws = WeightSet()
    if extras:
        for lid, entry in extras.items():
            ws[lid] = {k: v for k, v in entry.items() if k != "weight"}
    for layer in spec.conv_layers():
        if layer.latent not in latents:
            raise StateError(f"missing latent {layer.latent!r} for layer {layer.id!r}")
        if layer.id not in hyper:
            raise StateError(f"missing hypernetwork parameters for layer {layer.id!r}")
        v_in = input_latent(spec, layer.id, latents)
        w = generate_weights(latents[layer.latent], v_in, hyper[layer.id], layer.kind, (layer.kernel, layer.kernel))
        ws.setdefault(layer.id, {})["weight"] = w
    return ws


# ---------------------------------------------------------------------------
# masks and compaction


def _bits(masks: dict[str, Mask], lid: str, n: int) -> np.ndarray:
    m = masks.get(lid)
    if m is None:
        return np.ones(n, dtype=np.int8)
    if len(m) != n:
        raise DimensionError(f"mask {lid!r} has length {len(m)}, expected {n}")
    return m.bits


def channel_bits(spec: NetSpec, layer_id: str, masks: dict[str, Mask]) -> np.ndarray:
    """Keep-bits along the channel axis of ``layer_id``'s output."""
    return np.concatenate([_bits(masks, lid, n) for lid, n in spec.layout()[layer_id]])


def input_bits(spec: NetSpec, layer_id: str, masks: dict[str, Mask]) -> np.ndarray:
    layer = spec.layer(layer_id)
    return channel_bits(spec, layer.inputs[0], masks)


def apply_masks(spec: NetSpec, weights: WeightSet, masks: dict[str, Mask]) -> WeightSet:
    """Zero every weight slice that a 0 bit removes; differentiable in the unmasked entries."""
    out = WeightSet()
    for layer in spec.layers:
        entry = weights.get(layer.id)
        if entry is None:
            continue
        new = {}
        if layer.is_conv:
            ob = _bits(masks, layer.latent, layer.out_channels).astype(np.float64)
            ib = input_bits(spec, layer.id, masks).astype(np.float64)
            if "weight" in entry:
                w = entry["weight"]
                if layer.kind == "conv":
                    grid = ob[:, None, None, None] * ib[None, :, None, None]
                else:
                    grid = ib[:, None, None, None] * ob[None, :, None, None]
                new["weight"] = w * Tensor(np.broadcast_to(grid, w.shape))
            if "bias" in entry:
                new["bias"] = entry["bias"] * Tensor(ob)
        elif layer.kind == "norm":
            cb = input_bits(spec, layer.id, masks).astype(np.float64)
            for k in ("gamma", "beta"):
                if k in entry:
                    new[k] = entry[k] * Tensor(cb)
        else:
            new = dict(entry)
        out[layer.id] = new
    return out


def compact(spec: NetSpec, weights: WeightSet, masks: dict[str, Mask]) -> tuple[NetSpec, WeightSet]:
    """Physically remove masked channels; returns a hypernetwork-free network.

    The new weight tensors are fresh trainable leaves.
    """
    layers = []
    ws = WeightSet()
    for layer in spec.layers:
        if layer.kind == "input":
            layers.append(layer)
            continue
        in_keep = np.flatnonzero(input_bits(spec, layer.id, masks))
        if layer.kind == "concat_skip":
            n_in = sum(int(channel_bits(spec, s, masks).sum()) for s in layer.inputs)
            layers.append(layer.replace(in_channels=n_in, out_channels=n_in))
            continue
        if layer.is_conv:
            out_keep = np.flatnonzero(_bits(masks, layer.latent, layer.out_channels))
            layers.append(layer.replace(in_channels=len(in_keep), out_channels=len(out_keep)))
        else:
            out_keep = in_keep
            layers.append(layer.replace(in_channels=len(in_keep), out_channels=len(in_keep)))
        entry = weights.get(layer.id)
        if entry is None:
            continue
        new = {}
        for k, t in entry.items():
            d = t.data
            if k == "weight":
                if layer.kind == "conv":
                    d = d[out_keep][:, in_keep]
                else:
                    d = d[in_keep][:, out_keep]
            elif k == "bias":
                d = d[out_keep]
            elif k in ("gamma", "beta"):
                d = d[out_keep]
            new[k] = Tensor(np.ascontiguousarray(d), requires_grad=True)
        ws[layer.id] = new
    return NetSpec(spec.name, layers, spec.input_shape), ws


# ---------------------------------------------------------------------------
# hypernetwork-backed model


@dataclass
class HyperModel:
    """Latents + per-layer hypernetworks + plain extras for one NetSpec."""

    spec: NetSpec
    latents: dict[str, LatentVector]
    hyper: dict[str, HyperParams]
    extras: WeightSet

    @classmethod
    def create(cls, spec: NetSpec, m: int = 8, seed=0) -> "HyperModel":
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        return cls(spec, init_latents(spec), init_hyper(spec, m, rng), init_extras(spec))

    def bind(self) -> WeightSet:
        return bind_hyper(self.spec, self.latents, self.hyper, self.extras)

    def parameters(self) -> list[Tensor]:
        """Everything the optimizer steps: hypernetwork tensors, biases, norm params."""
        params = [t for lid in self.hyper for t in self.hyper[lid].tensors()]
        return params + self.extras.tensors()

    def trainable_latents(self) -> list[LatentVector]:
        return [v for v in self.latents.values() if v.trainable]

    def prunable_latents(self) -> list[LatentVector]:
        return [v for v in self.latents.values() if v.prunable]

    def hyper_size(self) -> int:
        return sum(h.size() for h in self.hyper.values())
