"""Architecture graphs: layers, shapes, and which latent governs each channel."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..errors import ArgumentError, DimensionError, ShapeError

CONV_KINDS = ("conv", "conv_transpose")
KINDS = ("input", "conv", "conv_transpose", "norm", "activation", "upsample", "concat_skip", "add")
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "identity")
NORMS = ("instance", "batch")


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    output_padding: int = 0
    bias: bool = False
    norm_kind: str = "none"
    affine: bool = True
    activation: str = "identity"
    alpha: float = 0.2
    scale: int = 2
    latent: str | None = None
    prunable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown layer kind {self.kind!r}")
        if self.kind == "norm" and self.norm_kind not in NORMS:
            raise ArgumentError(f"norm layer {self.id!r} needs norm_kind in {NORMS}")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")
        if self.kind in CONV_KINDS and self.latent is None:
            object.__setattr__(self, "latent", self.id)

    @property
    def is_conv(self) -> bool:
        return self.kind in CONV_KINDS

    @property
    def skip_source(self) -> str | None:
        return self.inputs[0] if self.kind == "concat_skip" and self.inputs else None

    @property
    def weight_shape(self) -> tuple[int, ...]:
        k = self.kernel
        if self.kind == "conv":
            return (self.out_channels, self.in_channels, k, k)
        if self.kind == "conv_transpose":
            return (self.in_channels, self.out_channels, k, k)
        raise ArgumentError(f"layer {self.id!r} has no weight")

    def replace(self, **changes) -> "LayerSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class NetSpec:
    """An ordered, acyclic layer graph. The first layer is the input, the last the output."""

    name: str
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self._index = {}
        self.__dict__.pop("_layout_cache", None)
        for layer in self.layers:
            if layer.id in self._index:
                raise ArgumentError(f"duplicate layer id {layer.id!r}")
            self._index[layer.id] = layer
        if not self.layers or self.layers[0].kind != "input":
            raise ArgumentError("first layer must be the input")
        if sum(1 for lay in self.layers if lay.kind == "input") != 1:
            raise ArgumentError("exactly one input layer is required")
        self.validate()

    # -- lookup ---------------------------------------------------------
    def layer(self, layer_id: str) -> LayerSpec:
        try:
            return self._index[layer_id]
        except KeyError:
            raise ArgumentError(f"no layer {layer_id!r} in {self.name}") from None

    def __iter__(self):
        return iter(self.layers)

    @property
    def input_layer(self) -> LayerSpec:
        return self.layers[0]

    @property
    def output_layer(self) -> LayerSpec:
        return self.layers[-1]

    def conv_layers(self) -> list[LayerSpec]:
        return [lay for lay in self.layers if lay.is_conv]

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shapes()[self.output_layer.id]

    # -- structure --------------------------------------------------------
    def validate(self) -> None:
        seen: set[str] = set()
        for layer in self.layers:
            for src in layer.inputs:
                if src not in seen:
                    raise ArgumentError(f"layer {layer.id!r} reads {src!r} before it is defined")
            if layer.kind != "input" and not layer.inputs:
                raise ArgumentError(f"layer {layer.id!r} has no inputs")
            if layer.kind in ("concat_skip", "add"):
                if len(layer.inputs) < 2:
                    raise ArgumentError(f"{layer.kind} layer {layer.id!r} needs at least two inputs")
            elif layer.kind != "input" and len(layer.inputs) != 1:
                raise ArgumentError(f"layer {layer.id!r} takes exactly one input")
            seen.add(layer.id)
        channels = self.channels()
        for layer in self.layers:
            if layer.kind == "input":
                continue
            feed = [channels[s] for s in layer.inputs]
            expected_in = sum(feed) if layer.kind == "concat_skip" else feed[0]
            if layer.kind == "add" and len(set(feed)) != 1:
                raise DimensionError(f"add layer {layer.id!r} joins branches of widths {feed}")
            if layer.in_channels != expected_in:
                raise DimensionError(
                    f"layer {layer.id!r} declares in_channels={layer.in_channels}, fed {expected_in}"
                )
        self.layout()
        self.shapes()

    def channels(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for layer in self.layers:
            if layer.kind == "input":
                out[layer.id] = self.input_shape[0]
            elif layer.is_conv:
                out[layer.id] = layer.out_channels
            elif layer.kind == "concat_skip":
                out[layer.id] = sum(out[s] for s in layer.inputs)
            else:
                out[layer.id] = out[layer.inputs[0]]
        return out

    def layout(self) -> dict[str, tuple[tuple[str, int], ...]]:
        """For every layer output, the (latent id, width) segments of its channel axis."""
        cached = self.__dict__.get("_layout_cache")
        if cached is not None:
            return cached
        out: dict[str, tuple[tuple[str, int], ...]] = {}
        for layer in self.layers:
            if layer.kind == "input":
                out[layer.id] = ((layer.id, self.input_shape[0]),)
            elif layer.is_conv:
                out[layer.id] = ((layer.latent, layer.out_channels),)
            elif layer.kind == "concat_skip":
                out[layer.id] = tuple(seg for s in layer.inputs for seg in out[s])
            elif layer.kind == "add":
                branches = [out[s] for s in layer.inputs]
                if any(b != branches[0] for b in branches[1:]):
                    raise DimensionError(
                        f"add layer {layer.id!r} joins branches governed by different latents: {branches}"
                    )
                out[layer.id] = branches[0]
            else:
                out[layer.id] = out[layer.inputs[0]]
        self.__dict__["_layout_cache"] = out
        return out

    def latent_table(self) -> dict[str, tuple[int, bool]]:
        """Latent id -> (length, prunable), in first-use order. The input latent is never prunable."""
        table: dict[str, tuple[int, bool]] = {self.input_layer.id: (self.input_shape[0], False)}
        for layer in self.conv_layers():
            entry = (layer.out_channels, layer.prunable)
            prev = table.get(layer.latent)
            if prev is not None and prev != entry:
                raise DimensionError(f"latent {layer.latent!r} is shared by layers with different widths or flags")
            table[layer.latent] = entry
        return table

    def input_layout(self, layer_id: str) -> tuple[tuple[str, int], ...]:
        layer = self.layer(layer_id)
        return self.layout()[layer.inputs[0]] if layer.inputs else ()

    def shapes(self, input_hw: tuple[int, int] | None = None) -> dict[str, tuple[int, int, int]]:
        """(C, H, W) of every layer output; convs use floor division like the reference frameworks."""
        h, w = input_hw if input_hw is not None else self.input_shape[1:]
        chans = self.channels()
        out: dict[str, tuple[int, int, int]] = {}
        for layer in self.layers:
            if layer.kind == "input":
                out[layer.id] = (self.input_shape[0], h, w)
                continue
            _, ih, iw = out[layer.inputs[0]]
            if layer.kind == "conv":
                oh = conv_floor_size(ih, layer.kernel, layer.stride, layer.pad, layer.id)
                ow = conv_floor_size(iw, layer.kernel, layer.stride, layer.pad, layer.id)
            elif layer.kind == "conv_transpose":
                oh = (ih - 1) * layer.stride - 2 * layer.pad + layer.kernel + layer.output_padding
                ow = (iw - 1) * layer.stride - 2 * layer.pad + layer.kernel + layer.output_padding
                if oh <= 0 or ow <= 0:
                    raise ShapeError(f"layer {layer.id!r} yields a non-positive spatial size")
            elif layer.kind == "upsample":
                oh, ow = ih * layer.scale, iw * layer.scale
            else:
                if layer.kind in ("concat_skip", "add"):
                    sizes = {out[s][1:] for s in layer.inputs}
                    if len(sizes) != 1:
                        raise ShapeError(f"layer {layer.id!r} joins maps of sizes {sorted(sizes)}")
                oh, ow = ih, iw
            out[layer.id] = (chans[layer.id], oh, ow)
        return out


def conv_floor_size(size: int, k: int, stride: int, pad: int, layer_id: str = "?") -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"layer {layer_id!r}: kernel {k} larger than padded input {size + 2 * pad}")
    return span // stride + 1


class SpecBuilder:
    """Small helper for writing layer graphs in sequence.

    Each method appends one layer fed by the previous one (or by ``src``)
    and returns the new layer id.
    """

    def __init__(self, name: str, input_shape: tuple[int, int, int], input_id: str = "input"):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.layers: list[LayerSpec] = [LayerSpec(input_id, "input")]
        self._chans = {input_id: input_shape[0]}
        self.last = input_id

    def _add(self, layer: LayerSpec, out_channels: int) -> str:
        self.layers.append(layer)
        self._chans[layer.id] = out_channels
        self.last = layer.id
        return layer.id

    def _src(self, src):
        return self.last if src is None else src

    def conv(self, lid, out_channels, kernel, stride=1, pad=0, bias=False, src=None, latent=None, prunable=True):
        src = self._src(src)
        return self._add(
            LayerSpec(lid, "conv", (src,), self._chans[src], out_channels, kernel, stride, pad,
                      bias=bias, latent=latent, prunable=prunable),
            out_channels,
        )

    def conv_transpose(self, lid, out_channels, kernel, stride=1, pad=0, output_padding=0, bias=False,
                       src=None, latent=None, prunable=True):
        src = self._src(src)
        return self._add(
            LayerSpec(lid, "conv_transpose", (src,), self._chans[src], out_channels, kernel, stride, pad,
                      output_padding, bias=bias, latent=latent, prunable=prunable),
            out_channels,
        )

    def norm(self, lid, norm_kind="instance", affine=True, src=None):
        src = self._src(src)
        c = self._chans[src]
        return self._add(LayerSpec(lid, "norm", (src,), c, c, norm_kind=norm_kind, affine=affine), c)

    def act(self, lid, activation, alpha=0.2, src=None):
        src = self._src(src)
        c = self._chans[src]
        return self._add(LayerSpec(lid, "activation", (src,), c, c, activation=activation, alpha=alpha), c)

    def upsample(self, lid, scale=2, src=None):
        src = self._src(src)
        c = self._chans[src]
        return self._add(LayerSpec(lid, "upsample", (src,), c, c, scale=scale), c)

    def concat(self, lid, sources):
        c = sum(self._chans[s] for s in sources)
        return self._add(LayerSpec(lid, "concat_skip", tuple(sources), c, c), c)

    def add(self, lid, sources):
        c = self._chans[sources[0]]
        return self._add(LayerSpec(lid, "add", tuple(sources), c, c), c)

    def build(self) -> NetSpec:
        return NetSpec(self.name, list(self.layers), self.input_shape)
