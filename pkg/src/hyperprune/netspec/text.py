"""Plain-text layer graph format.

One layer per line, ``kind`` followed by ``key=value`` tokens; blank lines
and ``#`` comments are ignored. The header line declares the network::

    net name=dcgan_toy input=32,1,1
    input id=z
    conv_transpose id=g1 in=z cin=32 cout=64 k=4 s=1 p=0 op=0 bias=0 latent=g1 prunable=1
    norm id=g1_bn in=g1 c=64 norm=batch affine=1
    activation id=g1_act in=g1_bn c=64 fn=relu alpha=0.2
    concat_skip id=cat in=a,b c=24
"""

from __future__ import annotations

from ..errors import ArgumentError
from .spec import LayerSpec, NetSpec


def _b(v: bool) -> str:
    return "1" if v else "0"


def layer_to_line(layer: LayerSpec) -> str:
    parts = [layer.kind, f"id={layer.id}"]
    if layer.inputs:
        parts.append("in=" + ",".join(layer.inputs))
    if layer.is_conv:
        parts += [
            f"cin={layer.in_channels}", f"cout={layer.out_channels}", f"k={layer.kernel}",
            f"s={layer.stride}", f"p={layer.pad}", f"op={layer.output_padding}", f"bias={_b(layer.bias)}",
            f"latent={layer.latent}", f"prunable={_b(layer.prunable)}",
        ]
    elif layer.kind == "norm":
        parts += [f"c={layer.in_channels}", f"norm={layer.norm_kind}", f"affine={_b(layer.affine)}"]
    elif layer.kind == "activation":
        parts += [f"c={layer.in_channels}", f"fn={layer.activation}", f"alpha={layer.alpha!r}"]
    elif layer.kind == "upsample":
        parts += [f"c={layer.in_channels}", f"scale={layer.scale}"]
    elif layer.kind in ("concat_skip", "add"):
        parts += [f"c={layer.in_channels}"]
    return " ".join(parts)


def to_text(spec: NetSpec) -> str:
    c, h, w = spec.input_shape
    lines = [f"net name={spec.name} input={c},{h},{w}"]
    lines += [layer_to_line(layer) for layer in spec.layers]
    return "\n".join(lines) + "\n"


def _parse_tokens(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ArgumentError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _flag(v: str) -> bool:
    if v not in ("0", "1"):
        raise ArgumentError(f"boolean flag must be 0 or 1, got {v!r}")
    return v == "1"


def from_text(text: str) -> NetSpec:
    name = None
    input_shape = None
    layers: list[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        kv = _parse_tokens(rest, lineno)
        if kind == "net":
            name = kv.get("name", "net")
            try:
                input_shape = tuple(int(x) for x in kv["input"].split(","))
            except (KeyError, ValueError):
                raise ArgumentError(f"line {lineno}: net header needs input=C,H,W") from None
            continue
        try:
            lid = kv["id"]
            inputs = tuple(kv["in"].split(",")) if "in" in kv else ()
            if kind in ("conv", "conv_transpose"):
                layer = LayerSpec(
                    lid, kind, inputs, int(kv["cin"]), int(kv["cout"]), int(kv.get("k", 1)),
                    int(kv.get("s", 1)), int(kv.get("p", 0)), int(kv.get("op", 0)),
                    bias=_flag(kv.get("bias", "0")), latent=kv.get("latent"),
                    prunable=_flag(kv.get("prunable", "1")),
                )
            elif kind == "norm":
                c = int(kv["c"])
                layer = LayerSpec(lid, kind, inputs, c, c, norm_kind=kv["norm"], affine=_flag(kv.get("affine", "1")))
            elif kind == "activation":
                c = int(kv["c"])
                layer = LayerSpec(lid, kind, inputs, c, c, activation=kv["fn"], alpha=float(kv.get("alpha", 0.2)))
            elif kind == "upsample":
                c = int(kv["c"])
                layer = LayerSpec(lid, kind, inputs, c, c, scale=int(kv.get("scale", 2)))
            elif kind in ("concat_skip", "add"):
                c = int(kv["c"])
                layer = LayerSpec(lid, kind, inputs, c, c)
            elif kind == "input":
                layer = LayerSpec(lid, "input")
            else:
                raise ArgumentError(f"line {lineno}: unknown layer kind {kind!r}")
        except KeyError as exc:
            raise ArgumentError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        layers.append(layer)
    if input_shape is None:
        raise ArgumentError("missing 'net' header line")
    return NetSpec(name, layers, input_shape)
