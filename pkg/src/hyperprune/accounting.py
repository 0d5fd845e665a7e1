"""Parameter, MAC and FLOP accounting for layer graphs, optionally under masks.

Conventions: a MAC is one multiply-accumulate; FLOPs are always reported as
2 x MACs. Only conv and conv-transpose layers contribute MACs, both counted
as ``n * c * k * k * H_out * W_out``. Norm and activation costs are left out.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .latent import Mask
from .netspec.ops import input_bits
from .netspec.spec import NetSpec

DEFAULT_TOL = 0.02


@dataclass
class LayerCost:
    layer: str
    params: int
    macs: int
    masked_params: int
    masked_macs: int


@dataclass
class CostReport:
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.layers)

    @property
    def masked_params(self) -> int:
        return sum(r.masked_params for r in self.layers)

    @property
    def masked_macs(self) -> int:
        return sum(r.masked_macs for r in self.layers)

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def masked_flops(self) -> int:
        return 2 * self.masked_macs

    @property
    def ratio_remaining(self) -> float:
        return self.masked_macs / self.macs if self.macs else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "params", "macs", "masked_params", "masked_macs"])
        for r in self.layers:
            writer.writerow([r.layer, r.params, r.macs, r.masked_params, r.masked_macs])
        writer.writerow(["total", self.params, self.macs, self.masked_params, self.masked_macs])
        return buf.getvalue()


def _kept(masks, lid: str, n: int) -> int:
    if masks is None or lid not in masks:
        return n
    return masks[lid].kept


def cost_report(spec: NetSpec, input_hw: tuple[int, int] | None = None, masks: dict[str, Mask] | None = None) -> CostReport:
    shapes = spec.shapes(input_hw)
    report = CostReport()
    for layer in spec.layers:
        if layer.is_conv:
            n, c, kk = layer.out_channels, layer.in_channels, layer.kernel * layer.kernel
            n_m = _kept(masks, layer.latent, n)
            c_m = int(input_bits(spec, layer.id, masks).sum()) if masks else c
            _, ho, wo = shapes[layer.id]
            b, b_m = (n, n_m) if layer.bias else (0, 0)
            report.layers.append(LayerCost(
                layer.id, n * c * kk + b, n * c * kk * ho * wo, n_m * c_m * kk + b_m, n_m * c_m * kk * ho * wo,
            ))
        elif layer.kind == "norm" and layer.affine:
            c = layer.in_channels
            c_m = int(input_bits(spec, layer.id, masks).sum()) if masks else c
            report.layers.append(LayerCost(layer.id, 2 * c, 0, 2 * c_m, 0))
    return report


def count_params(spec: NetSpec, masks: dict[str, Mask] | None = None) -> int:
    r = cost_report(spec, None, masks)
    return r.masked_params if masks else r.params


def count_macs(spec: NetSpec, input_hw: tuple[int, int] | None = None, masks: dict[str, Mask] | None = None) -> int:
    r = cost_report(spec, input_hw, masks)
    return r.masked_macs if masks else r.macs


def count_flops(spec: NetSpec, input_hw=None, masks=None) -> int:
    return 2 * count_macs(spec, input_hw, masks)


def current_ratio(spec: NetSpec, masks: dict[str, Mask], input_hw: tuple[int, int] | None = None) -> float:
    """Remaining fraction of FLOPs under ``masks``."""
    r = cost_report(spec, input_hw, masks)
    return r.ratio_remaining


def removed_fraction(spec: NetSpec, masks: dict[str, Mask], input_hw=None) -> float:
    return 1.0 - current_ratio(spec, masks, input_hw)


def reached_target(ratio_remaining: float, target_compression: float, tol: float = DEFAULT_TOL) -> bool:
    """True once the removed FLOP fraction is within ``tol`` of (or past) the target."""
    # tolerance for float round-off at the exact boundary
    return (1.0 - ratio_remaining) >= target_compression - tol - 1e-12


def channel_granularity(spec: NetSpec, input_hw=None) -> float:
    """Largest FLOP fraction removed by pruning a single channel of any prunable latent."""
    total = count_macs(spec, input_hw)
    best = 0
    for lid, (n, prunable) in spec.latent_table().items():
        if not prunable or n < 2:
            continue
        bits = np.ones(n, dtype=np.int8)
        bits[0] = 0
        drop = total - count_macs(spec, input_hw, {lid: Mask(lid, bits)})
        best = max(best, drop)
    return best / total if total else 0.0
