import numpy as np
import pytest

from hyperprune import accounting
from hyperprune import numeric as nm
from hyperprune.latent import Mask
from hyperprune.netspec import GENERATOR_PRESETS, SpecBuilder, build_preset, compact, forward, init_weights
from hyperprune.numeric import Tensor


def macs_by_running(spec, weights, hw=None):
    """Oracle: count MACs from the tensors a real forward pass produces."""
    hw = hw or spec.input_shape[1:]
    x = Tensor(np.zeros((1, spec.input_shape[0]) + tuple(hw)))
    with nm.no_grad():
        _, values = forward(spec, weights, x, return_all=True)
    total = 0
    for layer in spec.conv_layers():
        w = weights[layer.id]["weight"].data
        out = values[layer.id].data
        # every output element accumulates in_channels * k * k products
        cin = w.shape[1] if layer.kind == "conv" else w.shape[0]
        total += out[0].size * cin * layer.kernel ** 2
    return total


@pytest.mark.parametrize("name", [n for n in GENERATOR_PRESETS if not n.endswith("256")])
def test_macs_match_forward_oracle(name):
    spec = build_preset(name)
    ws = init_weights(spec, 0)
    assert accounting.count_macs(spec) == macs_by_running(spec, ws)
    assert accounting.count_flops(spec) == 2 * accounting.count_macs(spec)


@pytest.mark.parametrize("name", GENERATOR_PRESETS)
def test_params_match_weight_sizes(name):
    spec = build_preset(name)
    ws = init_weights(spec, 0)
    assert accounting.count_params(spec) == sum(t.size for t in ws.tensors())


def test_masked_counts_match_compacted():
    rng = np.random.default_rng(0)
    spec = build_preset("unet_toy")
    ws = init_weights(spec, 0)
    masks = {}
    for lid, (n, prunable) in spec.latent_table().items():
        if prunable:
            bits = rng.integers(0, 2, n)
            bits[0] = 1
            masks[lid] = Mask(lid, bits)
    small_spec, small = compact(spec, ws, masks)
    rep = accounting.cost_report(spec, None, masks)
    assert rep.masked_params == accounting.count_params(small_spec) == sum(t.size for t in small.tensors())
    assert rep.masked_macs == macs_by_running(small_spec, small)
    assert 0 < accounting.current_ratio(spec, masks) < 1
    assert accounting.removed_fraction(spec, masks) == pytest.approx(1 - rep.ratio_remaining)


def test_single_layer_hand_count():
    b = SpecBuilder("one", (3, 8, 8))
    b.conv("a", 4, 3, 1, 1, bias=True)
    b.conv_transpose("b", 2, 4, 2, 1, latent=None)
    spec = b.build()
    rep = accounting.cost_report(spec)
    assert rep.layers[0].macs == 4 * 3 * 9 * 8 * 8
    assert rep.layers[0].params == 4 * 3 * 9 + 4
    # conv-transpose counted at its 16x16 output resolution
    assert rep.layers[1].macs == 2 * 4 * 16 * 16 * 16
    masks = {"a": Mask("a", [1, 0, 0, 1])}
    rep_m = accounting.cost_report(spec, None, masks)
    assert rep_m.layers[0].masked_macs == 2 * 3 * 9 * 64
    assert rep_m.layers[1].masked_macs == 2 * 2 * 16 * 256


def test_input_resolution_scales_quadratically():
    spec = build_preset("resnet_toy")
    assert accounting.count_macs(spec, (32, 32)) == 4 * accounting.count_macs(spec, (16, 16))


def test_reached_target_boundaries():
    assert accounting.reached_target(0.52, 0.5)  # removed 0.48 = target - tol
    assert not accounting.reached_target(0.5201, 0.5)
    assert accounting.reached_target(0.2, 0.5)
    assert accounting.reached_target(1 - 0.73, 0.75, tol=0.02)


def test_csv_and_granularity():
    spec = build_preset("dcgan_toy")
    text = accounting.cost_report(spec).to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "layer,params,macs,masked_params,masked_macs"
    assert lines[-1].startswith("total,")
    g = accounting.channel_granularity(spec)
    assert 0 < g < 0.05
