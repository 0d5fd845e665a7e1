"""Acceptance criteria, each checked at its stated tolerance.

Every test records a PASS/FAIL line (see conftest) so the run prints one
verdict per criterion. The end-to-end runs take about five minutes each.
"""

import csv
import json
import math
import re
import time

import numpy as np
import pytest

from hyperprune import accounting
from hyperprune import numeric as nm
from hyperprune.cli import main
from hyperprune.data import SyntheticDataset, gen_dataset
from hyperprune.gradcheck import FAMILIES, run_suite
from hyperprune.latent import Mask, soft_threshold
from hyperprune.metrics import eval_metric
from hyperprune.netspec import (
    GENERATOR_PRESETS,
    HyperModel,
    apply_masks,
    build_preset,
    compact,
    forward,
    init_weights,
)
from hyperprune.numeric import Tensor
from hyperprune.trainer import TrainConfig, Trainer

TOY_FLAGS = ["--preset", "dcgan_toy", "--dataset", "blobs_unconditional", "--epochs", "40", "--seed", "7"]


def _count(capsys, preset):
    start = time.perf_counter()
    rc = main(["count", "--preset", preset, "--res", "256"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    params = int(re.search(r"params=(\d+)", out).group(1))
    macs = int(re.search(r"MACs=(\d+)", out).group(1))
    return rc, params, macs, elapsed


@pytest.mark.parametrize(
    "preset,params_ref,macs_ref",
    [("resnet_cyclegan_256", 11.3e6, 56.8e9), ("unet_pix2pix_256", 54.4e6, 18.6e9)],
)
def test_accounting_reproduction(capsys, acceptance, preset, params_ref, macs_ref):
    rc, params, macs, elapsed = _count(capsys, preset)
    p_err = abs(params - params_ref) / params_ref
    m_err = abs(macs - macs_ref) / macs_ref
    ok = rc == 0 and p_err <= 0.03 and m_err <= 0.05 and elapsed < 1.0
    with capsys.disabled():
        acceptance.record(
            f"accounting {preset}",
            ok,
            f"params {params / 1e6:.2f}M ({p_err:.2%}), MACs {macs / 1e9:.2f}G ({m_err:.2%}), {elapsed:.2f}s",
        )
    assert ok


def _grid_argmin(v: float, t: float) -> float:
    """Minimise 0.5*(x-v)^2 + t|x| by repeated grid refinement."""
    obj = lambda x: 0.5 * (x - v) ** 2 + t * np.abs(x)  # noqa: E731
    lo, hi = -abs(v) - 1.0, abs(v) + 1.0
    for _ in range(12):
        grid = np.linspace(lo, hi, 401)
        # keep 0 on the grid: the kink is where the minimiser often sits
        grid = np.union1d(grid, [0.0]) if lo < 0 < hi else grid
        best = grid[int(np.argmin(obj(grid)))]
        step = (hi - lo) / 400
        lo, hi = best - 2 * step, best + 2 * step
    return float(best)


def test_proximal_oracle(acceptance):
    rng = np.random.default_rng(2024)
    vs = rng.uniform(-3, 3, 1000)
    ts = rng.uniform(0, 2, 1000)
    errs = [abs(float(soft_threshold(np.array([v]), t)[0]) - _grid_argmin(v, t)) for v, t in zip(vs, ts)]
    worst = max(errs)
    zero_t = np.array_equal(soft_threshold(vs, 0.0), vs)
    zero_v = all(float(soft_threshold(np.array([0.0]), t)[0]) == 0.0 for t in ts[:50])
    ok = worst < 1e-6 and zero_t and zero_v
    acceptance.record("proximal oracle", ok, f"max |err| {worst:.2e} over 1000, t=0 identity {zero_t}, v=0 {zero_v}")
    assert ok


def test_gradient_suite(acceptance):
    ok, results, elapsed = run_suite(count=100, seed=0, threshold=1e-5)
    worst = max(r.max_rel_err for r in results)
    covered = {r.family for r in results} == set(FAMILIES)
    passed = ok and covered and len(results) >= 100 and elapsed < 120
    acceptance.record("gradient suite", passed, f"{len(results)} configs, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert passed


def _random_masks(spec, rng):
    masks = {}
    for lid, (n, prunable) in spec.latent_table().items():
        if not prunable:
            continue
        bits = (rng.random(n) < rng.uniform(0.2, 0.9)).astype(np.int8)
        bits[rng.integers(n)] = 1
        masks[lid] = Mask(lid, bits)
    return masks


def _randomise_extras(weights, rng):
    for entry in weights.values():
        for key, t in entry.items():
            if key != "weight":
                t.data[...] = rng.normal(0.0, 0.5, size=t.shape) + (1.0 if key == "gamma" else 0.0)


# the 256px ResNet runs its 50 masks on 64px inputs (fully convolutional, same graph) plus one at 256px
EQUIV_INPUT = {"resnet_cyclegan_256": (64, 64)}


def test_pruning_equivalence(acceptance):
    rng = np.random.default_rng(11)
    worst = 0.0
    macs_exact = True
    trials = 0
    for name in GENERATOR_PRESETS:
        spec = build_preset(name)
        weights = init_weights(spec, rng, std=0.2)
        _randomise_extras(weights, rng)
        hw = EQUIV_INPUT.get(name, spec.input_shape[1:])
        runs = [(hw, i) for i in range(50)]
        if name in EQUIV_INPUT:
            runs.append((spec.input_shape[1:], 50))
        for hw_i, _ in runs:
            masks = _random_masks(spec, rng)
            small_spec, small = compact(spec, weights, masks)
            x = Tensor(rng.standard_normal((2 if hw_i[0] <= 64 else 1, spec.input_shape[0]) + tuple(hw_i)))
            with nm.no_grad():
                a = forward(spec, apply_masks(spec, weights, masks), x).data
                b = forward(small_spec, small, x).data
            worst = max(worst, float(np.max(np.abs(a - b))))
            macs_exact &= accounting.count_macs(small_spec) == accounting.count_macs(spec, None, masks)
            trials += 1
    ok = worst <= 1e-10 and macs_exact
    acceptance.record("pruning equivalence", ok,
                      f"{len(GENERATOR_PRESETS)} presets, {trials} masks, max diff {worst:.2e}, MACs exact {macs_exact}")
    assert ok


def _bind(model):
    with nm.no_grad():
        return {lid: e["weight"].data.copy() for lid, e in model.bind().items() if "weight" in e}


def test_covariance_locality(acceptance):
    rng = np.random.default_rng(5)
    specs = [build_preset(n) for n in ("dcgan_toy", "unet_toy", "resnet_toy", "dcgan_cifar")]
    models = []
    for spec in specs:
        model = HyperModel.create(spec, m=4, seed=rng)
        for p in model.parameters():
            p.data[...] += rng.normal(0.0, 0.1, size=p.shape)  # non-zero biases too
        for v in model.trainable_latents():
            v.values.data[...] = rng.uniform(0.2, 1.5, size=v.values.shape)
        models.append(model)
    failures = 0
    for trial in range(100):
        model = models[trial % len(models)]
        spec = model.spec
        latent = model.prunable_latents()[int(rng.integers(len(model.prunable_latents())))]
        i = int(rng.integers(len(latent)))
        before = _bind(model)
        old = latent.values.data[i]
        latent.values.data[i] = old + rng.uniform(0.5, 1.0)
        after = _bind(model)
        latent.values.data[i] = old
        for layer in spec.conv_layers():
            w0, w1 = before[layer.id], after[layer.id]
            out_ax, in_ax = (0, 1) if layer.kind == "conv" else (1, 0)
            changed = np.zeros(w0.shape, dtype=bool)
            if layer.latent == latent.layer_id:
                idx = [slice(None)] * 4
                idx[out_ax] = i
                changed[tuple(idx)] = True
            offset = 0
            for lid, width in spec.input_layout(layer.id):
                if lid == latent.layer_id:
                    idx = [slice(None)] * 4
                    idx[in_ax] = offset + i
                    changed[tuple(idx)] = True
                offset += width
            if not np.array_equal(w0[~changed], w1[~changed]) or (changed.any() and np.array_equal(w0[changed], w1[changed])):
                failures += 1
    ok = failures == 0
    acceptance.record("covariance locality", ok, f"100 trials over 4 presets, {failures} violations")
    assert ok


# ---------------------------------------------------------------------------
# end-to-end runs


def _cli_train(tmp_path_factory, target: str, extra=()):
    out = tmp_path_factory.mktemp(f"train_{target}")
    start = time.perf_counter()
    rc = main(["train", *TOY_FLAGS, "--target", target, "--out-dir", str(out), *extra])
    elapsed = time.perf_counter() - start
    summary = json.loads((out / "summary.json").read_text())
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {"rc": rc, "elapsed": elapsed, "summary": summary, "rows": rows, "out": out}


@pytest.fixture(scope="module")
def run_half(tmp_path_factory):
    return _cli_train(tmp_path_factory, "0.5")


@pytest.fixture(scope="module")
def run_three_quarters(tmp_path_factory):
    return _cli_train(tmp_path_factory, "0.75")


def _check_run(run, target):
    s = run["summary"]
    g = s["granularity"]
    removed = s["switch_removed_fraction"]
    finite = all(math.isfinite(float(r["g_loss"])) and math.isfinite(float(r["d_loss"])) for r in run["rows"])
    near = removed is not None and abs(removed - target) <= 0.02 + g
    ok = run["rc"] == 0 and s["target_met"] and near and run["elapsed"] < 600 and finite and len(run["rows"]) == 40
    detail = (f"removed {removed if removed is None else round(removed, 4)} vs {target} "
              f"(bound 0.02+{g:.4f}), switch epoch {s['switch_epoch']}, {run['elapsed']:.0f}s, finite {finite}")
    return ok, detail


@pytest.mark.slow
def test_end_to_end_half(run_half, acceptance):
    ok, detail = _check_run(run_half, 0.5)
    acceptance.record("end-to-end target 0.5", ok, detail)
    assert ok


@pytest.mark.slow
def test_end_to_end_three_quarters(run_three_quarters, acceptance):
    ok, detail = _check_run(run_three_quarters, 0.75)
    acceptance.record("end-to-end target 0.75", ok, detail)
    assert ok


def test_determinism(tmp_path, acceptance):
    # short two-stage run: a large lambda reaches the switch within a few epochs
    flags = ["train", "--preset", "dcgan_toy", "--target", "0.5", "--epochs", "5", "--lambda", "50",
             "--dataset-size", "512", "--seed", "3", "--eval-samples", "64"]
    assert main(flags + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(flags + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    ckpt_same = (tmp_path / "a/checkpoints/generator_final.ckpt").read_bytes() == \
        (tmp_path / "b/checkpoints/generator_final.ckpt").read_bytes()
    stages = {line.split(",")[1] for line in a.decode().splitlines()[1:]}
    ok = a == b and ckpt_same and stages == {"searching", "converging"}
    acceptance.record("determinism", ok, f"metrics.csv identical {a == b}, checkpoint identical {ckpt_same}, "
                                         f"stages {sorted(stages)}")
    assert ok


def test_metric_separation(acceptance):
    real = gen_dataset(SyntheticDataset("blobs_unconditional", 16, 1, 512, seed=0))
    holdout = gen_dataset(SyntheticDataset("blobs_unconditional", 16, 1, 512, seed=1))
    noise = np.random.default_rng(2).random((512, 1, 16, 16))
    same = eval_metric(real, holdout)
    diff = eval_metric(real, noise)
    ok = diff >= 10 * same
    acceptance.record("metric separation", ok, f"real/holdout {same:.4g}, real/noise {diff:.4g}, ratio {diff / same:.1f}")
    assert ok


@pytest.mark.slow
def test_finetune_improves_metric(run_half, acceptance):
    s = run_half["summary"]
    pairs = [(7, s["switch_metric"], s["final_metric"])]
    for seed in (1, 2, 3, 4):
        cfg = TrainConfig(preset="dcgan_toy", dataset="blobs_unconditional", total_epochs=40,
                          target_compression=0.5, seed=seed)
        art = Trainer(cfg).run()
        pairs.append((seed, art.state.switch_metric, art.final_metric))
    better = sum(1 for _, sw, fin in pairs if sw is not None and fin <= sw)
    ok = better >= 4
    detail = ", ".join(f"seed {sd}: {sw:.3f}->{fin:.3f}" for sd, sw, fin in pairs if sw is not None)
    acceptance.record("fine-tune metric", ok, f"{better}/5 improved; {detail}")
    assert ok
