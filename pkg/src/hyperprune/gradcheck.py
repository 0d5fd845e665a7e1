"""Finite-difference check of the full latent -> hypernetwork -> conv -> loss chain.

Each configuration builds a small random network, binds hypernetwork
weights from perturbed latents and compares reverse-mode gradients of a
scalar loss against central differences for the latents, a sample of
hypernetwork entries and the norm / bias parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .netspec import HyperModel, SpecBuilder, forward
from .numeric import Tensor

FAMILIES = ("conv", "conv_transpose", "skip_concat", "norm")
ACTIVATIONS = ("tanh", "leaky_relu", "sigmoid")
# (kernel, stride, pad) triples with exact output sizes on 8x8 maps
CONV_GEOMETRY = ((3, 1, 1), (1, 1, 0), (4, 2, 1), (3, 1, 0))


@dataclass
class CheckResult:
    index: int
    family: str
    max_rel_err: float
    checked: int

    def passed(self, threshold: float) -> bool:
        return self.max_rel_err < threshold


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def random_network(family: str, rng: np.random.Generator, index: int = 0):
    c0 = int(rng.integers(1, 4))
    c1, c2, c3 = (int(x) for x in rng.integers(2, 5, size=3))
    act = ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
    if family == "conv_transpose":
        b = SpecBuilder(f"gc{index}", (c0, 4, 4))
        k, s, p, op = ((4, 2, 1, 0), (3, 2, 1, 1), (3, 1, 1, 0))[int(rng.integers(3))]
        b.conv_transpose("a", c1, k, s, p, op, bias=bool(rng.integers(2)))
        b.act("a_act", act)
        b.conv("out", c2, 3, 1, 1)
        return b.build()
    b = SpecBuilder(f"gc{index}", (c0, 8, 8))
    k, s, p = CONV_GEOMETRY[int(rng.integers(len(CONV_GEOMETRY)))]
    # a bias right before a norm layer has an identically zero gradient, so none there
    b.conv("a", c1, k, s, p, bias=family != "norm" and bool(rng.integers(2)))
    if family == "norm":
        b.norm("a_norm", ("instance", "batch")[int(rng.integers(2))], affine=True)
    b.act("a_act", act)
    if family == "skip_concat":
        b.conv("b", c2, 3, 1, 1)
        b.act("b_act", act)
        b.concat("cat", ["a_act", "b_act"])
    b.conv("out", c3, 3, 1, 1, bias=bool(rng.integers(2)))
    return b.build()


def _randomise(model: HyperModel, rng: np.random.Generator) -> None:
    # move away from the all-ones / zero-bias initial point so nothing is degenerate
    for v in model.trainable_latents():
        v.values.data[...] = rng.uniform(0.3, 1.5, size=v.values.shape) * rng.choice((-1.0, 1.0), size=v.values.shape)
    for t in model.parameters():
        t.data[...] += rng.normal(0.0, 0.3, size=t.shape)


def check_config(index: int, seed: int = 0, eps: float = 1e-6, samples: int = 6) -> CheckResult:
    rng = np.random.default_rng([seed, index])
    family = FAMILIES[index % len(FAMILIES)]
    spec = random_network(family, rng, index)
    model = HyperModel.create(spec, m=int(rng.integers(2, 5)), seed=rng)
    _randomise(model, rng)
    x = Tensor(rng.standard_normal((2,) + spec.input_shape))
    probe = Tensor(rng.standard_normal((2,) + spec.output_shape))

    def loss_fn():
        out = forward(spec, model.bind(), x)
        return nm.mean(out * probe) + 0.5 * nm.mean(nm.square(out))

    loss = loss_fn()
    nm.backward(loss)
    targets = [v.values for v in model.trainable_latents()] + model.parameters()
    analytic = [t.grad.copy() for t in targets]
    for t in targets:
        t.grad = None

    worst = 0.0
    checked = 0
    for t, g in zip(targets, analytic):
        size = t.data.size
        idx = np.arange(size) if size <= samples else np.sort(rng.choice(size, samples, replace=False))
        numeric = nm.finite_diff_grad(lambda _t: loss_fn(), t, eps, indices=idx).reshape(-1)[idx]
        worst = max(worst, rel_err(g.reshape(-1)[idx], numeric))
        checked += len(idx)
    return CheckResult(index, family, worst, checked)


def run_suite(count: int = 100, seed: int = 0, threshold: float = 1e-5, verbose: bool = False):
    """Run ``count`` configurations; returns (all_passed, results, seconds)."""
    prev = nm.get_default_dtype()
    nm.set_default_dtype("float64")
    start = time.perf_counter()
    results = []
    try:
        for i in range(count):
            r = check_config(i, seed)
            results.append(r)
            if verbose:
                flag = "ok" if r.passed(threshold) else "FAIL"
                print(f"config {i:3d} {r.family:<15s} checked={r.checked:3d} rel_err={r.max_rel_err:.3e} {flag}")
    finally:
        nm.set_default_dtype(np.dtype(prev).name)
    elapsed = time.perf_counter() - start
    return all(r.passed(threshold) for r in results), results, elapsed
