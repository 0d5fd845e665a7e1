"""Two-stage controlled-compression training loop.

Searching stage: the generator's kernels are produced every step by the
hypernetworks from the latents. Each step updates the hypernetworks with
SGD on the generator loss, updates the discriminator, then applies a
proximal l1 step to the latents. Once the masked generator FLOPs are within
``tol`` of the requested removed fraction the latents are thresholded into
masks, the network is compacted and the hypernetworks are dropped.

Converging stage: ordinary alternating GAN updates on the compacted
network until the epoch budget runs out.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import accounting
from . import numeric as nm
from .checkpoint import save as save_checkpoint
from .data import SyntheticDataset, batch_indices, gen_dataset, to_signed, to_unit
from .errors import ArgumentError, NumericError, StateError
from .images import make_grid, write_pgm
from .latent import DEFAULT_TAU, Mask, compute_masks, proximal_update
from .metrics import EvalMetric, Evaluator
from .netspec import (
    HyperModel,
    NetSpec,
    WeightSet,
    build_discriminator,
    build_preset,
    compact,
    forward,
    init_weights,
)
from .numeric import Tensor

log = logging.getLogger(__name__)

SEARCHING = "searching"
CONVERGING = "converging"
LOG_COLUMNS = ("epoch", "stage", "g_loss", "d_loss", "removed_fraction", "params", "macs", "metric")


class TrainingAborted(RuntimeError):
    """A loss or tensor went non-finite; a diagnostic dump was written."""


@dataclass
class TrainConfig:
    preset: str = "dcgan_toy"
    dataset: str = "blobs_unconditional"
    total_epochs: int = 40
    target_compression: float = 0.5
    tol: float = accounting.DEFAULT_TOL
    lr: float = 2e-4
    lam: float = 0.5
    tau: float = DEFAULT_TAU
    m: int = 8
    batch_size: int = 8
    dataset_size: int = 4096
    resolution: int = 16
    seed: int = 0
    mode: str = "auto"
    compress_discriminator: bool = False
    l1_weight: float = 10.0
    non_saturating: bool = False
    momentum: float = 0.0
    conditional_d: bool = True
    metric: str = "rf_frechet"
    eval_samples: int = 256
    sample_grids: bool = True
    mask_cadence: str = "step"
    landing_guard: bool = True

    def __post_init__(self):
        if not 0.0 < self.target_compression < 1.0:
            raise ArgumentError("target_compression must lie in (0, 1)")
        if self.total_epochs < 0:
            raise ArgumentError("total_epochs must be non-negative")
        if self.mode == "auto":
            self.mode = "paired" if self.dataset == "blobs_to_edges_paired" else "unconditional"
        if self.mode not in ("unconditional", "paired"):
            raise ArgumentError(f"unknown mode {self.mode!r}")
        if self.l1_weight < 0:
            raise ArgumentError("l1_weight must be non-negative")
        if self.mask_cadence not in ("step", "epoch"):
            raise ArgumentError("mask_cadence must be 'step' or 'epoch'")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be positive")

    @property
    def paired(self) -> bool:
        return self.mode == "paired"


@dataclass
class TrainState:
    stage: str = SEARCHING
    epoch: int = 0
    step: int = 0
    masks: dict = field(default_factory=dict)
    d_masks: dict = field(default_factory=dict)
    achieved_ratio: float = 1.0
    d_achieved_ratio: float = 1.0
    g_landed: bool = False
    d_landed: bool = False
    history: list = field(default_factory=list)
    switch_epoch: int | None = None
    switch_metric: float | None = None
    switch_removed: float | None = None

    @property
    def removed_fraction(self) -> float:
        return 1.0 - self.achieved_ratio


@dataclass
class RunArtifacts:
    generator: tuple[NetSpec, WeightSet]
    discriminator: tuple[NetSpec, WeightSet]
    log: list[dict]
    state: TrainState
    target_met: bool
    final_metric: float | None = None
    checkpoints: list[str] = field(default_factory=list)

    def metrics_csv(self) -> str:
        return format_log(self.log)


class SGD:
    """Gradient descent with optional heavy-ball momentum (off by default)."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[int, np.ndarray] = {}

    def step(self) -> None:
        if self.momentum == 0.0:
            nm.sgd_step(self.params, self.lr)
            return
        for p in self.params:
            if p.grad is None:
                raise StateError(f"parameter {p!r} has no gradient")
        for p in self.params:
            v = self._velocity.get(id(p))
            v = p.grad.copy() if v is None else self.momentum * v + p.grad
            self._velocity[id(p)] = v
            p.data -= self.lr * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# losses


def generator_adv_loss(d_fake_logits: Tensor, non_saturating: bool = False) -> Tensor:
    """mean log(1 - D(G(z))) to be minimised (or -mean log D(G(z)) when ``non_saturating``)."""
    if non_saturating:
        return -nm.mean(nm.log_sigmoid(d_fake_logits))
    return nm.mean(nm.log_sigmoid(-d_fake_logits))


def discriminator_loss(d_real_logits: Tensor, d_fake_logits: Tensor) -> Tensor:
    """-(mean log D(x) + mean log(1 - D(G(z))))."""
    return -(nm.mean(nm.log_sigmoid(d_real_logits)) + nm.mean(nm.log_sigmoid(-d_fake_logits)))


# ---------------------------------------------------------------------------


class Trainer:
    def __init__(self, config: TrainConfig, data=None, out_dir=None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        seeds = np.random.SeedSequence(config.seed).spawn(5)
        init_rng, d_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
        self.data_rng = np.random.default_rng(seeds[2])
        self.noise_rng = np.random.default_rng(seeds[3])
        eval_rng = np.random.default_rng(seeds[4])

        if data is None:
            data = gen_dataset(SyntheticDataset(config.dataset, config.resolution, 1, config.dataset_size, config.seed))
        if config.paired:
            src, tgt = data
            self.source = to_signed(np.asarray(src))
            self.target = to_signed(np.asarray(tgt))
        else:
            self.source = None
            self.target = to_signed(np.asarray(data))
        self.n_train = len(self.target)

        gspec = build_preset(config.preset)
        if config.paired and gspec.input_shape[1] == 1:
            raise ArgumentError(f"preset {config.preset!r} is a noise generator; paired mode needs an image-to-image preset")
        if not config.paired and gspec.input_shape[1] != 1:
            raise ArgumentError(f"preset {config.preset!r} maps images; unconditional mode needs a noise generator")
        if gspec.output_shape[1:] != self.target.shape[2:]:
            raise ArgumentError(
                f"preset {config.preset!r} outputs {gspec.output_shape[1:]} images, dataset has {self.target.shape[2:]}"
            )
        self.g_input_hw = gspec.input_shape[1:]
        conditional = config.paired and config.conditional_d
        dspec = build_discriminator(config.preset, conditional=conditional)
        self.conditional = conditional

        self.g_hyper: HyperModel | None = HyperModel.create(gspec, config.m, init_rng)
        self.g_spec: NetSpec = gspec
        self.g_weights: WeightSet | None = None
        if config.compress_discriminator:
            self.d_hyper: HyperModel | None = HyperModel.create(dspec, config.m, d_rng)
            self.d_weights: WeightSet | None = None
        else:
            self.d_hyper = None
            self.d_weights = init_weights(dspec, d_rng)
        self.d_spec = dspec
        self._make_optimizers()

        self.full_g_cost = accounting.cost_report(gspec)
        self.full_d_cost = accounting.cost_report(dspec)
        self.state = TrainState()
        self.state.masks = compute_masks(self.g_hyper.latents, config.tau)
        if self.d_hyper is not None:
            self.state.d_masks = compute_masks(self.d_hyper.latents, config.tau)

        self.evaluator = Evaluator(EvalMetric(config.metric, sample_count=config.eval_samples), gspec.output_shape[0])
        n_eval = max(config.eval_samples, 64)
        held = gen_dataset(SyntheticDataset(config.dataset, config.resolution, 1, n_eval, config.seed + 10_007))
        if config.paired:
            self.eval_source = to_signed(held[0])
            self.evaluator.set_reference(held[1])
        else:
            self.eval_source = eval_rng.standard_normal((n_eval,) + gspec.input_shape)
            self.evaluator.set_reference(held)

    # -- plumbing -----------------------------------------------------
    def _make_optimizers(self) -> None:
        c = self.config
        g_params = self.g_hyper.parameters() if self.g_hyper is not None else self.g_weights.tensors()
        d_params = self.d_hyper.parameters() if self.d_hyper is not None else self.d_weights.tensors()
        self.g_opt = SGD(g_params, c.lr, c.momentum)
        self.d_opt = SGD(d_params, c.lr, c.momentum)

    def generator_weights(self) -> WeightSet:
        return self.g_hyper.bind() if self.g_hyper is not None else self.g_weights

    def discriminator_weights(self) -> WeightSet:
        return self.d_hyper.bind() if self.d_hyper is not None else self.d_weights

    def _d_input(self, images: Tensor, source: np.ndarray | None) -> Tensor:
        if not self.conditional:
            return images
        return nm.concat([Tensor(source), images], axis=1)

    def _sample_inputs(self, idx: np.ndarray) -> np.ndarray:
        if self.config.paired:
            return self.source[idx]
        shape = (len(idx),) + self.g_spec.input_shape
        return self.noise_rng.standard_normal(shape)

    def _clear(self, params) -> None:
        for p in params:
            p.grad = None

    # -- one adversarial step -------------------------------------------
    def train_step(self, idx: np.ndarray) -> tuple[float, float]:
        c = self.config
        real = self.target[idx]
        src = self.source[idx] if c.paired else None
        g_in = Tensor(self._sample_inputs(idx))

        # (a) generator / hypernetwork update
        fake = forward(self.g_spec, self.generator_weights(), g_in)
        d_w = self.discriminator_weights()
        g_loss = generator_adv_loss(forward(self.d_spec, d_w, self._d_input(fake, src)), c.non_saturating)
        if c.paired and c.l1_weight > 0:
            g_loss = g_loss + c.l1_weight * nm.mean(nm.tabs(fake - Tensor(real)))
        self._check(g_loss, "generator")
        nm.backward(g_loss)
        self.g_opt.step()
        self._clear(self.d_opt.params)
        if self.d_hyper is not None:
            self._clear(v.values for v in self.d_hyper.trainable_latents())

        # (b) discriminator update
        fake_const = fake.detach()
        d_w = self.discriminator_weights()
        d_real = forward(self.d_spec, d_w, self._d_input(Tensor(real), src))
        d_fake = forward(self.d_spec, d_w, self._d_input(fake_const, src))
        d_loss = discriminator_loss(d_real, d_fake)
        self._check(d_loss, "discriminator")
        nm.backward(d_loss)
        self.d_opt.step()

        # (c) proximal step on latents; a network that already landed keeps its latents still
        if self.g_hyper is not None:
            self._latent_step(self.g_hyper, self.state.g_landed)
            if self.d_hyper is not None:
                self._latent_step(self.d_hyper, self.state.d_landed)
        self.state.step += 1
        return g_loss.item(), d_loss.item()

    def _latent_step(self, model: HyperModel, frozen: bool) -> None:
        for v in model.trainable_latents():
            if frozen:
                v.values.grad = None
            else:
                proximal_update(v, lr=self.config.lr, lam=self.config.lam)

    def _check(self, loss: Tensor, which: str) -> None:
        if not np.isfinite(loss.item()):
            self._abort(f"{which} loss is {loss.item()}")

    def _abort(self, reason: str):
        dump = {
            "reason": reason,
            "epoch": self.state.epoch,
            "step": self.state.step,
            "stage": self.state.stage,
            "removed_fraction": self.state.removed_fraction,
            "history_tail": self.state.history[-3:],
        }
        if self.g_hyper is not None:
            dump["latent_l1"] = {k: float(np.abs(v.values.data).sum()) for k, v in self.g_hyper.latents.items()}
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "abort_dump.json").write_text(json.dumps(dump, indent=2, sort_keys=True))
        raise TrainingAborted(f"{reason} (epoch {self.state.epoch}, step {self.state.step})")

    # -- compression bookkeeping --------------------------------------
    def _land(self, spec: NetSpec, latents: dict, masks: dict) -> dict:
        """Re-admit the strongest masked channels while the removed fraction overshoots ``target + tol``.

        Latents often cross the threshold in clusters, so a single step can
        jump well past the band; channels come back in order of decreasing
        |latent| and only if the network still meets the target with them.
        """
        c = self.config
        hi = c.target_compression + c.tol
        bits = {lid: m.bits.copy() for lid, m in masks.items()}

        def removed() -> float:
            return 1.0 - accounting.cost_report(spec, None, {k: Mask(k, b) for k, b in bits.items()}).ratio_remaining

        current = removed()
        candidates = sorted(
            ((-abs(float(latents[lid].values.data[i])), lid, int(i))
             for lid, b in bits.items() for i in np.flatnonzero(b == 0)),
        )
        for _, lid, i in candidates:
            if current <= hi + 1e-12:
                break
            bits[lid][i] = 1
            trial = removed()
            if accounting.reached_target(1.0 - trial, c.target_compression, c.tol):
                current = trial
            else:
                bits[lid][i] = 0
        return {k: Mask(k, b) for k, b in bits.items()}

    def _refresh_one(self, spec: NetSpec, model: HyperModel) -> tuple[dict, float, bool]:
        c = self.config
        masks = compute_masks(model.latents, c.tau)
        ratio = accounting.cost_report(spec, None, masks).ratio_remaining
        reached = accounting.reached_target(ratio, c.target_compression, c.tol)
        if reached and c.landing_guard and 1.0 - ratio > c.target_compression + c.tol:
            masks = self._land(spec, model.latents, masks)
            ratio = accounting.cost_report(spec, None, masks).ratio_remaining
        return masks, ratio, reached

    def refresh_masks(self) -> bool:
        """Recompute masks from the latents; True once every compressed network meets the target.

        A network that has met the target keeps its masks while the other one
        is still searching.
        """
        st = self.state
        if not st.g_landed:
            st.masks, st.achieved_ratio, st.g_landed = self._refresh_one(self.g_spec, self.g_hyper)
        if self.d_hyper is None:
            return st.g_landed
        if not st.d_landed:
            st.d_masks, st.d_achieved_ratio, st.d_landed = self._refresh_one(self.d_spec, self.d_hyper)
        return st.g_landed and st.d_landed

    def searching_epoch(self) -> bool:
        """Run one pass of searching steps; returns True if the target was reached mid-epoch."""
        if self.state.stage != SEARCHING:
            raise StateError("searching_epoch called outside the searching stage")
        g_sum = d_sum = 0.0
        count = 0
        reached = False
        try:
            for idx in batch_indices(self.n_train, self.config.batch_size, self.data_rng):
                g, d = self.train_step(idx)
                g_sum += g
                d_sum += d
                count += 1
                # Checking after every update lands closer to the target than an epoch-end check.
                if self.config.mask_cadence == "step" and self.refresh_masks():
                    reached = True
                    break
        except NumericError as exc:
            self._abort(str(exc))
        if self.config.mask_cadence == "epoch":
            reached = self.refresh_masks()
        self.state.epoch += 1
        self._epoch_losses = (g_sum / max(count, 1), d_sum / max(count, 1))
        return reached

    def switch_to_converging(self) -> None:
        st = self.state
        if st.stage != SEARCHING:
            raise StateError("already converging")
        if not (st.g_landed and (self.d_hyper is None or st.d_landed)):
            self.refresh_masks()
        with nm.no_grad():
            g_full = self.g_hyper.bind()
        self.g_spec, self.g_weights = compact(self.g_spec, g_full, st.masks)
        self.g_hyper = None
        if self.d_hyper is not None:
            with nm.no_grad():
                d_full = self.d_hyper.bind()
            self.d_spec, self.d_weights = compact(self.d_spec, d_full, st.d_masks)
            self.d_hyper = None
        self._make_optimizers()
        st.stage = CONVERGING
        st.switch_epoch = st.epoch
        st.switch_removed = st.removed_fraction

    def converging_epoch(self) -> None:
        if self.state.stage != CONVERGING:
            raise StateError("converging_epoch called before the stage switch")
        g_sum = d_sum = 0.0
        count = 0
        try:
            for idx in batch_indices(self.n_train, self.config.batch_size, self.data_rng):
                g, d = self.train_step(idx)
                g_sum += g
                d_sum += d
                count += 1
        except NumericError as exc:
            self._abort(str(exc))
        self.state.epoch += 1
        self._epoch_losses = (g_sum / max(count, 1), d_sum / max(count, 1))

    # -- evaluation -----------------------------------------------------
    def sample(self, inputs: np.ndarray | None = None) -> np.ndarray:
        inputs = self.eval_source if inputs is None else inputs
        with nm.no_grad():
            out = forward(self.g_spec, self.generator_weights(), Tensor(inputs))
        return to_unit(out.data)

    def evaluate(self) -> float:
        return self.evaluator.score(self.sample())

    def _log_epoch(self, stage: str) -> dict:
        st = self.state
        g_loss, d_loss = self._epoch_losses
        if st.stage == SEARCHING:
            rep = accounting.cost_report(self.g_spec, None, st.masks)
            params, macs = rep.masked_params, rep.masked_macs
        else:
            rep = accounting.cost_report(self.g_spec)
            params, macs = rep.params, rep.macs
        samples = self.sample()
        metric = self.evaluator.score(samples)
        row = {
            "epoch": st.epoch,
            "stage": stage,
            "g_loss": g_loss,
            "d_loss": d_loss,
            "removed_fraction": 1.0 - macs / self.full_g_cost.macs,
            "params": params,
            "macs": macs,
            "metric": metric,
        }
        st.history.append(row)
        log.info("epoch %d %s g=%.4f d=%.4f removed=%.4f metric=%.4f", st.epoch, stage, g_loss, d_loss,
                 row["removed_fraction"], metric)
        if self.out_dir is not None and self.config.sample_grids:
            sdir = self.out_dir / "samples"
            sdir.mkdir(parents=True, exist_ok=True)
            write_pgm(sdir / f"epoch_{st.epoch:03d}.pgm", make_grid(samples[:64]))
        return row

    def _checkpoint(self, tag: str) -> list[str]:
        if self.out_dir is None:
            return []
        cdir = self.out_dir / "checkpoints"
        cdir.mkdir(parents=True, exist_ok=True)
        meta = {"epoch": self.state.epoch, "stage": self.state.stage, "seed": self.config.seed,
                "removed_fraction": f"{self.state.removed_fraction:.10g}"}
        paths = []
        g_path = cdir / f"generator_{tag}.ckpt"
        save_checkpoint(g_path, self.g_spec, self.generator_weights(), dict(meta, role="generator"))
        paths.append(str(g_path))
        d_path = cdir / f"discriminator_{tag}.ckpt"
        save_checkpoint(d_path, self.d_spec, self.discriminator_weights(), dict(meta, role="discriminator"))
        paths.append(str(d_path))
        return paths

    # -- full run ---------------------------------------------------------
    def run(self) -> RunArtifacts:
        c = self.config
        st = self.state
        checkpoints: list[str] = []
        # Budget guard: stop searching once epochs >= total_epochs. Read literally as
        # "epochs <= total_epochs" it would break after the first pass.
        while st.stage == SEARCHING and st.epoch < c.total_epochs:
            reached = self.searching_epoch()
            self._log_epoch(SEARCHING)
            if reached:
                self.switch_to_converging()
                st.switch_metric = self.evaluate()
                checkpoints += self._checkpoint("switch")
        target_met = st.stage == CONVERGING
        if not target_met and c.total_epochs > 0:
            warnings.warn(
                f"epoch budget exhausted at removed fraction {st.removed_fraction:.4f} "
                f"before reaching target {c.target_compression}",
                RuntimeWarning,
                stacklevel=2,
            )
        while st.stage == CONVERGING and st.epoch < c.total_epochs:
            self.converging_epoch()
            self._log_epoch(CONVERGING)
        final_metric = st.history[-1]["metric"] if st.history else None
        if c.total_epochs > 0:
            checkpoints += self._checkpoint("final")
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "metrics.csv").write_text(format_log(st.history))
            (self.out_dir / "report.csv").write_text(self.report().to_csv())
            summary = {
                "config": asdict(c),
                "target_met": target_met,
                "switch_epoch": st.switch_epoch,
                "switch_removed_fraction": st.switch_removed,
                "switch_metric": st.switch_metric,
                "final_metric": final_metric,
                "granularity": accounting.channel_granularity(build_preset(c.preset)),
            }
            (self.out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        return RunArtifacts(
            generator=(self.g_spec, self.generator_weights()),
            discriminator=(self.d_spec, self.discriminator_weights()),
            log=list(st.history),
            state=st,
            target_met=target_met,
            final_metric=final_metric,
            checkpoints=checkpoints,
        )

    def report(self) -> accounting.CostReport:
        """Original generator cost with the current (or final) masks applied."""
        original = build_preset(self.config.preset)
        masks = self.state.masks if self.state.masks else None
        return accounting.cost_report(original, None, masks)


def train(config: TrainConfig, dataset=None, out_dir=None) -> RunArtifacts:
    return Trainer(config, dataset, out_dir).run()


# functional wrappers ---------------------------------------------------------


def searching_epoch(trainer: Trainer) -> TrainState:
    if trainer.searching_epoch():
        trainer._log_epoch(SEARCHING)
        trainer.switch_to_converging()
    else:
        trainer._log_epoch(SEARCHING)
    return trainer.state


def switch_to_converging(trainer: Trainer) -> TrainState:
    trainer.switch_to_converging()
    return trainer.state


def converging_epoch(trainer: Trainer) -> TrainState:
    trainer.converging_epoch()
    trainer._log_epoch(CONVERGING)
    return trainer.state


def dump_masks(masks: dict[str, Mask]) -> dict[str, list[int]]:
    return {k: m.bits.tolist() for k, m in masks.items()}
