"""Sample-quality metrics for desk-scale runs.

``rf_frechet`` keeps the FID recipe (Frechet distance between Gaussian fits
of image features) but uses a fixed, seeded random conv stack as the
feature extractor. Its values are not comparable with Inception-based FID.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import numeric as nm
from .errors import ArgumentError

METRICS = ("rf_frechet", "mmd")
MIN_SAMPLES = 64


@dataclass(frozen=True)
class EvalMetric:
    kind: str = "rf_frechet"
    feature_seed: int = 1234
    sample_count: int = 256

    def __post_init__(self):
        if self.kind not in METRICS:
            raise ArgumentError(f"unknown metric {self.kind!r}; choose from {', '.join(METRICS)}")


class RandomFeatures:
    """Three random conv + ReLU stages, then global mean and max pooling."""

    def __init__(self, channels: int, seed: int = 1234, widths=(16, 32, 32)):
        rng = np.random.default_rng(seed)
        self.weights = []
        c = channels
        for i, w in enumerate(widths):
            k = 3 if i == 0 else 4
            self.weights.append(nm.Tensor(rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), size=(w, c, k, k))))
            c = w
        self.dim = 2 * c

    def __call__(self, images: np.ndarray) -> np.ndarray:
        x = nm.Tensor(images)
        with nm.no_grad():
            x = nm.relu(nm.conv2d(x, self.weights[0], stride=1, pad=1))
            for w in self.weights[1:]:
                # stride-2 stages stop once the map is too small to halve evenly
                if x.shape[2] < 4 or x.shape[2] % 2 or x.shape[3] % 2:
                    break
                x = nm.relu(nm.conv2d(x, w, stride=2, pad=1))
        d = x.data
        return np.concatenate([d.mean(axis=(2, 3)), d.max(axis=(2, 3))], axis=1)


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    diff = mu1 - mu2
    covmean, _ = linalg.sqrtm(sigma1 @ sigma2, disp=False)
    if not np.all(np.isfinite(covmean)):
        offset = np.eye(sigma1.shape[0]) * 1e-6
        covmean = linalg.sqrtm((sigma1 + offset) @ (sigma2 + offset))
    covmean = np.real(covmean)
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(covmean))
    return max(value, 0.0)


def gaussian_fit(features: np.ndarray):
    return features.mean(axis=0), np.cov(features, rowvar=False)


def mmd_unbiased(x: np.ndarray, y: np.ndarray, bandwidth: float | None = None) -> float:
    """Unbiased MMD^2 with an RBF kernel, clipped at zero.

    ``bandwidth`` defaults to the median pairwise distance of the pooled sample.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    n, m = len(x), len(y)
    pooled = np.concatenate([x, y])
    sq = np.sum(pooled * pooled, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pooled @ pooled.T, 0.0)
    if bandwidth is None:
        upper = d2[np.triu_indices(n + m, k=1)]
        med = np.median(np.sqrt(upper))
        bandwidth = med if med > 0 else 1.0
    k = np.exp(-d2 / (2.0 * bandwidth * bandwidth))
    kxx, kyy, kxy = k[:n, :n], k[n:, n:], k[:n, n:]
    term_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    value = term_x + term_y - 2.0 * kxy.mean()
    return max(float(value), 0.0)


class Evaluator:
    """Caches the feature extractor (and optionally reference features) for repeated scoring."""

    def __init__(self, metric: EvalMetric, channels: int):
        self.metric = metric
        self.features = RandomFeatures(channels, metric.feature_seed)
        self._ref = None

    def set_reference(self, real: np.ndarray) -> None:
        _check_count(real)
        feats = self.features(real)
        self._ref = (feats, gaussian_fit(feats))

    def score(self, fake: np.ndarray, real: np.ndarray | None = None) -> float:
        _check_count(fake)
        if real is not None:
            self.set_reference(real)
        if self._ref is None:
            raise ArgumentError("no reference samples set")
        ref_feats, (mu_r, cov_r) = self._ref
        fake_feats = self.features(fake)
        if self.metric.kind == "rf_frechet":
            mu_f, cov_f = gaussian_fit(fake_feats)
            return frechet_distance(mu_r, cov_r, mu_f, cov_f)
        return mmd_unbiased(ref_feats, fake_feats)


def _check_count(samples) -> None:
    if len(samples) < MIN_SAMPLES:
        raise ArgumentError(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")


def eval_metric(real: np.ndarray, fake: np.ndarray, metric: EvalMetric | str = "rf_frechet") -> float:
    """Distance between two image sets (N, C, H, W); lower is closer."""
    if isinstance(metric, str):
        metric = EvalMetric(metric)
    _check_count(real)
    _check_count(fake)
    ev = Evaluator(metric, real.shape[1])
    return ev.score(fake, real)
