"""Seeded synthetic image datasets for desk-scale training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

DATASET_KINDS = ("blobs_unconditional", "blobs_to_edges_paired")


@dataclass(frozen=True)
class SyntheticDataset:
    kind: str = "blobs_unconditional"
    resolution: int = 16
    channels: int = 1
    size: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ArgumentError(f"unknown dataset {self.kind!r}; choose from {', '.join(DATASET_KINDS)}")
        if self.resolution < 4 or self.size < 1 or self.channels < 1:
            raise ArgumentError("resolution >= 4, size >= 1 and channels >= 1 are required")

    @property
    def paired(self) -> bool:
        return self.kind == "blobs_to_edges_paired"


def blob_images(n: int, resolution: int, rng: np.random.Generator, channels: int = 1) -> np.ndarray:
    """Sums of 1-3 isotropic Gaussian bumps, clipped to [0, 1]; shape (n, channels, R, R)."""
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    out = np.zeros((n, channels, resolution, resolution))
    lo, hi = 0.2 * resolution, 0.8 * resolution
    for i in range(n):
        for _ in range(int(rng.integers(1, 4))):
            cy, cx = rng.uniform(lo, hi, size=2)
            sigma = rng.uniform(0.09, 0.19) * resolution
            amp = rng.uniform(0.6, 1.0)
            bump = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
            tint = rng.uniform(0.7, 1.0, size=channels) if channels > 1 else np.ones(1)
            out[i] += tint[:, None, None] * bump
    return np.clip(out, 0.0, 1.0)


def edge_map(images: np.ndarray, threshold: float = 0.25) -> np.ndarray:
    """Binary edges from central-difference gradient magnitude (constant image -> zeros)."""
    padded = np.pad(images, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    gy = 0.5 * (padded[:, :, 2:, 1:-1] - padded[:, :, :-2, 1:-1])
    gx = 0.5 * (padded[:, :, 1:-1, 2:] - padded[:, :, 1:-1, :-2])
    return (np.hypot(gx, gy) > threshold).astype(np.float64)


def gen_dataset(spec: SyntheticDataset):
    """Materialise a dataset.

    ``blobs_unconditional`` returns an array (N, C, R, R) in [0, 1].
    ``blobs_to_edges_paired`` returns ``(source, target)`` where source is the
    edge map of the filled blob and target the filled blob itself.
    """
    rng = np.random.default_rng(spec.seed)
    images = blob_images(spec.size, spec.resolution, rng, spec.channels)
    if not spec.paired:
        return images
    filled = (images > 0.35).astype(np.float64)
    return edge_map(filled), filled


def to_signed(x: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1] (the generator's tanh range)."""
    return 2.0 * x - 1.0


def to_unit(x: np.ndarray) -> np.ndarray:
    return np.clip(0.5 * (x + 1.0), 0.0, 1.0)


def batch_indices(n: int, batch_size: int, rng: np.random.Generator, drop_last: bool = True):
    """One epoch of shuffled index batches in a seed-determined order."""
    order = rng.permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield order[start:start + batch_size]
