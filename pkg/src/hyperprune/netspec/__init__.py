"""Layer graphs for generators and discriminators."""

from .ops import (
    HyperModel,
    WeightSet,
    apply_masks,
    bind_hyper,
    channel_bits,
    compact,
    forward,
    init_extras,
    init_hyper,
    init_latents,
    init_weights,
    input_bits,
    input_latent,
)
from .presets import GENERATOR_PRESETS, build_discriminator, build_preset
from .spec import LayerSpec, NetSpec, SpecBuilder
from .text import from_text, to_text

__all__ = [
    "GENERATOR_PRESETS",
    "HyperModel",
    "LayerSpec",
    "NetSpec",
    "SpecBuilder",
    "WeightSet",
    "apply_masks",
    "bind_hyper",
    "build_discriminator",
    "build_preset",
    "channel_bits",
    "compact",
    "forward",
    "from_text",
    "init_extras",
    "init_hyper",
    "init_latents",
    "init_weights",
    "input_bits",
    "input_latent",
    "to_text",
]
