"""Built-in generator and discriminator architectures.

The ``*_256`` generators follow the public reference layer schedules
(ResNet generator with 9 blocks, U-Net with 8 downsamplings, both with
ngf=64) and are mainly used for cost accounting. Reflection padding in the
ResNet generator is modelled as zero padding; dropout in the U-Net decoder
is omitted. Neither changes parameter or MAC counts.
"""

from __future__ import annotations

from ..errors import ArgumentError
from .spec import NetSpec, SpecBuilder

GENERATOR_PRESETS = ("dcgan_toy", "unet_toy", "resnet_toy", "unet_pix2pix_256", "resnet_cyclegan_256", "dcgan_cifar")


def dcgan_generator(name: str, nz: int, widths: list[int], out_channels: int) -> NetSpec:
    """Noise (nz x 1 x 1) -> 4x4 -> ... doubling resolution per stage."""
    b = SpecBuilder(name, (nz, 1, 1), input_id="z")
    b.conv_transpose("g1", widths[0], 4, 1, 0)
    b.norm("g1_bn", "batch")
    b.act("g1_act", "relu")
    for i, width in enumerate(widths[1:], start=2):
        b.conv_transpose(f"g{i}", width, 4, 2, 1)
        b.norm(f"g{i}_bn", "batch")
        b.act(f"g{i}_act", "relu")
    b.conv_transpose(f"g{len(widths) + 1}", out_channels, 4, 2, 1, prunable=False)
    b.act("out", "tanh")
    return b.build()


def dcgan_discriminator(name: str, in_shape: tuple[int, int, int], widths: list[int]) -> NetSpec:
    """Strided 4x4 convs down to 4x4, then a 4x4 valid conv to a single logit."""
    b = SpecBuilder(name, in_shape, input_id="x")
    b.conv("d1", widths[0], 4, 2, 1)
    b.act("d1_act", "leaky_relu", 0.2)
    for i, width in enumerate(widths[1:], start=2):
        b.conv(f"d{i}", width, 4, 2, 1)
        b.norm(f"d{i}_bn", "batch")
        b.act(f"d{i}_act", "leaky_relu", 0.2)
    b.conv("logit", 1, 4, 1, 0, prunable=False)
    return b.build()


def unet_generator(name: str, in_channels: int, out_channels: int, ngf: int, num_downs: int,
                   resolution: int, norm_kind: str = "instance") -> NetSpec:
    """U-Net with a skip concatenation at every scale.

    Down path: conv4x4/2 -> norm -> leaky relu (no norm on the outermost and
    innermost convs). Up path: relu -> convT4x4/2 -> norm, then concatenation
    [skip, decoder] along channels. Convs carry biases since instance norm
    has its own affine shift.
    """
    use_bias = norm_kind == "instance"
    b = SpecBuilder(name, (in_channels, resolution, resolution), input_id="x")
    widths = [min(ngf * 2 ** i, ngf * 8) for i in range(num_downs)]
    skips = []
    b.conv("down1", widths[0], 4, 2, 1, bias=use_bias)
    skips.append(b.last)
    for i in range(1, num_downs):
        b.act(f"down{i + 1}_act", "leaky_relu", 0.2)
        b.conv(f"down{i + 1}", widths[i], 4, 2, 1, bias=use_bias)
        if i < num_downs - 1:
            b.norm(f"down{i + 1}_norm", norm_kind)
        skips.append(b.last)
    # innermost feature map is skips[-1]; decode back up
    for i in range(num_downs - 1, 0, -1):
        b.act(f"up{i + 1}_act", "relu")
        b.conv_transpose(f"up{i + 1}", widths[i - 1], 4, 2, 1, bias=use_bias)
        b.norm(f"up{i + 1}_norm", norm_kind)
        b.concat(f"skip{i}", [skips[i - 1], b.last])
    b.act("up1_act", "relu")
    b.conv_transpose("up1", out_channels, 4, 2, 1, bias=True, prunable=False)
    b.act("out", "tanh")
    return b.build()


def resnet_generator(name: str, in_channels: int, out_channels: int, ngf: int, n_blocks: int,
                     resolution: int, n_down: int = 2) -> NetSpec:
    """ResNet generator: 7x7 stem, stride-2 3x3 downsamples, residual blocks, transposed upsamples.

    Every residual block's second conv shares the trunk latent so the
    identity path and the block output stay aligned under pruning.
    """
    b = SpecBuilder(name, (in_channels, resolution, resolution), input_id="x")
    b.conv("stem", ngf, 7, 1, 3, bias=True)
    b.norm("stem_norm")
    b.act("stem_act", "relu")
    width = ngf
    for i in range(1, n_down + 1):
        width = ngf * 2 ** i
        b.conv(f"down{i}", width, 3, 2, 1, bias=True)
        b.norm(f"down{i}_norm")
        b.act(f"down{i}_act", "relu")
    trunk_latent = f"down{n_down}"
    for blk in range(1, n_blocks + 1):
        entry = b.last
        b.conv(f"res{blk}a", width, 3, 1, 1, bias=True)
        b.norm(f"res{blk}a_norm")
        b.act(f"res{blk}a_act", "relu")
        b.conv(f"res{blk}b", width, 3, 1, 1, bias=True, latent=trunk_latent)
        b.norm(f"res{blk}b_norm")
        b.add(f"res{blk}", [entry, b.last])
    for i in range(n_down, 0, -1):
        width = ngf * 2 ** (i - 1)
        b.conv_transpose(f"up{i}", width, 3, 2, 1, output_padding=1, bias=True)
        b.norm(f"up{i}_norm")
        b.act(f"up{i}_act", "relu")
    b.conv("head", out_channels, 7, 1, 3, bias=True, prunable=False)
    b.act("out", "tanh")
    return b.build()


def patch_discriminator(name: str, in_channels: int, ndf: int, n_layers: int, resolution: int,
                        norm_kind: str = "instance") -> NetSpec:
    """PatchGAN: 4x4 convs, the last two at stride 1, producing a map of logits."""
    b = SpecBuilder(name, (in_channels, resolution, resolution), input_id="x")
    b.conv("d1", ndf, 4, 2, 1, bias=True)
    b.act("d1_act", "leaky_relu", 0.2)
    width = ndf
    for i in range(2, n_layers + 1):
        width = min(ndf * 2 ** (i - 1), ndf * 8)
        b.conv(f"d{i}", width, 4, 2, 1, bias=True)
        b.norm(f"d{i}_norm", norm_kind)
        b.act(f"d{i}_act", "leaky_relu", 0.2)
    width = min(ndf * 2 ** n_layers, ndf * 8)
    b.conv(f"d{n_layers + 1}", width, 4, 1, 1, bias=True)
    b.norm(f"d{n_layers + 1}_norm", norm_kind)
    b.act(f"d{n_layers + 1}_act", "leaky_relu", 0.2)
    b.conv("logit", 1, 4, 1, 1, bias=True, prunable=False)
    return b.build()


def build_preset(name: str) -> NetSpec:
    """Generator architecture by preset name."""
    if name == "dcgan_toy":
        return dcgan_generator(name, nz=32, widths=[64, 32], out_channels=1)
    if name == "dcgan_cifar":
        return dcgan_generator(name, nz=100, widths=[256, 128, 64], out_channels=3)
    if name == "unet_toy":
        return unet_generator(name, 1, 1, ngf=8, num_downs=4, resolution=16)
    if name == "unet_pix2pix_256":
        return unet_generator(name, 3, 3, ngf=64, num_downs=8, resolution=256)
    if name == "resnet_toy":
        return resnet_generator(name, 1, 1, ngf=8, n_blocks=2, resolution=16)
    if name == "resnet_cyclegan_256":
        return resnet_generator(name, 3, 3, ngf=64, n_blocks=9, resolution=256)
    raise ArgumentError(f"unknown preset {name!r}; choose from {', '.join(GENERATOR_PRESETS)}")


def build_discriminator(preset: str, conditional: bool = False) -> NetSpec:
    """Discriminator that pairs with a generator preset.

    ``conditional`` doubles the input channels so the discriminator sees
    (source, image) concatenated, as in paired translation.
    """
    gen = build_preset(preset)
    c, h, _ = gen.output_shape
    if conditional:
        c += gen.input_shape[0]
    if preset == "dcgan_toy":
        return dcgan_discriminator("dcgan_toy_d", (c, h, h), [32, 64])
    if preset == "dcgan_cifar":
        return dcgan_discriminator("dcgan_cifar_d", (c, h, h), [64, 128, 256])
    if preset in ("unet_toy", "resnet_toy"):
        return patch_discriminator(f"{preset}_d", c, ndf=16, n_layers=2, resolution=h)
    if preset in ("unet_pix2pix_256", "resnet_cyclegan_256"):
        return patch_discriminator(f"{preset}_d", c, ndf=64, n_layers=3, resolution=h)
    raise ArgumentError(f"unknown preset {preset!r}")
