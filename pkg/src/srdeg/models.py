"""FSRCNN and SRResNet builders over the :mod:`srdeg.nn` layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import Add, BatchNorm2d, Conv2d, Deconv2d, ModelGraph, PixelShuffle, PReLU


@dataclass(frozen=True)
class FsrcnnConfig:
    d: int = 56
    s: int = 16
    m: int = 4
    scale: int = 2

    def __post_init__(self):
        if not (self.d >= self.s >= 1 and self.m >= 0):
            raise ValueError(f"invalid FSRCNN config {self}")
        if self.scale != 2:
            raise ValueError("the FSRCNN deconvolution is laid out for scale 2 only")


@dataclass(frozen=True)
class SrresnetConfig:
    n_rb: int = 16
    n_ub: int = 1
    base_channels: int = 64

    def __post_init__(self):
        if self.n_rb < 1 or self.n_ub < 1 or self.base_channels < 1:
            raise ValueError(f"invalid SRResNet config {self}")


# Output layers start at mid-grey so early steps are not spent shifting the DC level.
OUTPUT_BIAS = 0.5

FSRCNN_TINY = FsrcnnConfig(d=16, s=8, m=2)
SRRESNET_TINY = SrresnetConfig(n_rb=2)

PRESETS = {
    "fsrcnn": FsrcnnConfig(),
    "fsrcnn-tiny": FSRCNN_TINY,
    "srresnet": SrresnetConfig(),
    "srresnet-tiny": SRRESNET_TINY,
}


def build_fsrcnn(cfg: FsrcnnConfig = FsrcnnConfig(), seed: int = 0) -> ModelGraph:
    """Feature extraction, shrinking, ``m`` mapping layers, expansion, deconvolution.

    The final layer is a 9x9 stride-2 transposed convolution producing one
    channel at twice the input resolution.
    """
    rng = np.random.default_rng(seed)
    layers = [Conv2d(1, cfg.d, 5, pad=2, rng=rng), PReLU(cfg.d),
              Conv2d(cfg.d, cfg.s, 1, rng=rng), PReLU(cfg.s)]
    for _ in range(cfg.m):
        layers += [Conv2d(cfg.s, cfg.s, 3, pad=1, rng=rng), PReLU(cfg.s)]
    layers += [Conv2d(cfg.s, cfg.d, 1, rng=rng), PReLU(cfg.d),
               Deconv2d(cfg.d, 1, 9, stride=2, pad=4, output_pad=1, rng=rng)]
    layers[-1].bias.value[:] = OUTPUT_BIAS
    return ModelGraph(layers, scale=cfg.scale, kind="fsrcnn", config={**asdict(cfg), "seed": seed})


def build_srresnet(cfg: SrresnetConfig = SrresnetConfig(), seed: int = 0) -> ModelGraph:
    """Residual trunk with a global skip, then ``n_ub`` pixel-shuffle x2 blocks."""
    rng = np.random.default_rng(seed)
    c = cfg.base_channels
    layers = [Conv2d(1, c, 9, pad=4, rng=rng), PReLU(c)]
    trunk_in = len(layers) - 1
    for _ in range(cfg.n_rb):
        block_in = len(layers) - 1
        layers += [
            Conv2d(c, c, 3, pad=1, rng=rng), BatchNorm2d(c), PReLU(c),
            Conv2d(c, c, 3, pad=1, rng=rng), BatchNorm2d(c),
            Add(block_in),
        ]
    layers += [Conv2d(c, c, 3, pad=1, rng=rng), BatchNorm2d(c), Add(trunk_in)]
    for _ in range(cfg.n_ub):
        layers += [Conv2d(c, 4 * c, 3, pad=1, rng=rng), PixelShuffle(2), PReLU(c)]
    layers.append(Conv2d(c, 1, 9, pad=4, rng=rng))
    layers[-1].bias.value[:] = OUTPUT_BIAS
    return ModelGraph(layers, scale=2**cfg.n_ub, kind="srresnet", config={**asdict(cfg), "seed": seed})


def build_model(kind: str, config: dict | None = None) -> ModelGraph:
    """Build by name (``fsrcnn``, ``srresnet`` or a ``-tiny`` preset) with overrides."""
    config = dict(config or {})
    seed = int(config.pop("seed", 0))
    if kind not in PRESETS:
        raise ValueError(f"unknown model kind {kind!r}")
    base = asdict(PRESETS[kind])
    base.update(config)
    if kind.startswith("fsrcnn"):
        return build_fsrcnn(FsrcnnConfig(**base), seed)
    return build_srresnet(SrresnetConfig(**base), seed)
