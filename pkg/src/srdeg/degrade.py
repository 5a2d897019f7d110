"""Low-resolution training data generation.

Resampling kernels (nearest neighbour, bilinear, bicubic, Lanczos), Gaussian
blur, additive Gaussian noise and the degradation recipes built from them.
All operations are pure functions of their inputs and seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np


class Kernel(str, Enum):
    NN = "nn"
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"
    LANCZOS = "lanczos"

    @property
    def support_radius(self) -> float:
        return _SUPPORT[self]


_SUPPORT = {Kernel.NN: 0.5, Kernel.BILINEAR: 1.0, Kernel.BICUBIC: 2.0, Kernel.LANCZOS: 3.0}

BICUBIC_A = -0.5
LANCZOS_A = 3


def kernel_weight(kind: Kernel | str, x):
    """Evaluate a resampling kernel at offset(s) ``x`` (in source pixels)."""
    kind = Kernel(kind)
    ax = np.abs(np.asarray(x, dtype=np.float64))
    if kind is Kernel.NN:
        w = (ax < 0.5).astype(np.float64)
    elif kind is Kernel.BILINEAR:
        w = np.maximum(0.0, 1.0 - ax)
    elif kind is Kernel.BICUBIC:
        a = BICUBIC_A
        ax2 = ax * ax
        ax3 = ax2 * ax
        near = (a + 2) * ax3 - (a + 3) * ax2 + 1
        far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
        w = np.where(ax < 1, near, np.where(ax < 2, far, 0.0))
    else:
        # np.sinc(0) == 1; nonzero integers are forced to the exact zero that sin(pi k) misses
        on_zero = (ax == np.round(ax)) & (ax != 0)
        w = np.where((ax < LANCZOS_A) & ~on_zero, np.sinc(ax) * np.sinc(ax / LANCZOS_A), 0.0)
    return w if w.ndim else float(w)


def resample_taps(n_in: int, scale: int, kind: Kernel | str) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and weights, each ``(n_in // scale, taps)``, for one axis.

    Output sample ``i`` sits at source coordinate ``(i + 0.5) * scale - 0.5``.
    The kernel is stretched by ``scale`` (antialiasing), taps beyond the
    border are clamped to the edge pixel, and each row of weights is
    normalised to sum 1. Nearest neighbour picks ``floor(src + 0.5)``.
    """
    kind = Kernel(kind)
    if n_in % scale:
        raise ValueError(f"size {n_in} is not divisible by scale {scale}")
    n_out = n_in // scale
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    if kind is Kernel.NN:
        idx = np.clip(np.floor(centers + 0.5).astype(int), 0, n_in - 1)
        return idx[:, None], np.ones((n_out, 1))
    radius = kind.support_radius * scale
    offsets = np.arange(-math.ceil(radius) - 1, math.ceil(radius) + 2)
    taps = np.floor(centers).astype(int)[:, None] + offsets[None, :]
    w = kernel_weight(kind, (taps - centers[:, None]) / scale)
    w = w / w.sum(axis=1, keepdims=True)
    return np.clip(taps, 0, n_in - 1), w


def resample_weights(n_in: int, scale: int, kind: Kernel | str) -> np.ndarray:
    """Dense ``(n_in // scale, n_in)`` matrix equivalent of :func:`resample_taps`."""
    idx, w = resample_taps(n_in, scale, kind)
    mat = np.zeros((idx.shape[0], n_in))
    for i in range(idx.shape[0]):
        np.add.at(mat[i], idx[i], w[i])
    return mat


def _resample_axis0(img: np.ndarray, scale: int, kind: Kernel) -> np.ndarray:
    idx, w = resample_taps(img.shape[0], scale, kind)
    ref = img[idx[:, idx.shape[1] // 2]]
    # accumulate differences from a reference tap so constant inputs stay bit-exact
    out = ref.copy()
    for t in range(idx.shape[1]):
        out += w[:, t, None] * (img[idx[:, t]] - ref)
    return out


def resample_down(img: np.ndarray, scale: int, kind: Kernel | str) -> np.ndarray:
    """Separable downsampling by an integer factor, clamped to [0, 1]."""
    kind = Kernel(kind)
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h % scale or w % scale:
        raise ValueError(f"image {w}x{h} is not divisible by scale {scale}")
    rows = _resample_axis0(img, scale, kind)
    out = _resample_axis0(rows.T, scale, kind).T
    return np.clip(out, 0.0, 1.0)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(k * k) / (2 * sigma * sigma))
    return g / g.sum()


def _correlate_edge(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for t, wt in enumerate(kernel):
        out += wt * np.take(padded, np.arange(t, t + n), axis=axis)
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur (radius ``ceil(3 sigma)``, edge-clamped borders)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    g = gaussian_kernel1d(sigma)
    img = np.asarray(img, dtype=np.float64)
    return _correlate_edge(_correlate_edge(img, g, 0), g, 1)


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)


# -- degradation recipes ---------------------------------------------------

PLAIN_KINDS = ("nn", "bilinear", "bicubic", "lanczos")
ALL_KINDS = PLAIN_KINDS + ("lanczos-b", "lanczos-n", "lanczos-bn", "mixed")

DEFAULT_SIGMA_BLUR = 0.7
_PRESETS = {
    "lanczos-b": (DEFAULT_SIGMA_BLUR, 0.0),
    "lanczos-n": (0.0, 0.01),
    "lanczos-bn": (DEFAULT_SIGMA_BLUR, 0.022),
}
_ALIASES = {
    "nearest": "nn",
    "lanczosb": "lanczos-b",
    "lanczosn": "lanczos-n",
    "lanczosbn": "lanczos-bn",
}


@dataclass(frozen=True)
class DegradationSpec:
    """One LR-generation recipe.

    ``kind`` is a lower-case tag from ``ALL_KINDS``. Blur is only allowed
    for the ``-b``/``-bn`` variants and noise only for ``-n``/``-bn``.
    """

    kind: str
    sigma_blur: float = 0.0
    sigma_noise: float = 0.0
    scale: int = 2

    def __post_init__(self):
        kind = self.kind.lower().replace("_", "-")
        kind = _ALIASES.get(kind.replace("-", ""), kind)
        object.__setattr__(self, "kind", kind)
        if kind not in ALL_KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        if self.sigma_blur < 0 or self.sigma_noise < 0:
            raise ValueError("sigmas must be non-negative")
        if self.sigma_blur > 0 and kind not in ("lanczos-b", "lanczos-bn"):
            raise ValueError(f"{kind} does not take a blur sigma")
        if self.sigma_noise > 0 and kind not in ("lanczos-n", "lanczos-bn"):
            raise ValueError(f"{kind} does not take a noise sigma")

    @classmethod
    def preset(cls, kind: str, scale: int = 2) -> "DegradationSpec":
        """Recipe with the standard parameters for ``kind``."""
        probe = cls(kind, scale=scale)
        blur, noise = _PRESETS.get(probe.kind, (0.0, 0.0))
        return cls(probe.kind, blur, noise, scale)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        """Build from JSON; omitted sigmas fall back to the preset values."""
        base = cls.preset(d["kind"], int(d.get("scale", 2)))
        return cls(
            base.kind,
            float(d.get("sigma_blur", base.sigma_blur)),
            float(d.get("sigma_noise", base.sigma_noise)),
            base.scale,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def tag(self) -> str:
        return self.kind


def mixed_choice(seed: int) -> str:
    """Plain kernel picked by the ``mixed`` recipe for this seed."""
    rng = np.random.default_rng(seed)
    return PLAIN_KINDS[int(rng.integers(len(PLAIN_KINDS)))]


def degrade(img: np.ndarray, spec: DegradationSpec, seed: int = 0) -> np.ndarray:
    """Apply ``spec`` to an HR image: blur, then downsample, then add noise."""
    img = np.asarray(img, dtype=np.float64)
    kind = spec.kind
    if kind == "mixed":
        kind = mixed_choice(seed)
    kernel = Kernel(kind.split("-")[0])
    if spec.sigma_blur > 0:
        img = gaussian_blur(img, spec.sigma_blur)
    lr = resample_down(img, spec.scale, kernel)
    if spec.sigma_noise > 0:
        lr = add_gaussian_noise(lr, spec.sigma_noise, seed)
    return lr
