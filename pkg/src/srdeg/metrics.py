"""Full-reference image quality indices: PSNR, SSIM, UIQI, VIF and KFS.

All functions take float images in [0, 1] (peak value 1.0). ``kfs`` is a
corner-matching surrogate on a 0-100 scale; only its orderings are
meaningful, not its absolute values.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import ndimage

PSNR_CAP = 100.0


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    uiqi: float
    vif: float
    kfs: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list[float]:
        return list(astuple(self))

    @classmethod
    def mean(cls, reports: list["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ValueError("no reports to average")
        arr = np.array([r.as_row() for r in reports], dtype=np.float64)
        return cls(*(float(v) for v in arr.mean(axis=0)))


def _pair(x, y, min_size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < min_size:
        raise ValueError(f"images must be 2-D and at least {min_size}x{min_size}, got {x.shape}")
    return x, y


def psnr(x, y) -> float:
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss1d(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2
    t = np.arange(size) - r
    g = np.exp(-(t * t) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation with ``g`` keeping only fully-covered positions."""
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    # scipy centres even-length filters at len // 2
    lo = len(g) // 2
    hi = len(g) - 1 - lo
    return out[lo : img.shape[0] - hi, lo : img.shape[1] - hi]


def ssim(x, y, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all Gaussian windows lying fully inside the image."""
    x, y = _pair(x, y, win_size)
    g = _gauss1d(win_size, sigma)
    c1 = k1**2
    c2 = k2**2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


_DEGENERATE = 1e-12


def uiqi(x, y, win_size: int = 8) -> float:
    """Universal image quality index averaged over sliding windows (stride 1).

    Windows where both images are constant score 1 when they are equal and
    0 otherwise; windows whose means are both zero but not constant score 0.
    """
    x, y = _pair(x, y, win_size)
    box = np.full(win_size, 1.0 / win_size)
    mx = _filter_valid(x, box)
    my = _filter_valid(y, box)
    sxx = _filter_valid(x * x, box) - mx * mx
    syy = _filter_valid(y * y, box) - my * my
    sxy = _filter_valid(x * y, box) - mx * my
    var_term = sxx + syy
    mean_term = mx * mx + my * my
    flat = var_term <= _DEGENERATE
    dark = mean_term <= _DEGENERATE
    ok = ~(flat | dark)
    q = np.zeros_like(mx)
    q[ok] = 4 * sxy[ok] * mx[ok] * my[ok] / (var_term[ok] * mean_term[ok])
    if flat.any():
        same = np.abs(mx - my) <= 1e-12
        q[flat & same] = 1.0
    return float(np.mean(q))


_VIF_SIGMA_N2 = 2.0 / 255.0**2
# 8-bit-scale constants (sigma_n^2 = 2, eps = 1e-10) expressed for [0, 1] intensities
_VIF_EPS = 1e-10 / 255.0**2


def vif(ref, dist, scales: int = 4) -> float:
    """Pixel-domain visual information fidelity of ``dist`` against ``ref``.

    Scale ``s`` (1-based) uses a Gaussian window of ``2**(scales - s + 1) + 1``
    taps with sigma ``taps / 5`` for local moments; before every scale but the
    first both images are smoothed with that window and decimated by 2.
    """
    ref, dist = _pair(ref, dist, 2**scales * 2)
    num = 0.0
    den = 0.0
    for s in range(1, scales + 1):
        taps = 2 ** (scales - s + 1) + 1
        g = _gauss1d(taps, taps / 5.0)
        if s > 1:
            ref = ndimage.correlate1d(ref, g, axis=0, mode="nearest")
            ref = ndimage.correlate1d(ref, g, axis=1, mode="nearest")[::2, ::2]
            dist = ndimage.correlate1d(dist, g, axis=0, mode="nearest")
            dist = ndimage.correlate1d(dist, g, axis=1, mode="nearest")[::2, ::2]
        mu1 = _filter_valid(ref, g)
        mu2 = _filter_valid(dist, g)
        s1 = np.maximum(_filter_valid(ref * ref, g) - mu1 * mu1, 0.0)
        s2 = np.maximum(_filter_valid(dist * dist, g) - mu2 * mu2, 0.0)
        s12 = _filter_valid(ref * dist, g) - mu1 * mu2

        gain = s12 / (s1 + _VIF_EPS)
        sv = s2 - gain * s12
        low1 = s1 < _VIF_EPS
        gain[low1] = 0.0
        sv[low1] = s2[low1]
        s1 = np.where(low1, 0.0, s1)
        low2 = s2 < _VIF_EPS
        gain[low2] = 0.0
        sv[low2] = 0.0
        neg = gain < 0
        sv[neg] = s2[neg]
        gain[neg] = 0.0
        sv = np.maximum(sv, _VIF_EPS)

        num += float(np.sum(np.log2(1.0 + gain * gain * s1 / (sv + _VIF_SIGMA_N2))))
        den += float(np.sum(np.log2(1.0 + s1 / _VIF_SIGMA_N2)))
    if den == 0:
        # a featureless reference carries no information to preserve
        return 1.0 if num == 0 else 0.0
    return num / den


# -- keypoint feature similarity ---------------------------------------------

HARRIS_K = 0.04
HARRIS_SIGMA = 1.0
DESC_SIZE = 9


def harris_response(img: np.ndarray, sigma: float = HARRIS_SIGMA, k: float = HARRIS_K) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    ix = ndimage.sobel(img, axis=1, mode="nearest")
    iy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corners(img: np.ndarray, rel_threshold: float = 0.01) -> np.ndarray:
    """``(row, col)`` corners above ``rel_threshold * max`` surviving 3x3 NMS.

    Corners whose descriptor window would leave the image are discarded.
    """
    r = harris_response(img)
    peak = r.max()
    if not peak > 0:
        return np.zeros((0, 2), dtype=int)
    local_max = ndimage.maximum_filter(r, size=3, mode="nearest")
    mask = (r >= local_max) & (r > rel_threshold * peak)
    half = DESC_SIZE // 2
    mask[:half, :] = mask[-half:, :] = False
    mask[:, :half] = mask[:, -half:] = False
    return np.argwhere(mask)


def describe(img: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-std 9x9 neighbourhood vectors, one row per corner."""
    half = DESC_SIZE // 2
    out = np.zeros((len(corners), DESC_SIZE * DESC_SIZE))
    for i, (r, c) in enumerate(corners):
        patch = img[r - half : r + half + 1, c - half : c + half + 1].ravel()
        std = patch.std()
        out[i] = (patch - patch.mean()) / std if std > 0 else 0.0
    return out


def match_descriptors(da: np.ndarray, db: np.ndarray, ratio: float = 0.5) -> list[tuple[int, int]]:
    """Greedy mutual-nearest matching with distance below ``ratio * norm``.

    ``norm`` is the length of a unit-std descriptor, ``sqrt(DESC_SIZE**2)``.
    """
    if len(da) == 0 or len(db) == 0:
        return []
    dist = np.sqrt(np.maximum(
        (da * da).sum(1)[:, None] + (db * db).sum(1)[None, :] - 2 * da @ db.T, 0.0))
    limit = ratio * DESC_SIZE
    nn_ab = dist.argmin(axis=1)
    nn_ba = dist.argmin(axis=0)
    candidates = [(dist[i, j], i, j) for i, j in enumerate(nn_ab) if nn_ba[j] == i and dist[i, j] < limit]
    candidates.sort()
    used_a, used_b, matches = set(), set(), []
    for _, i, j in candidates:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            matches.append((int(i), int(j)))
    return matches


def kfs(x, y) -> float:
    x, y = _pair(x, y, 32)
    kx = harris_corners(x)
    ky = harris_corners(y)
    matches = match_descriptors(describe(x, kx), describe(y, ky))
    return 100.0 * len(matches) / max(len(kx), len(ky), 1)


def evaluate_all(ref, test) -> MetricReport:
    return MetricReport(
        psnr=psnr(ref, test),
        ssim=ssim(ref, test),
        uiqi=uiqi(ref, test),
        vif=vif(ref, test),
        kfs=kfs(ref, test),
    )
