"""Image file I/O, grayscale conversion, patch sampling and synthetic textures.

Images are plain 2-D ``float64`` numpy arrays of shape ``(height, width)``
holding intensities in ``[0, 1]``. The only on-disk format is binary PGM
(``P5``) with ``maxval`` 255.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PGMError(ValueError):
    """Raised when a PGM byte stream cannot be parsed."""


@dataclass
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        lh, lw = self.lr.shape
        hh, hw = self.hr.shape
        if hh % lh or hw % lw or hh // lh != hw // lw or hh // lh < 2:
            raise ValueError(
                f"HR shape {self.hr.shape} is not an integer multiple of LR shape {self.lr.shape}"
            )

    @property
    def scale(self) -> int:
        return self.hr.shape[0] // self.lr.shape[0]


@dataclass
class DatasetSplit:
    train: list[PatchPair] = field(default_factory=list)
    val: list[PatchPair] = field(default_factory=list)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    # skip whitespace and comments
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMError(f"unexpected end of header at offset {start}")
    return data[start:pos], pos


def read_pgm(data: bytes) -> np.ndarray:
    """Decode a binary PGM (``P5``, maxval 255) into a float image in [0, 1]."""
    if data[:2] != b"P5":
        raise PGMError(f"bad magic {data[:2]!r} at offset 0, expected b'P5'")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        offset = pos
        tok, pos = _read_token(data, pos)
        try:
            value = int(tok)
        except ValueError:
            raise PGMError(f"invalid {name} {tok!r} at offset {offset}") from None
        if value < 1:
            raise PGMError(f"{name} must be positive, got {value} at offset {offset}")
        fields.append(value)
    width, height, maxval = fields
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval} at offset {pos}, only 255 is supported")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PGMError(f"missing whitespace after header at offset {pos}")
    pos += 1
    expected = width * height
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise PGMError(
            f"truncated payload at offset {pos + len(payload)}: "
            f"expected {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 with round-half-up."""
    q = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def write_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + quantize(img).tobytes()


def load_pgm(path: str | os.PathLike) -> np.ndarray:
    return read_pgm(Path(path).read_bytes())


def save_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    Path(path).write_bytes(write_pgm(img))


def luma_from_rgb(r, g, b) -> np.ndarray:
    """BT.601 luma ``0.299 R + 0.587 G + 0.114 B`` of three equal-size planes."""
    r, g, b = (np.asarray(c, dtype=np.float64) for c in (r, g, b))
    if not (r.shape == g.shape == b.shape):
        raise ValueError(f"channel shapes differ: {r.shape}, {g.shape}, {b.shape}")
    return 0.299 * r + 0.587 * g + 0.114 * b


def sample_patch_positions(
    shapes: list[tuple[int, int]], count: int, hr_size: int, seed: int
) -> list[tuple[int, int, int]]:
    """Draw ``count`` (image index, top, left) triples uniformly over all valid positions.

    Images smaller than ``hr_size`` in either dimension are skipped.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    per_image = []
    for h, w in shapes:
        if h >= hr_size and w >= hr_size:
            per_image.append((h - hr_size + 1) * (w - hr_size + 1))
        else:
            per_image.append(0)
    total = sum(per_image)
    if count == 0:
        return []
    if total == 0:
        raise ValueError(f"no source image is at least {hr_size}x{hr_size}")
    offsets = np.cumsum(per_image)
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, total, size=count)
    out = []
    for f in flat:
        idx = int(np.searchsorted(offsets, f, side="right"))
        local = int(f - (offsets[idx - 1] if idx else 0))
        ncols = shapes[idx][1] - hr_size + 1
        out.append((idx, local // ncols, local % ncols))
    return out


def extract_patches(images: list[np.ndarray], count: int, hr_size: int, seed: int) -> list[np.ndarray]:
    """Randomly crop ``count`` square HR patches from ``images`` (with replacement)."""
    positions = sample_patch_positions([im.shape for im in images], count, hr_size, seed)
    return [images[i][y : y + hr_size, x : x + hr_size].copy() for i, y, x in positions]


def _smooth_lattice(rng: np.random.Generator, height: int, width: int, cell: float) -> np.ndarray:
    gh = int(np.ceil(height / cell)) + 2
    gw = int(np.ceil(width / cell)) + 2
    lattice = rng.random((gh, gw))
    oy, ox = rng.random(2)
    ys = np.arange(height) / cell + oy
    xs = np.arange(width) / cell + ox
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    ty = ys - y0
    tx = xs - x0
    # quintic fade keeps the field C2-smooth across cells
    ty = ty * ty * ty * (ty * (ty * 6 - 15) + 10)
    tx = tx * tx * tx * (tx * (tx * 6 - 15) + 10)
    a = lattice[np.ix_(y0, x0)]
    b = lattice[np.ix_(y0, x0 + 1)]
    c = lattice[np.ix_(y0 + 1, x0)]
    d = lattice[np.ix_(y0 + 1, x0 + 1)]
    tx = tx[None, :]
    ty = ty[:, None]
    top = a + (b - a) * tx
    bottom = c + (d - c) * tx
    return top + (bottom - top) * ty


def synth_texture(
    width: int,
    height: int,
    seed: int,
    octaves: int = 4,
    base_cell: float = 64.0,
    persistence: float = 0.6,
) -> np.ndarray:
    """Multi-octave value-noise texture, min-max normalised to [0, 1].

    Octave ``o`` uses lattice cells of ``base_cell / 2**o`` pixels weighted by
    ``persistence**o``; the result is deterministic in ``seed``.
    """
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    amp = 1.0
    for o in range(octaves):
        img += amp * _smooth_lattice(rng, height, width, base_cell / 2**o)
        amp *= persistence
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.full_like(img, 0.5)
    return np.clip(img, 0.0, 1.0)


# -- dataset archive ---------------------------------------------------------

MANIFEST = "manifest.json"


def write_dataset(directory: str | os.PathLike, split: DatasetSplit, meta: dict) -> None:
    """Write ``NNNN_lr.pgm`` / ``NNNN_hr.pgm`` pairs plus ``manifest.json``.

    Training pairs are numbered first, then validation pairs.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for subset, pairs in (("train", split.train), ("val", split.val)):
        for pair in pairs:
            idx = len(entries)
            stem = f"{idx:04d}"
            save_pgm(directory / f"{stem}_lr.pgm", pair.lr)
            save_pgm(directory / f"{stem}_hr.pgm", pair.hr)
            entries.append(
                {"id": stem, "split": subset, "lr": f"{stem}_lr.pgm", "hr": f"{stem}_hr.pgm",
                 "source": pair.source_id}
            )
    manifest = dict(meta)
    manifest["pairs"] = entries
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(directory: str | os.PathLike) -> tuple[DatasetSplit, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    split = DatasetSplit()
    for entry in manifest["pairs"]:
        pair = PatchPair(
            lr=load_pgm(directory / entry["lr"]),
            hr=load_pgm(directory / entry["hr"]),
            source_id=entry.get("source", ""),
        )
        getattr(split, entry["split"]).append(pair)
    return split, manifest


def read_pairs_dir(directory: str | os.PathLike) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Load registered ``NNNN_lr.pgm`` / ``NNNN_hr.pgm`` pairs sorted by stem."""
    directory = Path(directory)
    out = []
    for lr_path in sorted(directory.glob("*_lr.pgm")):
        stem = lr_path.name[: -len("_lr.pgm")]
        hr_path = directory / f"{stem}_hr.pgm"
        if not hr_path.exists():
            raise FileNotFoundError(f"missing HR counterpart for {lr_path}")
        out.append((stem, load_pgm(lr_path), load_pgm(hr_path)))
    return out


def list_images(directory: str | os.PathLike) -> list[Path]:
    return sorted(Path(directory).glob("*.pgm"))
