"""Self-generated stand-ins for licensed datasets: a copy-move forgery corpus
and a small noise-distortion IQA set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imageops import ssim


def _rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


def textured_image(rng: np.random.Generator, size: int = 64, channels: int = 3,
                   noise: float = 0.08) -> np.ndarray:
    """Smooth random colour field plus fine pixel noise, clipped to [0, 1]."""
    coarse = rng.uniform(0.15, 0.85, size=(size // 8 + 2, size // 8 + 2, channels))
    field = ndimage.zoom(coarse, (8, 8, 1), order=3)[4:4 + size, 4:4 + size]
    grain = rng.normal(0.0, noise, size=(size, size, channels))
    img = np.clip(field + grain, 0.0, 1.0)
    return img if channels > 1 else img[..., 0]


@dataclass
class ForgeryPair:
    authentic: np.ndarray
    tampered: np.ndarray
    box: tuple[int, int, int, int]  # planted region: top, left, bottom, right (exclusive)
    source: tuple[int, int]


def copy_move(image: np.ndarray, rng: np.random.Generator, min_side: int = 14, max_side: int = 22,
              blur: float = 1.5, min_shift: int = 12) -> ForgeryPair:
    """Paste a blurred copy of one region at a translated position."""
    h, w = image.shape[:2]
    while True:
        rh, rw = (int(v) for v in rng.integers(min_side, max_side + 1, size=2))
        sy, sx = int(rng.integers(0, h - rh + 1)), int(rng.integers(0, w - rw + 1))
        dy, dx = int(rng.integers(0, h - rh + 1)), int(rng.integers(0, w - rw + 1))
        if max(abs(sy - dy), abs(sx - dx)) >= min_shift:
            break
    sigma = (blur, blur, 0) if image.ndim == 3 else blur
    patch = ndimage.gaussian_filter(image[sy:sy + rh, sx:sx + rw], sigma, mode="nearest")
    tampered = image.copy()
    tampered[dy:dy + rh, dx:dx + rw] = patch
    return ForgeryPair(image, tampered, (dy, dx, dy + rh, dx + rw), (sy, sx))


def forgery_corpus(seed: int, n_pairs: int = 1000, size: int = 64) -> list[ForgeryPair]:
    """``n_pairs`` authentic images, each with one copy-move tampered twin."""
    out = []
    for i in range(n_pairs):
        img = textured_image(_rng(seed, i, 1), size)
        out.append(copy_move(img, _rng(seed, i, 2)))
    return out


def box_iou(a, b) -> float:
    t, l = max(a[0], b[0]), max(a[1], b[1])
    btm, r = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0, btm - t) * max(0, r - l)
    area = lambda x: (x[2] - x[0]) * (x[3] - x[1])
    union = area(a) + area(b) - inter
    return inter / union if union else 0.0


def contour_box(contour) -> tuple[int, int, int, int]:
    rows = [p[0] for p in contour]
    cols = [p[1] for p in contour]
    return min(rows), min(cols), max(rows) + 1, max(cols) + 1


# -- IQA distortion fixture ---------------------------------------------------------

NOISE_LEVELS = (0.04, 0.08, 0.16)
QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass
class IqaImage:
    id: str
    group: str
    reference: np.ndarray
    distorted: np.ndarray
    score: float             # 100 * (1 - SSIM), a DMOS-like value in [0, 100]
    kind: str                # pristine | uniform | quadrant
    level: float = 0.0
    quadrant: tuple[int, int] | None = None

    @property
    def noise_mask(self) -> np.ndarray:
        h, w = self.reference.shape[:2]
        m = np.zeros((h, w), dtype=bool)
        if self.kind == "uniform":
            m[:] = True
        elif self.kind == "quadrant":
            qy, qx = self.quadrant
            m[qy * h // 2:(qy + 1) * h // 2, qx * w // 2:(qx + 1) * w // 2] = True
        return m


def add_noise(image, rng, level: float, mask=None) -> np.ndarray:
    noise = rng.normal(0.0, level, size=image.shape)
    if mask is not None:
        noise = noise * mask.reshape(mask.shape + (1,) * (image.ndim - 2))
    return np.clip(image + noise, 0.0, 1.0)


def iqa_fixture(seed: int, n_refs: int = 5, size: int = 128) -> list[IqaImage]:
    """Per reference: the pristine image, one uniformly noised copy and two
    quadrant-noised copies; noise levels cycle through three values."""
    out = []
    for r in range(n_refs):
        rng = _rng(seed, r, 3)
        ref = textured_image(rng, size, channels=1, noise=0.02)
        group = f"ref{r:02d}"
        variants = [("pristine", 0.0, None)]
        variants.append(("uniform", NOISE_LEVELS[r % 3], None))
        for k in range(2):
            variants.append(("quadrant", NOISE_LEVELS[(r + k + 1) % 3], QUADRANTS[(r + 2 * k) % 4]))
        for j, (kind, level, quad) in enumerate(variants):
            item = IqaImage(f"{group}_{j}", group, ref, ref, 0.0, kind, level, quad)
            if kind != "pristine":
                dist = add_noise(ref, rng, level, item.noise_mask if kind == "quadrant" else None)
                item.distorted = dist
                item.score = float(np.clip(100.0 * (1.0 - ssim(ref, dist)), 0.0, 100.0))
            out.append(item)
    return out
