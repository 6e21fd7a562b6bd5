"""Image primitives: contrast normalisation, SSIM, rescaling, tamper contours,
patch cropping and 8-bit PGM/PPM I/O.

Images are float arrays in [0, 1], shaped (H, W) for grey or (H, W, 3).
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage
from skimage import morphology, transform

LCN_EPS = 1.0 / 255.0
LCN_SIGMA = 7.0 / 6.0
LCN_RADIUS = 3
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA = np.array([0.299, 0.587, 0.114])


def gaussian_window(radius: int = LCN_RADIUS, sigma: float = LCN_SIGMA) -> np.ndarray:
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(k[:, None] ** 2 + k[None, :] ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def lcn(image: np.ndarray, eps: float = LCN_EPS, sigma: float = LCN_SIGMA,
        radius: int = LCN_RADIUS) -> np.ndarray:
    """Local contrast normalisation: (I - mu) / (sigma + eps) under a Gaussian window.

    Borders use mirror extension. Colour images are normalised per channel.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return np.stack([lcn(image[..., c], eps, sigma, radius) for c in range(image.shape[2])], axis=-1)
    side = 2 * radius + 1
    if image.shape[0] < side or image.shape[1] < side:
        raise ValueError(f"image {image.shape} is smaller than the {side}x{side} window")
    w = gaussian_window(radius, sigma)
    mu = ndimage.correlate(image, w, mode="mirror")
    var = ndimage.correlate(image * image, w, mode="mirror") - mu * mu
    return (image - mu) / (np.sqrt(np.maximum(var, 0.0)) + eps)


def luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if image.shape[2] == 1:
            return image[..., 0]
        return image @ LUMA
    return image


def _box_mean(x: np.ndarray, w: int) -> np.ndarray:
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    return (s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]) / (w * w)


def ssim_map(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW) -> np.ndarray:
    a, b = luminance(a), luminance(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} is smaller than the SSIM window")
    mu_a, mu_b = _box_mean(a, window), _box_mean(b, window)
    var_a = _box_mean(a * a, window) - mu_a * mu_a
    var_b = _box_mean(b * b, window) - mu_b * mu_b
    cov = _box_mean(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all 8x8 uniform windows (stride 1, unit dynamic range)."""
    return float(ssim_map(a, b, window).mean())


def isotropic_rescale(image: np.ndarray, max_h: int, max_w: int) -> np.ndarray:
    """Shrink by a single bilinear factor so the image fits (max_h, max_w)."""
    h, w = image.shape[:2]
    if h <= max_h and w <= max_w:
        return image
    f = min(max_h / h, max_w / w)
    out_shape = (max(1, int(round(h * f))), max(1, int(round(w * f)))) + tuple(image.shape[2:])
    return transform.resize(np.asarray(image, dtype=np.float64), out_shape, order=1, mode="edge",
                            anti_aliasing=False, preserve_range=True)


# Moore neighbourhood, clockwise starting west
_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_RING_INDEX = {d: k for k, d in enumerate(_RING)}


def moore_trace(mask: np.ndarray) -> list[tuple[int, int]]:
    """Outer boundary of the single 8-connected component in ``mask``.

    Starts at the row-major-first pixel and walks clockwise; stops by Jacob's
    criterion (re-entering the start through the first move).
    """
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    rows, cols = np.nonzero(padded)
    if rows.size == 0:
        return []
    start = (int(rows[0]), int(cols[0]))
    p, back = start, 0  # west of the row-major-first pixel is background
    contour = [start]
    first_move = None
    while True:
        for k in range(1, 9):
            d = (back + k) % 8
            q = (p[0] + _RING[d][0], p[1] + _RING[d][1])
            if padded[q]:
                break
        else:
            break  # isolated pixel
        prev_d = (d - 1) % 8
        prev = (p[0] + _RING[prev_d][0], p[1] + _RING[prev_d][1])
        move = (p, q)
        if first_move is None:
            first_move = move
        elif move == first_move:
            break
        back = _RING_INDEX[(prev[0] - q[0], prev[1] - q[1])]
        p = q
        contour.append(q)
    if len(contour) > 1 and contour[-1] == start:
        contour.pop()
    return [(r - 1, c - 1) for r, c in contour]


def tamper_mask(authentic, tampered, threshold: float = 0.08, morph_radius: int = 2) -> np.ndarray:
    a = np.asarray(authentic, dtype=np.float64)
    t = np.asarray(tampered, dtype=np.float64)
    if a.shape != t.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {t.shape}")
    diff = np.abs(a - t)
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    mask = diff > threshold
    if morph_radius > 0:
        disc = morphology.disk(morph_radius)
        mask = ndimage.binary_closing(np.pad(mask, morph_radius), disc)[morph_radius:-morph_radius,
                                                                        morph_radius:-morph_radius]
        mask = ndimage.binary_opening(mask, disc)
    return mask


def tamper_contour(authentic, tampered, threshold: float = 0.08, morph_radius: int = 2,
                   min_area: int = 25) -> list[list[tuple[int, int]]]:
    """Outer boundaries of the regions where the pair differs.

    Per-pixel max-channel difference is thresholded, closed then opened with a
    disc, and components smaller than ``min_area`` are dropped. Components come
    back in row-major label order; an empty list means nothing survived.
    """
    mask = tamper_mask(authentic, tampered, threshold, morph_radius)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    contours = []
    for k in range(1, n + 1):
        comp = labels == k
        if comp.sum() < min_area:
            continue
        contours.append(moore_trace(comp))
    return contours


def sample_contour(contour, k: int = 15) -> list[tuple[int, int]]:
    """``k`` equally spaced traced points, starting at the row-major-first point."""
    n = len(contour)
    if n < k:
        raise ValueError(f"contour of length {n} is shorter than k={k}")
    s = min(range(n), key=lambda i: (contour[i][0], contour[i][1]))
    ordered = list(contour[s:]) + list(contour[:s])
    return [tuple(ordered[(i * n) // k]) for i in range(k)]


def crop_patch_centered(image: np.ndarray, center, size: int = 64) -> np.ndarray:
    """size x size crop around ``center``, shifted inward to stay inside the image."""
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {image.shape[:2]} is smaller than patch size {size}")
    top = int(min(max(int(center[0]) - size // 2, 0), h - size))
    left = int(min(max(int(center[1]) - size // 2, 0), w - size))
    return image[top:top + size, left:left + size]


# -- 8-bit PGM (P5) / PPM (P6) --------------------------------------------------

def _read_token(f) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            return tok
        if ch == b"#":
            f.readline()
            if tok:
                return tok
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: not a binary PGM/PPM file")
        w, h, maxval = int(_read_token(f)), int(_read_token(f)), int(_read_token(f))
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit files are supported (maxval {maxval})")
        channels = 1 if magic == b"P5" else 3
        data = f.read(w * h * channels)
    if len(data) != w * h * channels:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape(h, w) if channels == 1 else arr.reshape(h, w, 3)


def write_pnm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {image.shape}")
    px = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = image.shape[:2]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(px.tobytes())
    os.replace(tmp, path)
