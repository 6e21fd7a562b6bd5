"""Patch grids with run-time strides, hyper-image assembly and selective
patch training."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .imageops import ssim

HYPI_MAGIC = b"HYPI"
HYPI_VERSION = 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def grid_counts(max_h: int, max_w: int, sz) -> tuple[int, int]:
    """Patches needed along each axis to cover a max_h x max_w image."""
    sz_y, sz_x = (sz, sz) if np.isscalar(sz) else sz
    if max_h < sz_y or max_w < sz_x:
        raise ValueError(f"image {max_h}x{max_w} is smaller than patch {sz_y}x{sz_x}")
    return -(-max_h // sz_y), -(-max_w // sz_x)


def compute_strides(h: int, w: int, sz, n_py: int, n_px: int) -> tuple[int, int]:
    """Strides that place n_py x n_px patches over an h x w image."""
    sz_y, sz_x = (sz, sz) if np.isscalar(sz) else sz
    if n_py < 2 or n_px < 2:
        raise ValueError("stride is undefined for a single patch along an axis")
    if h < sz_y or w < sz_x:
        raise ValueError(f"image {h}x{w} is smaller than patch {sz_y}x{sz_x}")
    return _axis_stride(h, sz_y, n_py), _axis_stride(w, sz_x, n_px)


def _axis_stride(extent: int, size: int, n: int) -> int:
    return max(1, round_half_up((extent - size) / (n - 1)))


@dataclass(frozen=True)
class GridGeometry:
    height: int
    width: int
    sz_y: int
    sz_x: int
    n_py: int
    n_px: int
    s_y: int
    s_x: int

    @property
    def row_origins(self) -> list[int]:
        return [min(u * self.s_y, self.height - self.sz_y) for u in range(self.n_py)]

    @property
    def col_origins(self) -> list[int]:
        return [min(v * self.s_x, self.width - self.sz_x) for v in range(self.n_px)]

    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self) -> int:
        return self.n_py * self.n_px


def make_geometry(h: int, w: int, sz, n_py: int, n_px: int) -> GridGeometry:
    sz_y, sz_x = (sz, sz) if np.isscalar(sz) else sz
    if h < sz_y or w < sz_x:
        raise ValueError(f"image {h}x{w} is smaller than patch {sz_y}x{sz_x}")
    # a single patch along an axis sits at the top/left edge
    s_y = _axis_stride(h, sz_y, n_py) if n_py > 1 else sz_y
    s_x = _axis_stride(w, sz_x, n_px) if n_px > 1 else sz_x
    return GridGeometry(h, w, int(sz_y), int(sz_x), int(n_py), int(n_px), int(s_y), int(s_x))


def extract_grid(image: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Patches in row-major grid order, shaped (n_py, n_px, sz_y, sz_x[, C])."""
    if image.shape[:2] != (geometry.height, geometry.width):
        raise ValueError(f"image {image.shape[:2]} does not match geometry "
                         f"{geometry.height}x{geometry.width}")
    rows, cols = geometry.row_origins, geometry.col_origins
    g = geometry
    patches = [[image[r:r + g.sz_y, c:c + g.sz_x] for c in cols] for r in rows]
    return np.array(patches)


def assemble_hyper_image(patches: np.ndarray, feature_fn, batched: bool = False) -> np.ndarray:
    """Map every grid patch to its feature vector, keeping (u, v) positions.

    ``patches`` is (U, V, ...). With ``batched`` the function receives all
    U*V patches at once and returns (U*V, D).
    """
    U, V = patches.shape[:2]
    flat = patches.reshape((U * V,) + patches.shape[2:])
    if batched:
        feats = np.asarray(feature_fn(flat), dtype=np.float64)
    else:
        rows = [np.asarray(feature_fn(p), dtype=np.float64).reshape(-1) for p in flat]
        dims = {r.size for r in rows}
        if len(dims) != 1:
            raise ValueError(f"feature function returned inconsistent lengths {sorted(dims)}")
        feats = np.stack(rows)
    if feats.ndim != 2 or feats.shape[0] != U * V:
        raise ValueError(f"feature function returned shape {feats.shape}, expected ({U * V}, D)")
    return feats.reshape(U, V, feats.shape[1])


def write_hyper_image(path, hyper: np.ndarray) -> None:
    U, V, D = hyper.shape
    with open(path, "wb") as f:
        f.write(HYPI_MAGIC + struct.pack("<IIII", HYPI_VERSION, U, V, D))
        f.write(np.ascontiguousarray(hyper, dtype="<f4").tobytes())


def read_hyper_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(20)
        if len(head) != 20 or head[:4] != HYPI_MAGIC:
            raise ValueError(f"{path}: not a hyper-image cache")
        version, U, V, D = struct.unpack("<IIII", head[4:])
        if version != HYPI_VERSION:
            raise ValueError(f"{path}: unsupported hyper-image version {version}")
        data = f.read()
    if len(data) != 4 * U * V * D:
        raise ValueError(f"{path}: truncated hyper-image data")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(U, V, D)


@dataclass
class PatchSelection:
    distorted: list[int]      # row-major grid indices kept from the distorted image
    reference: list[int]      # row-major grid indices kept from the reference image
    ssim: np.ndarray          # per-patch SSIM, grid-shaped
    fallback: bool = False    # nothing fell below tau; lowest-SSIM patch kept


def select_distorted_patches(reference: np.ndarray, distorted: np.ndarray, geometry: GridGeometry,
                             tau: float = 0.95, rng: np.random.Generator | None = None) -> PatchSelection:
    """Keep distorted patches whose SSIM against the reference patch is below
    ``tau``, all reference patches, then balance the two counts by seeded
    subsampling of the larger side."""
    if reference.shape != distorted.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {distorted.shape}")
    rng = rng or np.random.default_rng(0)
    ref_p = extract_grid(reference, geometry)
    dist_p = extract_grid(distorted, geometry)
    U, V = ref_p.shape[:2]
    scores = np.array([[ssim(ref_p[u, v], dist_p[u, v]) for v in range(V)] for u in range(U)])
    flat = scores.reshape(-1)
    selected = [int(i) for i in np.flatnonzero(flat < tau)]
    fallback = not selected
    if fallback:
        selected = [int(np.argmin(flat))]
    refs = list(range(U * V))
    if len(refs) > len(selected):
        refs = sorted(int(i) for i in rng.choice(refs, size=len(selected), replace=False))
    elif len(selected) > len(refs):
        selected = sorted(int(i) for i in rng.choice(selected, size=len(refs), replace=False))
    return PatchSelection(selected, refs, scores, fallback)
