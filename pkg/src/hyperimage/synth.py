"""Synthetic benchmark: 128x128 grey images with 1-5 scrambled two-shade
16x16 artifact patches over a constant background, scored in closed form.

An artifact's penalty is its mean absolute difference from the background
plus a centrality term that is 1 at the image centre and 0 when the patch
sits in a corner. The image score is ``5 - sqrt(sum(alpha_i ** 2))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

IMAGE_SIZE = 128
PATCH = 16
MAX_SCORE = 5.0
MAX_PATCHES = 5
PLACEMENT_TRIES = 1000

HALF = (PATCH - 1) / 2.0
IMAGE_CENTER = ((IMAGE_SIZE - 1) / 2.0, (IMAGE_SIZE - 1) / 2.0)
# distance from a corner-placed patch centre to the image centre
DIST_N = math.hypot(IMAGE_CENTER[0] - HALF, IMAGE_CENTER[1] - HALF)


@dataclass(frozen=True)
class ArtifactPatchMeta:
    center: tuple[float, float]
    dark: float
    bright: float
    bright_fraction: float
    perm_seed: int

    @property
    def origin(self) -> tuple[int, int]:
        return int(round(self.center[0] - HALF)), int(round(self.center[1] - HALF))

    def pixels(self) -> np.ndarray:
        n_bright = int(math.floor(self.bright_fraction * PATCH * PATCH + 0.5))
        flat = np.full(PATCH * PATCH, self.dark)
        flat[:n_bright] = self.bright
        perm = np.random.default_rng(self.perm_seed).permutation(PATCH * PATCH)
        return flat[perm].reshape(PATCH, PATCH)

    def moved_to(self, origin) -> "ArtifactPatchMeta":
        return ArtifactPatchMeta((origin[0] + HALF, origin[1] + HALF), self.dark, self.bright,
                                 self.bright_fraction, self.perm_seed)


def alpha(meta: ArtifactPatchMeta, s0: float, image_center=IMAGE_CENTER, dist_n: float = DIST_N,
          pixels: np.ndarray | None = None) -> float:
    """Penalty of one artifact: content dissimilarity plus centrality."""
    p = meta.pixels() if pixels is None else np.asarray(pixels, dtype=np.float64)
    content = float(np.sum(np.abs(s0 - p)) / p.size)
    d = math.hypot(meta.center[0] - image_center[0], meta.center[1] - image_center[1])
    return content + (1.0 - d / dist_n)


def score_from_alphas(alphas) -> float:
    return MAX_SCORE - math.sqrt(sum(a * a for a in alphas))


@dataclass
class SyntheticSample:
    image: np.ndarray
    background: float
    patches: tuple[ArtifactPatchMeta, ...]
    score: float
    alphas: tuple[float, ...] = ()

    @property
    def eta(self) -> int:
        return len(self.patches)

    def recompute_score(self) -> float:
        """Score re-derived from the rendered pixels and the metadata."""
        alphas = []
        for m in self.patches:
            r, c = m.origin
            alphas.append(alpha(m, self.background, pixels=self.image[r:r + PATCH, c:c + PATCH]))
        return score_from_alphas(alphas)

    def metadata(self) -> dict:
        return {
            "background": self.background,
            "score": self.score,
            "patches": [asdict(m) for m in self.patches],
        }

    def to_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True)


def render(background: float, patches) -> np.ndarray:
    img = np.full((IMAGE_SIZE, IMAGE_SIZE), float(background))
    for m in patches:
        r, c = m.origin
        img[r:r + PATCH, c:c + PATCH] = m.pixels()
    return img


def make_sample(background: float, patches) -> SyntheticSample:
    patches = tuple(patches)
    alphas = tuple(alpha(m, background) for m in patches)
    return SyntheticSample(render(background, patches), float(background), patches,
                           score_from_alphas(alphas), alphas)


def _overlaps(a, b) -> bool:
    return abs(a[0] - b[0]) < PATCH and abs(a[1] - b[1]) < PATCH


def _place(rng: np.random.Generator, n: int):
    """Non-overlapping in-bounds origins by rejection sampling, or None."""
    placed = []
    hi = IMAGE_SIZE - PATCH + 1
    for _ in range(n):
        for _ in range(PLACEMENT_TRIES):
            o = (int(rng.integers(0, hi)), int(rng.integers(0, hi)))
            if not any(_overlaps(o, q) for q in placed):
                placed.append(o)
                break
        else:
            return None
    return placed


def _draw_content(rng: np.random.Generator) -> ArtifactPatchMeta:
    dark = float(rng.uniform(0.0, 0.5))
    bright = float(rng.uniform(0.5, 1.0))
    fraction = float(rng.uniform(0.0, 1.0))
    return ArtifactPatchMeta((HALF, HALF), dark, bright, fraction, int(rng.integers(0, 2**63 - 1)))


def generate_sample(rng: np.random.Generator) -> SyntheticSample:
    while True:
        s0 = float(rng.uniform(0.0, 1.0))
        eta = int(rng.integers(1, MAX_PATCHES + 1))
        contents = [_draw_content(rng) for _ in range(eta)]
        origins = _place(rng, eta)
        if origins is not None:
            return make_sample(s0, [m.moved_to(o) for m, o in zip(contents, origins)])


def generate_positional_set(rng: np.random.Generator, eta: int, count: int = 1000) -> list[SyntheticSample]:
    """Samples sharing background and artifact contents; only positions vary."""
    if not 1 <= eta <= MAX_PATCHES:
        raise ValueError(f"eta must lie in [1, {MAX_PATCHES}]")
    s0 = float(rng.uniform(0.0, 1.0))
    contents = [_draw_content(rng) for _ in range(eta)]
    out = []
    while len(out) < count:
        origins = _place(rng, eta)
        if origins is not None:
            out.append(make_sample(s0, [m.moved_to(o) for m, o in zip(contents, origins)]))
    return out


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-sample generator derived from (master_seed, index) via SeedSequence."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def generate_dataset(master_seed: int, count: int) -> list[SyntheticSample]:
    return [generate_sample(sample_rng(master_seed, i)) for i in range(count)]


def crop_label(sample: SyntheticSample, origin, size) -> float:
    """Score restricted to the artifacts whose centres fall inside the crop."""
    sy, sx = (size, size) if np.isscalar(size) else size
    r0, c0 = origin
    alphas = sample.alphas or tuple(alpha(m, sample.background) for m in sample.patches)
    return score_from_alphas(a for m, a in zip(sample.patches, alphas)
                             if r0 <= m.center[0] < r0 + sy and c0 <= m.center[1] < c0 + sx)
