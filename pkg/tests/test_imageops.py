import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from hyperimage.imageops import (crop_patch_centered, gaussian_window, isotropic_rescale, lcn, moore_trace,
                                 read_pnm, sample_contour, ssim, tamper_contour, write_pnm)


def ssim_oracle(a, b, w=8, c1=1e-4, c2=9e-4):
    """Window-by-window SSIM with population statistics."""
    vals = []
    for i in range(a.shape[0] - w + 1):
        for j in range(a.shape[1] - w + 1):
            x, y = a[i:i + w, j:j + w], b[i:i + w, j:j + w]
            mx, my = x.mean(), y.mean()
            cov = ((x - mx) * (y - my)).mean()
            vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx ** 2 + my ** 2 + c1) * (x.var() + y.var() + c2)))
    return float(np.mean(vals))


def checkerboard(n=24):
    i, j = np.indices((n, n))
    return np.where((i + j) % 2 == 0, 1.0, -1.0)


# -- lcn -------------------------------------------------------------------------

def test_lcn_constant_is_zero():
    assert np.array_equal(lcn(np.full((9, 9), 0.4)), np.zeros((9, 9)))


def test_lcn_window():
    w = gaussian_window()
    assert w.shape == (7, 7) and w.sum() == pytest.approx(1.0)
    assert w[3, 0] / w[3, 3] == pytest.approx(np.exp(-9 / (2 * (7 / 6) ** 2)))


def test_lcn_windowed_mean_near_zero_on_constant_sigma_region():
    out = lcn(checkerboard())
    mu = ndimage.correlate(out, gaussian_window(), mode="mirror")
    assert np.abs(mu[3:-3, 3:-3]).max() < 1e-6


def test_lcn_step_edge():
    img = np.zeros((9, 20))
    img[:, 10:] = 1.0
    out = lcn(img)
    # at either edge pixel the far side holds weight q = w(1)+w(2)+w(3) of the 1-D kernel,
    # so |I| = q / (sqrt(q(1-q)) + eps); a symmetric window keeps this below 1
    k = np.exp(-np.arange(-3, 4) ** 2 / (2 * (7 / 6) ** 2))
    q = k[4:].sum() / k.sum()
    peak = q / (np.sqrt(q * (1 - q)) + 1 / 255)
    assert peak == pytest.approx(0.6939295423540904, abs=1e-12)
    assert np.allclose(np.abs(out[:, 9:11]), peak, atol=1e-12)
    assert np.abs(out).max() == pytest.approx(peak, abs=1e-12)
    assert np.abs(out[:, :6]).max() < 1e-12 and np.abs(out[:, 14:]).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_lcn_affine_invariance_without_eps(a, b):
    img = checkerboard() * 0.3 + 0.5
    assert np.allclose(lcn(a * img + b, eps=0.0), lcn(img, eps=0.0), atol=1e-9)


def test_lcn_rgb_per_channel_and_small_image():
    rng = np.random.default_rng(0)
    rgb = rng.random((10, 10, 3))
    out = lcn(rgb)
    assert np.allclose(out[..., 1], lcn(rgb[..., 1]))
    with pytest.raises(ValueError):
        lcn(np.zeros((6, 10)))


# -- ssim ------------------------------------------------------------------------

def test_ssim_examples():
    rng = np.random.default_rng(0)
    a = rng.random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(np.zeros((8, 8)), np.ones((8, 8))) == pytest.approx(1e-4 / (1 + 1e-4))
    noisy = np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)
    assert ssim(a, noisy) < 0.9
    assert ssim(a, noisy) == pytest.approx(ssim_oracle(a, noisy), abs=1e-12)
    with pytest.raises(ValueError):
        ssim(a, a[:10])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(8, 14), st.integers(8, 14))
def test_ssim_matches_oracle_and_symmetric(seed, h, w):
    rng = np.random.default_rng(seed)
    a, b = rng.random((h, w)), rng.random((h, w))
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_rgb_uses_luminance():
    rng = np.random.default_rng(1)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    luma = np.array([0.299, 0.587, 0.114])
    assert ssim(a, b) == pytest.approx(ssim_oracle(a @ luma, b @ luma), abs=1e-12)


# -- rescale ---------------------------------------------------------------------

@pytest.mark.parametrize("shape,out", [((384, 512), (384, 512)), ((768, 1024), (384, 512)),
                                       ((768, 512), (384, 256))])
def test_isotropic_rescale(shape, out):
    assert isotropic_rescale(np.zeros(shape), 384, 512).shape == out


def test_rescale_unchanged_when_fitting():
    img = np.random.default_rng(0).random((100, 80))
    assert isotropic_rescale(img, 384, 512) is img


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 300), st.integers(20, 300), st.integers(10, 120), st.integers(10, 120))
def test_rescale_aspect_ratio(h, w, mh, mw):
    out = isotropic_rescale(np.zeros((h, w)), mh, mw)
    oh, ow = out.shape
    assert oh <= mh and ow <= mw
    assert abs(oh / ow - h / w) <= h / w * (1 / oh + 1 / ow) + 1e-12


# -- contours --------------------------------------------------------------------

def _eight_connected(contour):
    pts = contour + contour[:1]
    return all(max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1 for a, b in zip(pts, pts[1:]))


def test_moore_trace_small_shapes():
    assert moore_trace(np.zeros((3, 3))) == []
    one = np.zeros((3, 3), bool)
    one[1, 1] = True
    assert moore_trace(one) == [(1, 1)]
    block = np.zeros((4, 4), bool)
    block[1:3, 1:3] = True
    assert moore_trace(block) == [(1, 1), (1, 2), (2, 2), (2, 1)]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 5), st.integers(0, 5))
def test_moore_trace_rectangle(h, w, r, c):
    mask = np.zeros((20, 20), bool)
    mask[r:r + h, c:c + w] = True
    contour = moore_trace(mask)
    assert len(contour) == 2 * (h + w) - 4
    assert len(set(contour)) == len(contour) and _eight_connected(contour)
    assert contour[0] == (r, c)


def test_tamper_contour_fixtures():
    rng = np.random.default_rng(0)
    a = rng.random((96, 96)) * 0.05 + 0.2
    assert tamper_contour(a, a) == []
    t = a.copy()
    t[20:60, 30:70] += 0.5
    cs = tamper_contour(a, t, threshold=0.1)
    assert len(cs) == 1
    assert 160 - 16 <= len(cs[0]) <= 160 + 16
    assert _eight_connected(cs[0])
    t2 = t.copy()
    t2[75:90, 5:25] += 0.5
    assert len(tamper_contour(a, t2, threshold=0.1)) == 2
    tiny = a.copy()
    tiny[5:8, 5:8] += 0.5  # 9 px, removed by the opening / area floor
    assert tamper_contour(a, tiny, threshold=0.1) == []


def test_tamper_contour_rgb_max_channel():
    a = np.zeros((40, 40, 3))
    t = a.copy()
    t[10:30, 10:30, 2] = 0.5
    assert len(tamper_contour(a, t, threshold=0.1)) == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_tamper_contour_of_identical_pair_is_empty(seed):
    a = np.random.default_rng(seed).random((32, 32, 3))
    assert tamper_contour(a, a.copy()) == []


def test_sample_contour():
    contour = [(0, i) for i in range(150)]
    assert sample_contour(contour, 15) == [(0, 10 * i) for i in range(15)]
    ring = [(1, 1), (1, 2), (2, 2), (2, 1)]
    assert sample_contour(ring[2:] + ring[:2], 4) == ring
    assert sample_contour(contour, 15) == sample_contour(list(contour), 15)
    with pytest.raises(ValueError):
        sample_contour(ring, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 14), st.integers(4, 14), st.integers(1, 15))
def test_sampled_points_lie_on_contour(h, w, k):
    mask = np.zeros((20, 20), bool)
    mask[2:2 + h, 3:3 + w] = True
    contour = moore_trace(mask)
    if len(contour) < k:
        return
    assert set(sample_contour(contour, k)) <= set(contour)


# -- cropping --------------------------------------------------------------------

def test_crop_patch_centered():
    img = np.arange(128 * 128, dtype=float).reshape(128, 128)
    c = crop_patch_centered(img, (64, 64), 64)
    assert c[0, 0] == img[32, 32] and c[-1, -1] == img[95, 95]
    z = crop_patch_centered(img, (0, 0), 64)
    assert z[0, 0] == img[0, 0] and z.shape == (64, 64)
    far = crop_patch_centered(img, (127, 127), 64)
    assert far[-1, -1] == img[127, 127]
    a, b = crop_patch_centered(img, (60, 60), 64), crop_patch_centered(img, (60, 61), 64)
    assert np.array_equal(a[:, 1:], b[:, :-1])
    with pytest.raises(ValueError):
        crop_patch_centered(img[:32], (5, 5), 64)


# -- pnm -------------------------------------------------------------------------

def test_pnm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((7, 5), (6, 4, 3)):
        img = np.round(rng.random(shape) * 255) / 255
        path = tmp_path / "x.pnm"
        write_pnm(path, img)
        assert np.array_equal(read_pnm(path), img)
    assert (tmp_path / "x.pnm").read_bytes()[:2] == b"P6"


def test_pnm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ValueError, match="PGM"):
        read_pnm(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n# comment\n4 4\n255\n" + bytes(3))
    with pytest.raises(ValueError, match="truncated"):
        read_pnm(short)
