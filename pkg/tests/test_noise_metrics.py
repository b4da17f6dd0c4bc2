import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoe_mmi.metrics import gaussian_window, psnr, ssim, ssim_map
from smoe_mmi.noise import NoiseSpec, add_gaussian, add_noise, add_speckle, noise_field

# Reference SSIM of the fixed pair below, computed once by ``naive_ssim``.
FROZEN_SSIM = 0.9469870141518039


def naive_ssim(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Scalar per-window SSIM with Gaussian-weighted population statistics."""
    x = np.arange(win) - (win - 1) / 2
    g = np.exp(-x**2 / (2 * sigma**2))
    g /= g.sum()
    w2 = np.outer(g, g)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for r in range(a.shape[0] - win + 1):
        for c in range(a.shape[1] - win + 1):
            pa, pb = a[r:r + win, c:c + win], b[r:r + win, c:c + win]
            ma, mb = (w2 * pa).sum(), (w2 * pb).sum()
            va, vb = (w2 * (pa - ma) ** 2).sum(), (w2 * (pb - mb) ** 2).sum()
            cov = (w2 * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def fixed_pair():
    rng = np.random.default_rng(2024)
    a = rng.uniform(0, 1, (32, 32))
    return a, np.clip(a + rng.normal(0, 0.1, (32, 32)), 0, 1)


# --- noise -----------------------------------------------------------------

def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("poisson", 0.1)
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", -0.1)
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", float("nan"))


def test_noise_spec_parse():
    assert NoiseSpec.parse("speckle:0.01", seed=4) == NoiseSpec("speckle", 0.01, 4)
    with pytest.raises(ValueError):
        NoiseSpec.parse("gaussian")
    with pytest.raises(ValueError):
        NoiseSpec.parse("gaussian:abc")


@pytest.mark.parametrize("kind", ["gaussian", "speckle"])
def test_zero_variance_is_identity(rng, kind):
    img = rng.uniform(0, 1, (16, 16))
    assert np.array_equal(add_noise(img, NoiseSpec(kind, 0.0, 3)), img)


def test_noise_deterministic(rng):
    img = rng.uniform(0, 1, (32, 32))
    spec = NoiseSpec("gaussian", 0.01, 99)
    assert np.array_equal(add_gaussian(img, spec), add_gaussian(img, spec))
    assert not np.array_equal(add_gaussian(img, spec), add_gaussian(img, NoiseSpec("gaussian", 0.01, 100)))


def test_noise_output_range(rng):
    img = rng.uniform(0, 1, (64, 64))
    for kind in ("gaussian", "speckle"):
        out = add_noise(img, NoiseSpec(kind, 0.5, 1))
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_gaussian_statistics():
    # 65536 samples: the mean has std 0.1/256 ~ 4e-4, so +-0.002 is a ~5 sigma
    # bound; the variance estimate has relative std sqrt(2/65536) ~ 0.55%,
    # so +-10% is far outside 3 sigma.
    img = np.full((256, 256), 0.5)
    diff = noise_field(img, NoiseSpec("gaussian", 0.01, 7))
    assert abs(diff.mean()) <= 0.002
    assert abs(diff.var() - 0.01) <= 0.001


def test_speckle_statistics():
    img = np.full((256, 256), 0.5)
    diff = noise_field(img, NoiseSpec("speckle", 0.01, 7))
    assert abs(diff.var() - 0.25 * 0.01) <= 0.1 * 0.25 * 0.01
    assert abs(diff.mean()) <= 0.001


def test_speckle_zero_image():
    assert np.array_equal(add_speckle(np.zeros((8, 8)), NoiseSpec("speckle", 0.3, 1)), np.zeros((8, 8)))


def test_noise_field_matches_applied_noise(rng):
    img = rng.uniform(0.3, 0.7, (32, 32))
    for kind in ("gaussian", "speckle"):
        spec = NoiseSpec(kind, 0.001, 5)
        np.testing.assert_allclose(add_noise(img, spec), np.clip(img + noise_field(img, spec), 0, 1))


def test_kind_specific_helpers_reject_wrong_kind(rng):
    img = rng.uniform(0, 1, (8, 8))
    with pytest.raises(ValueError):
        add_gaussian(img, NoiseSpec("speckle", 0.1))
    with pytest.raises(ValueError):
        add_speckle(img, NoiseSpec("gaussian", 0.1))


# --- PSNR ------------------------------------------------------------------

def test_psnr_identical_is_inf(rng):
    a = rng.uniform(0, 1, (8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_analytic():
    a = np.zeros((10, 10))
    assert psnr(a, np.full((10, 10), 0.1)) == pytest.approx(20.0, abs=1e-12)
    b = np.zeros((10, 10))
    b[0, :] = math.sqrt(0.01)  # MSE = 10 * 0.01 / 100
    assert psnr(a, b) == pytest.approx(30.0, abs=1e-12)


def test_psnr_symmetric_and_shape_check(rng):
    a, b = rng.uniform(0, 1, (2, 16, 16))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, b[:8])


# --- SSIM ------------------------------------------------------------------

def test_gaussian_window_normalized():
    g = gaussian_window()
    assert g.size == 11 and abs(g.sum() - 1.0) < 1e-15 and np.array_equal(g, g[::-1])


def test_ssim_identical(rng):
    a = rng.uniform(0, 1, (20, 24))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_anticorrelated_binary(rng):
    a = (rng.uniform(0, 1, (32, 32)) > 0.5).astype(float)
    value = ssim(a, 1.0 - a)
    assert -1.0 <= value < 0.0


def test_ssim_frozen_reference():
    a, b = fixed_pair()
    assert ssim(a, b) == pytest.approx(FROZEN_SSIM, abs=1e-6)


def test_ssim_matches_naive_oracle(rng):
    for _ in range(3):
        a = rng.uniform(0, 1, (16, 19))
        b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-12)


def test_ssim_matches_scikit_image():
    skm = pytest.importorskip("skimage.metrics")
    a, b = fixed_pair()
    ref = skm.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_symmetric(rng):
    a, b = rng.uniform(0, 1, (2, 24, 24))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_ssim_map_shape_and_uniform_window(rng):
    a, b = rng.uniform(0, 1, (2, 15, 17))
    assert ssim_map(a, b).shape == (5, 7)
    assert ssim_map(a, b, win_size=7, gaussian=False).shape == (9, 11)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 0.5))
def test_ssim_bounded_property(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (16, 16))
    b = np.clip(a + rng.normal(0, scale + 1e-9, a.shape), 0, 1)
    value = ssim(a, b)
    assert -1.0 <= value <= 1.0 + 1e-12
