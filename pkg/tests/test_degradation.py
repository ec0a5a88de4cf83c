import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from ispl import degradation as dg
from ispl.evaluation.metrics import psnr
from ispl.types import ValidationError


def rand_img(shape=(1, 3, 8, 8), seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=dtype)


def sliding_window_convolve(img, kernel):
    """Brute-force reference: true convolution with reflect-padded borders."""
    x = img.numpy()
    b, c, h, w = x.shape
    r = kernel.shape[0] // 2

    def refl(i, n):
        if i < 0:
            return -i
        if i >= n:
            return 2 * (n - 1) - i
        return i

    out = np.zeros_like(x)
    for bi in range(b):
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    s = 0.0
                    for u in range(-r, r + 1):
                        for v in range(-r, r + 1):
                            s += kernel[u + r, v + r] * x[bi, ci, refl(i - u, h), refl(j - v, w)]
                    out[bi, ci, i, j] = s
    return out


def keys_oracle_1d(row, scale, a=-0.5):
    """Direct evaluation of the stretched Keys kernel at each output sample point."""
    n = len(row)

    def k(t):
        t = abs(t)
        if t <= 1:
            return (a + 2) * t**3 - (a + 3) * t**2 + 1
        if t < 2:
            return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
        return 0.0

    def mirror(i):
        while i < 0 or i >= n:
            i = -i - 1 if i < 0 else 2 * n - 1 - i
        return i

    out = []
    for j in range(n // scale):
        x = (j + 0.5) * scale - 0.5
        num = den = 0.0
        for i in range(math.floor(x) - 2 * scale - 1, math.ceil(x) + 2 * scale + 2):
            wt = k((x - i) / scale)
            num += wt * row[mirror(i)]
            den += wt
        out.append(num / den)
    return np.array(out)


# --- convolve_blur ---------------------------------------------------------


def test_identity_kernel():
    x = rand_img()
    assert torch.equal(dg.convolve_blur(x, np.array([[1.0]])), x)


def test_constant_image_unchanged_by_blur():
    x = torch.full((1, 3, 16, 16), 0.37, dtype=torch.float64)
    out = dg.convolve_blur(x, dg.gaussian_kernel(2.0))
    assert torch.allclose(out, x, atol=1e-12, rtol=0)


def test_box_blur_matches_sliding_window():
    x = rand_img((1, 3, 8, 8), seed=3)
    k = np.full((3, 3), 1 / 9)
    np.testing.assert_allclose(dg.convolve_blur(x, k).numpy(), sliding_window_convolve(x, k), atol=1e-10)


def test_asymmetric_kernel_is_true_convolution():
    x = rand_img((1, 3, 9, 9), seed=4)
    k = dg.motion_kernel(5, 0.7)
    np.testing.assert_allclose(dg.convolve_blur(x, k).numpy(), sliding_window_convolve(x, k), atol=1e-10)


@pytest.mark.parametrize("kernel", [np.ones((2, 2)) / 4, np.ones((3, 3)), np.ones((3, 5)) / 15])
def test_bad_kernel_rejected(kernel):
    with pytest.raises(ValidationError):
        dg.convolve_blur(rand_img(), kernel)


def test_blur_preserves_interior_mean():
    # a random field's mean is preserved only approximately with reflect padding;
    # a periodic pattern whose period divides the crop is preserved exactly in the interior
    yy, xx = torch.meshgrid(torch.arange(40.0), torch.arange(40.0), indexing="ij")
    x = (0.5 + 0.3 * torch.sin(2 * math.pi * xx / 8) * torch.cos(2 * math.pi * yy / 8)).double()
    x = x.expand(1, 3, 40, 40)
    out = dg.convolve_blur(x, np.full((5, 5), 1 / 25))
    crop = (slice(None), slice(None), slice(4, 36), slice(4, 36))
    assert torch.allclose(out[crop].mean(dim=(-2, -1)), x[crop].mean(dim=(-2, -1)), atol=1e-8)


def test_kernels_normalized():
    for k in (dg.gaussian_kernel(1.3), dg.motion_kernel(8, 1.1), dg.motion_kernel(15, 0.0)):
        assert k.shape[0] % 2 == 1 and k.shape[0] == k.shape[1]
        assert abs(k.sum() - 1) < 1e-12 and (k >= 0).all()
    assert dg.gaussian_kernel(2.5).shape == (2 * math.ceil(5) + 1,) * 2


# --- bicubic ---------------------------------------------------------------


def test_downsample_scale_one_identity():
    x = rand_img()
    assert torch.equal(dg.downsample_bicubic(x, 1), x)


def test_downsample_constant():
    x = torch.full((1, 3, 32, 32), 0.61, dtype=torch.float64)
    out = dg.downsample_bicubic(x, 4)
    assert out.shape == (1, 3, 8, 8)
    assert torch.allclose(out, torch.full_like(out, 0.61), atol=1e-12)


@pytest.mark.parametrize("scale", [2, 4])
def test_bicubic_ramp_matches_keys_formula(scale):
    w = 16
    ramp = torch.linspace(0.1, 0.9, w, dtype=torch.float64)
    x = ramp.expand(1, 3, w, w).clone()
    out = dg.downsample_bicubic(x, scale)
    expected = keys_oracle_1d(ramp.numpy(), scale)
    np.testing.assert_allclose(out[0, 0, 0].numpy(), np.clip(expected, 0, 1), atol=1e-6)


def test_bicubic_random_image_matches_separable_oracle():
    x = rand_img((1, 1, 12, 12), seed=9)
    out = dg.resize_bicubic(x, (6, 6)).numpy()[0, 0]
    rows = np.stack([keys_oracle_1d(r, 2) for r in x.numpy()[0, 0]])
    expected = np.stack([keys_oracle_1d(c, 2) for c in rows.T]).T
    np.testing.assert_allclose(out, expected, atol=1e-10)


def test_downsample_rejects_non_divisible():
    with pytest.raises(ValidationError):
        dg.downsample_bicubic(rand_img((1, 3, 10, 10)), 4)


# --- mosaic ----------------------------------------------------------------


def test_mosaic_block_16_tiles_512():
    x = rand_img((1, 3, 512, 512), dtype=torch.float32)
    out = dg.mosaic(x, 16)
    tiles = out.reshape(1, 3, 32, 16, 32, 16)
    assert torch.equal(tiles, tiles[:, :, :, :1, :, :1].expand_as(tiles))


def test_mosaic_block_one_identity_and_tiny_case():
    x = rand_img()
    assert torch.equal(dg.mosaic(x, 1), x)
    y = torch.tensor([[0.0, 1.0], [1.0, 0.0]]).expand(1, 3, 2, 2)
    assert torch.equal(dg.mosaic(y, 2), torch.full((1, 3, 2, 2), 0.5))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), block=st.sampled_from([2, 4, 8]))
def test_mosaic_idempotent(seed, block):
    x = rand_img((1, 3, 16, 16), seed=seed, dtype=torch.float32)
    once = dg.mosaic(x, block)
    assert torch.equal(dg.mosaic(once, block), once)


def test_mosaic_rejects_non_divisible():
    with pytest.raises(ValidationError):
        dg.mosaic(rand_img((1, 3, 10, 10)), 4)


# --- noise -----------------------------------------------------------------


@pytest.mark.parametrize("model", ["gaussian", "laplacian"])
def test_zero_level_noise_identity(model):
    x = rand_img()
    assert torch.equal(dg.add_noise(x, model, 0.0, seed=1), x)


def test_gaussian_noise_std():
    x = torch.full((1, 3, 256, 256), 0.5, dtype=torch.float64)  # 196608 pixels
    d = dg.add_noise(x, "gaussian", 0.1, seed=5) - x
    # clamping is inactive: 0.5 +- 5 sigma stays inside [0, 1] with overwhelming probability
    assert abs(d.std().item() - 0.1) < 0.005


@pytest.mark.parametrize("model", ["gaussian", "poisson", "laplacian"])
def test_noise_rms_tracks_level(model):
    x = torch.full((1, 3, 128, 128), 0.5, dtype=torch.float64)
    d = dg.add_noise(x, model, 0.05, seed=2) - x
    assert abs(d.pow(2).mean().sqrt().item() - 0.05 * math.sqrt(0.5 if model == "poisson" else 1)) < 0.004


def test_noise_deterministic_and_per_image():
    x = rand_img((3, 3, 8, 8))
    a = dg.add_noise(x, "poisson", 0.05, seed=11)
    assert torch.equal(a, dg.add_noise(x, "poisson", 0.05, seed=11))
    # per-image sub-seeds: a lone image equals its slice of the batch
    assert torch.equal(dg.add_noise(x[:1], "poisson", 0.05, seed=11), a[:1])


def test_negative_noise_level_rejected():
    with pytest.raises(ValidationError):
        dg.add_noise(rand_img(), "gaussian", -0.1, seed=0)


# --- jpeg ------------------------------------------------------------------


def test_jpeg_q100_smooth_gradient():
    ramp = torch.linspace(0, 1, 64, dtype=torch.float64)
    x = torch.stack([ramp.expand(64, 64), ramp.expand(64, 64).T, 0.5 * torch.ones(64, 64)])[None]
    out = dg.jpeg_roundtrip(x, 100)
    assert out.shape == x.shape
    assert (out - x).abs().max() < 0.02


@pytest.mark.parametrize("q", [0, 10, 50, 85, 100])
def test_jpeg_constant_gray(q):
    x = torch.full((1, 3, 32, 32), 128 / 255, dtype=torch.float64)
    assert (dg.jpeg_roundtrip(x, q) - x).abs().max() < 0.01


def test_jpeg_rejects_bad_quality():
    with pytest.raises(ValidationError):
        dg.jpeg_roundtrip(rand_img(), 101)


# --- apply / sample_spec ---------------------------------------------------


def test_apply_all_disabled_identity():
    x = rand_img()
    assert torch.equal(dg.apply(x, dg.DegradationSpec("dual_blind")), x)


def test_apply_sr_equals_downsample():
    x = rand_img((1, 3, 32, 32))
    spec = dg.DegradationSpec("super_resolution", blur_kernel=np.array([[1.0]]), scale=4)
    assert torch.equal(dg.apply(x, spec), dg.downsample_bicubic(x, 4))


def test_dual_blind_differs_from_each_single_stage():
    x = rand_img((1, 3, 64, 64), seed=7)
    spec = dg.sample_spec("dual_blind", 3)
    full = dg.apply(x, spec)
    singles = [
        dg.DegradationSpec("deblur", blur_kernel=spec.blur_kernel, seed=spec.seed),
        dg.DegradationSpec("super_resolution", scale=spec.scale, seed=spec.seed),
        dg.DegradationSpec("denoise", noise_model=spec.noise_model, noise_level=spec.noise_level, seed=spec.seed),
        dg.DegradationSpec("jpeg", jpeg_quality=spec.jpeg_quality, seed=spec.seed),
    ]
    for s in singles:
        single = dg.apply(x, s)
        assert single.shape != full.shape or not torch.equal(single, full)


def test_apply_stage_error_carries_stage_name():
    spec = dg.DegradationSpec("super_resolution", scale=4)
    with pytest.raises(dg.DegradationError) as info:
        dg.apply(rand_img((1, 3, 10, 10)), spec)
    assert info.value.stage == "downsample"


@pytest.mark.parametrize("task", dg.TASKS)
def test_apply_pure_and_in_range(task):
    x = rand_img((2, 3, 64, 64), seed=1, dtype=torch.float32)
    spec = dg.sample_spec(task, 42)
    a = dg.apply(x, spec)
    assert torch.equal(a, dg.apply(x, spec))
    assert a.min() >= 0 and a.max() <= 1
    if a.shape == x.shape:
        assert math.isfinite(psnr(a, x))
        assert psnr(a, x) < 100


def test_sample_spec_recipes():
    h = dg.sample_spec("hallucination", 0)
    assert h.mosaic_block == 16 and h.scale == 1 and h.blur_kernel is None
    assert h.noise_model == "none" and h.jpeg_quality is None
    assert dg.sample_spec("super_resolution", 0).scale == 4
    for seed in range(50):
        d = dg.sample_spec("dual_blind", seed)
        assert d.mosaic_block is None
        assert d.blur_kernel is not None and d.noise_model != "none" and d.jpeg_quality is not None
        assert 50 <= dg.sample_spec("jpeg", seed).jpeg_quality <= 85
        lvl = dg.sample_spec("denoise", seed).noise_level
        assert 0.02 <= lvl <= 0.1
    models = {dg.sample_spec("denoise", s).noise_model for s in range(60)}
    assert models == {"gaussian", "poisson", "laplacian"}
    blurs = {dg.sample_spec("deblur", s).meta["blur"] for s in range(40)}
    assert blurs == {"gaussian", "motion"}


def test_sample_spec_deterministic_and_validates():
    assert dg.sample_spec("deblur", 9) == dg.sample_spec("deblur", 9)
    assert dg.sample_spec("deblur", 9) != dg.sample_spec("deblur", 10)
    with pytest.raises(ValidationError):
        dg.sample_spec("inpainting", 0)


def test_spec_roundtrip(tmp_path):
    spec = dg.sample_spec("dual_blind", 5)
    dg.save_spec(spec, tmp_path / "s.yaml")
    assert dg.load_spec(tmp_path / "s.yaml") == spec


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**20), task=st.sampled_from(dg.TASKS))
def test_every_op_stays_in_range(seed, task):
    x = rand_img((1, 3, 32, 32), seed=seed, dtype=torch.float32)
    out = dg.apply(x, dg.sample_spec(task, seed))
    assert out.min() >= 0 and out.max() <= 1
