import itertools

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from ispl.network import (
    ISPLModel,
    ModelConfig,
    MultiScaleDiscriminator,
    PixelAdaptiveConv2d,
    PriorFusion,
    SPADEBlock,
    correlation_maps,
    discriminate,
    instance_stats,
    pixel_adaptive_conv,
    spade_modulate,
)
from ispl.types import ValidationError


def small_config(**kw):
    base = dict(n_layers=3, base_channels=8, image_size=64, spade_hidden=16, aligned_channels=16)
    base.update(kw)
    return ModelConfig(**base)


def rand(shape, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=dtype)


def randn(shape, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=g, dtype=dtype)


# -- pixel-adaptive convolution ----------------------------------------------------


def pac_nested_loop(x, w, gy):
    """Brute-force per-pixel evaluation with reflect-mirrored neighbours."""
    x, w, gy = x.numpy(), w.numpy(), gy.numpy()
    b, c, h, wd = x.shape
    o, _, k, _ = w.shape
    r = k // 2

    def refl(i, n):
        return -i if i < 0 else (2 * (n - 1) - i if i >= n else i)

    out = np.zeros((b, o, h, wd))
    for bi in range(b):
        for i in range(h):
            for j in range(wd):
                for u in range(k):
                    for v in range(k):
                        qi, qj = refl(i + u - r, h), refl(j + v - r, wd)
                        phi = np.tanh(gy[bi, :, i, j] @ gy[bi, :, qi, qj])
                        out[bi, :, i, j] += phi * (w[:, :, u, v] @ x[bi, :, qi, qj])
    return out


@pytest.mark.parametrize("case", range(20))
def test_pac_matches_nested_loop(case):
    x = randn((1, 4, 6, 6), seed=case)
    w = randn((3, 4, 3, 3), seed=100 + case)
    gy = randn((1, 5, 6, 6), seed=200 + case) * 0.5
    out = pixel_adaptive_conv(x, w, gy)
    assert np.abs(out.numpy() - pac_nested_loop(x, w, gy)).max() < 1e-6


def test_pac_zero_correlation_gives_zero():
    x = randn((2, 4, 6, 6))
    w = randn((3, 4, 3, 3), seed=1)
    out = pixel_adaptive_conv(x, w, torch.zeros(2, 7, 6, 6, dtype=torch.float64))
    assert torch.count_nonzero(out) == 0


def test_pac_constant_guide_scales_plain_convolution():
    x = randn((1, 4, 6, 6))
    w = randn((3, 4, 3, 3), seed=1)
    c = torch.tensor([0.3, -0.2, 0.5], dtype=torch.float64)
    guide = c.view(1, 3, 1, 1).expand(1, 3, 6, 6)
    plain = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="reflect"), w)
    expected = torch.tanh(c.dot(c)) * plain
    assert torch.allclose(pixel_adaptive_conv(x, w, guide), expected, atol=1e-12)


def test_pac_module_with_zeroed_g_outputs_bias_only():
    pac = PixelAdaptiveConv2d(4, 3, 3, correlation_dim=8).double()
    nn.init.zeros_(pac.g[-1].weight)
    nn.init.zeros_(pac.g[-1].bias)
    with torch.no_grad():
        pac.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
    out = pac(randn((1, 4, 6, 6)))
    assert torch.equal(out, pac.bias.view(1, 3, 1, 1).expand_as(out))


def central_difference(fn, tensor, step=1e-4):
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        plus = fn().item()
        flat[i] = orig - step
        minus = fn().item()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def test_pac_gradients_match_finite_differences():
    torch.manual_seed(0)
    pac = PixelAdaptiveConv2d(4, 2, 3, correlation_dim=6).double()
    for p in pac.parameters():
        nn.init.normal_(p, 0.0, 0.5)
    x = randn((1, 4, 6, 6), seed=3).requires_grad_(True)
    probe = randn((1, 2, 6, 6), seed=4)

    def loss():
        return (pac(x) * probe).sum()

    loss().backward()
    for name, t in [("features", x)] + list(pac.named_parameters()):
        analytic = t.grad.detach().clone()
        with torch.no_grad():
            numeric = central_difference(loss, t)
        denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
        rel = (analytic - numeric).norm().item() / denom
        assert rel < 1e-4, (name, rel)


def test_pac_validation_errors():
    x = randn((1, 4, 6, 6))
    with pytest.raises(ValidationError):
        pixel_adaptive_conv(x, randn((3, 5, 3, 3)), randn((1, 2, 6, 6)))
    with pytest.raises(ValidationError):
        pixel_adaptive_conv(x, randn((3, 4, 2, 2)), randn((1, 2, 6, 6)))
    with pytest.raises(ValidationError):
        PixelAdaptiveConv2d(3, 4)(x)


def test_correlations_bounded_by_tanh():
    torch.manual_seed(0)
    model = ISPLModel(small_config())
    y = rand((2, 3, 64, 64), dtype=torch.float32)
    maps = correlation_maps(model, y)
    assert len(maps) == 3
    for m in maps:
        assert torch.all(m > -1) and torch.all(m < 1)
    # float32 tanh saturates to exactly +-1 for huge arguments; the closed bound still holds
    for pac in [m for m in model.modules() if isinstance(m, PixelAdaptiveConv2d)]:
        nn.init.normal_(pac.g[-1].weight, 0.0, 3.0)
    for m in correlation_maps(model, y):
        assert m.abs().max() <= 1
    assert all(pac.last_corr is None for pac in model.modules() if isinstance(pac, PixelAdaptiveConv2d))


# -- SPADE -------------------------------------------------------------------------


def test_spade_identity_modulation():
    x = randn((2, 5, 8, 8)) * 3 + 1
    mu, sigma = instance_stats(x)
    assert torch.allclose(spade_modulate(x, sigma, mu), x, atol=1e-6)


def test_spade_normalization_contract():
    x = randn((2, 5, 8, 8), seed=2) * 4 - 2
    out = spade_modulate(x, torch.ones(1), torch.zeros(1))
    assert out.mean(dim=(-2, -1)).abs().max() < 1e-5
    assert (out.var(dim=(-2, -1), unbiased=False) - 1).abs().max() < 1e-4


def test_spade_core_matches_explicit_statistics():
    x = randn((1, 3, 6, 6), seed=5)
    gamma, beta = randn((1, 3, 6, 6), seed=6), randn((1, 3, 6, 6), seed=7)
    arr = x.numpy()
    mu = arr.mean(axis=(2, 3), keepdims=True)
    sd = np.sqrt(((arr - mu) ** 2).mean(axis=(2, 3), keepdims=True))
    expected = gamma.numpy() * (arr - mu) / sd + beta.numpy()
    assert np.abs(spade_modulate(x, gamma, beta).numpy() - expected).max() < 1e-6


def test_spade_constant_input_is_finite():
    out = spade_modulate(torch.full((1, 2, 4, 4), 0.3), torch.ones(1), torch.zeros(1))
    assert torch.isfinite(out).all()


def test_spade_block_rejects_misaligned_guidance():
    block = SPADEBlock(4, 4, 2, hidden=8)
    with pytest.raises(ValidationError):
        block(torch.rand(1, 4, 8, 8), torch.rand(1, 2, 4, 4))
    assert block(torch.rand(1, 4, 8, 8), torch.rand(1, 2, 8, 8)).shape == (1, 4, 16, 16)


# -- encoder and pyramid -----------------------------------------------------------


def test_full_scale_innermost_embedding_is_16():
    cfg = ModelConfig()
    assert cfg.level_size(0) == 16
    assert [cfg.level_width(i) for i in range(5)] == [1024, 512, 256, 128, 64]


def test_encode_shapes_small():
    torch.manual_seed(0)
    model = ISPLModel(ModelConfig(n_layers=2, base_channels=4, image_size=64, spade_hidden=8))
    pyr = model.encode(torch.rand(1, 3, 64, 64))
    assert [p.shape[-1] for p in pyr] == [16, 32]
    assert [p.shape[1] for p in pyr] == [8, 4]


@pytest.mark.parametrize("n,size,variant", [
    (1, 16, "unet"), (2, 32, "y0"), (3, 64, "concat"), (3, 32, "matrix"), (4, 64, "unet"), (2, 64, "matrix"),
])
def test_pyramid_shape_law(n, size, variant):
    torch.manual_seed(0)
    cfg = ModelConfig(n_layers=n, base_channels=4, max_channels=16, image_size=size, fusion_variant=variant,
                      spade_hidden=8, aligned_channels=8)
    model = ISPLModel(cfg)
    y = torch.rand(2, 3, size, size)
    pyr = model.encode(y)
    assert len(pyr) == n
    for i, level in enumerate(pyr):
        assert level.shape[-1] == size // 2 ** (n - i) == cfg.level_size(i)
        assert level.shape[1] == cfg.level_width(i)
        assert torch.isfinite(level).all()
    out = model.restore_dynamic(y)
    assert out.shape == y.shape
    assert torch.isfinite(out).all() and out.min() >= 0 and out.max() <= 1


def test_encode_rejects_wrong_size():
    model = ISPLModel(small_config())
    with pytest.raises(ValidationError):
        model.encode(torch.rand(1, 3, 32, 32))


def test_eval_determinism():
    torch.manual_seed(0)
    model = ISPLModel(small_config()).eval()
    y = torch.rand(2, 3, 64, 64)
    a, b = model.encode(y), model.encode(y)
    assert all(torch.equal(p, q) for p, q in zip(a, b))
    assert torch.equal(model.restore_dynamic(y), model.restore_dynamic(y))


@pytest.mark.parametrize("kw", [dict(shared_k=4), dict(image_size=16), dict(fusion_variant="sum"),
                                dict(base_channels=0), dict(weight_init="orthogonal")])
def test_model_config_validation(kw):
    with pytest.raises(ValidationError):
        small_config(**kw)


def test_model_config_roundtrip_and_strictness():
    cfg = small_config(fusion_variant="matrix")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError, match="bogus"):
        ModelConfig.from_dict({**cfg.to_dict(), "bogus": 1})


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16), variant=st.sampled_from(["y0", "unet", "concat", "matrix"]),
       init=st.sampled_from(["fan_in", "normal"]))
def test_forward_is_finite_under_random_weights(seed, variant, init):
    torch.manual_seed(seed)
    model = ISPLModel(ModelConfig(n_layers=2, base_channels=4, image_size=32, fusion_variant=variant,
                                  spade_hidden=8, aligned_channels=8, weight_init=init))
    for p in model.parameters():
        nn.init.normal_(p, 0.0, 0.5)
    out = model.restore_dynamic(rand((1, 3, 32, 32), seed=seed, dtype=torch.float32))
    assert torch.isfinite(out).all()


# -- fusion ------------------------------------------------------------------------


def fake_pyramid(widths, size=32, seed=0):
    n = len(widths)
    return [randn((1, w, size // 2 ** (n - i), size // 2 ** (n - i)), seed=seed + i, dtype=torch.float32)
            for i, w in enumerate(widths)]


def test_unet_fusion_returns_level_unchanged():
    widths = [16, 8, 4]
    pyr = fake_pyramid(widths)
    fusion = PriorFusion("unet", widths)
    for i in range(3):
        assert fusion(pyr, i) is pyr[i]
    assert np.array_equal(fusion.plan().weight_matrix, np.eye(3))


def test_y0_fusion_depends_only_on_y0():
    widths = [16, 8, 4]
    pyr = fake_pyramid(widths)
    zeroed = [pyr[0]] + [torch.zeros_like(p) for p in pyr[1:]]
    fusion = PriorFusion("y0", widths)
    for i in range(3):
        assert torch.equal(fusion(pyr, i), fusion(zeroed, i))
        assert fusion(pyr, i).shape[-1] == pyr[i].shape[-1]
    assert np.array_equal(fusion.plan().weight_matrix[:, 0], np.ones(3))


def test_concat_fusion_channels():
    widths = [16, 8, 4]
    pyr = fake_pyramid(widths)
    fusion = PriorFusion("concat", widths)
    out = fusion(pyr, 1)
    assert out.shape == (1, 28, pyr[1].shape[-2], pyr[1].shape[-1])
    assert torch.equal(out[:, 16:24], pyr[1])


def test_matrix_fusion_identity_and_mixed_row():
    widths = [16, 8, 4]
    pyr = fake_pyramid(widths)
    fusion = PriorFusion("matrix", widths, aligned_channels=6)
    size = pyr[1].shape[-2:]
    align = [F.interpolate(fusion.align[j](pyr[j]), size=size, mode="bilinear", align_corners=False)
             if pyr[j].shape[-2:] != size else fusion.align[j](pyr[j]) for j in range(3)]
    assert torch.allclose(fusion(pyr, 1), align[1], atol=1e-6)
    with torch.no_grad():
        fusion.weight[1] = torch.tensor([0.5, 0.5, 0.0])
    assert torch.allclose(fusion(pyr, 1), 0.5 * align[0] + 0.5 * align[1], atol=1e-6)


def test_fusion_level_out_of_range():
    fusion = PriorFusion("unet", [8, 4])
    with pytest.raises(ValidationError):
        fusion(fake_pyramid([8, 4]), 2)


def test_matrix_with_identity_align_reproduces_unet():
    common = dict(n_layers=3, base_channels=8, max_channels=8, image_size=32, spade_hidden=8, aligned_channels=8)
    torch.manual_seed(0)
    unet = ISPLModel(ModelConfig(fusion_variant="unet", **common)).eval()
    matrix = ISPLModel(ModelConfig(fusion_variant="matrix", **common)).eval()
    missing, unexpected = matrix.load_state_dict(unet.state_dict(), strict=False)
    assert not unexpected and all(k.startswith("fusion.") for k in missing)
    with torch.no_grad():
        for conv in matrix.fusion.align:
            conv.weight.copy_(torch.eye(8).view(8, 8, 1, 1))
            conv.bias.zero_()
    y = torch.rand(2, 3, 32, 32)
    assert (matrix.restore_dynamic(y) - unet.restore_dynamic(y)).abs().max() < 1e-6


# -- restoration modes -------------------------------------------------------------


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return ISPLModel(small_config()).eval()


def test_fixed_k_zero_equals_dynamic(model):
    y = torch.rand(1, 3, 64, 64)
    assert torch.equal(model.restore_fixed_k(y, 0), model.restore_dynamic(y))
    assert torch.equal(model(y), model.restore_dynamic(y))


def test_fixed_k_full_ignores_guidance(model):
    y = torch.rand(1, 3, 64, 64)
    pyr = model.encode(y)
    forced = model.generate(pyr, {i: torch.zeros_like(model.fuse(pyr, i)) for i in range(3)})
    assert torch.equal(model.restore_fixed_k(y, 3), forced)


def test_fixed_k_changes_output(model):
    y = torch.rand(1, 3, 64, 64)
    assert (model.restore_fixed_k(y, 2) - model.restore_fixed_k(y, 0)).pow(2).sum() > 0
    for k in (-1, 4):
        with pytest.raises(ValidationError):
            model.restore_fixed_k(y, k)


def test_isolation(model):
    y = torch.rand(1, 3, 64, 64)
    a, b = model.isolate_subspace(y, 0), model.isolate_subspace(y, 2)
    assert (a - b).pow(2).sum() > 0
    for bad in (-1, 3, None):
        with pytest.raises(ValidationError):
            model.isolate_subspace(y, bad)
    # replace-all drives every block from the same constant guidance
    uniform = model.isolate_subspace(y, None, replace_all=True)
    assert uniform.shape == y.shape


def test_isolation_single_layer_is_dynamic():
    torch.manual_seed(0)
    m = ISPLModel(ModelConfig(n_layers=1, base_channels=4, image_size=16, spade_hidden=8)).eval()
    y = torch.rand(1, 3, 16, 16)
    assert torch.equal(m.isolate_subspace(y, 0), m.restore_dynamic(y))


def test_accumulate_final_equals_dynamic(model):
    y = torch.rand(1, 3, 64, 64)
    assert torch.equal(model.accumulate(y, 2), model.restore_dynamic(y))
    with pytest.raises(ValidationError):
        model.accumulate(y, 3)


# -- discriminator -----------------------------------------------------------------


def test_discriminator_shapes_and_determinism():
    torch.manual_seed(0)
    disc = MultiScaleDiscriminator(3, 8, depth=4, scales=2).eval()
    img = torch.rand(2, 3, 64, 64)
    out = discriminate(img, disc)
    assert len(out) == 2
    assert [len(f) for _, f in out] == [4, 4]
    s0, s1 = out[0][0], out[1][0]
    assert s0.shape[:2] == (2, 1) and s1.shape[:2] == (2, 1)
    assert s0.shape[-1] > s1.shape[-1]
    again = discriminate(img, disc)
    assert all(torch.equal(a[0], b[0]) for a, b in zip(out, again))


@pytest.mark.parametrize("scales,depth", list(itertools.product([1, 2, 3], [2, 4])))
def test_discriminator_grid(scales, depth):
    disc = MultiScaleDiscriminator(3, 4, depth=depth, scales=scales)
    out = disc(torch.rand(1, 3, 64, 64))
    assert len(out) == scales and all(len(f) == depth for _, f in out)
