import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucnet.channelrep import ColorPlanes, Domain, split_rgb
from ucnet.errors import ConfigError, ImageFormatError
from ucnet.jpegcodec import encode_jpeg
from ucnet.stegosim import (LOG2_3, EmbedSpec, derive_seed, inverse_ternary_entropy, jpeg_embed, lsbm_embed,
                            synthetic_cover, ternary_entropy)


def _newton_inverse(alpha):
    """Independent root finder: Newton iterations on H3 from a safe start."""
    b = 0.1
    for _ in range(100):
        h = -2 * b * math.log2(b) - (1 - 2 * b) * math.log2(1 - 2 * b)
        dh = 2 * math.log2((1 - 2 * b) / b)
        b = min(max(b - (h - alpha) / dh, 1e-15), 1 / 3 - 1e-15)
    return b


def test_entropy_endpoints():
    assert inverse_ternary_entropy(0.0) == 0.0
    assert abs(inverse_ternary_entropy(LOG2_3) - 1 / 3) < 1e-9
    assert abs(ternary_entropy(1 / 3) - LOG2_3) < 1e-12


def test_alpha_one():
    beta = inverse_ternary_entropy(1.0)
    assert abs(beta - _newton_inverse(1.0)) < 1e-10
    assert abs(beta - 0.1135) < 5e-4
    assert abs(ternary_entropy(beta) - 1.0) < 1e-10


def test_inverse_on_grid():
    for alpha in np.linspace(0.0, LOG2_3, 50):
        assert abs(ternary_entropy(inverse_ternary_entropy(alpha)) - alpha) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1 / 3))
def test_inverse_recovers_beta(beta):
    assert abs(inverse_ternary_entropy(ternary_entropy(beta)) - beta) < 1e-8


def test_inverse_out_of_range():
    with pytest.raises(ConfigError):
        inverse_ternary_entropy(1.7)
    with pytest.raises(ConfigError):
        inverse_ternary_entropy(-0.1)


def test_embed_spec_consistency():
    s = EmbedSpec.from_beta(0.2, seed=3)
    assert abs(s.beta - 0.2) < 1e-15 and s.seed == 3
    assert abs(EmbedSpec(s.payload_alpha).beta - 0.2) < 1e-9
    with pytest.raises(ConfigError):
        EmbedSpec(1.0, 0, 0.3)
    with pytest.raises(ConfigError):
        EmbedSpec.from_beta(0.5)


def test_derive_seed():
    assert derive_seed(5, 0) == 5
    assert len({derive_seed(5, i) for i in range(100)}) == 100


def test_lsbm_beta_zero_identity(rng):
    cp = split_rgb(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
    out = lsbm_embed(cp, EmbedSpec(0.0, seed=1))
    assert np.array_equal(out.planes, cp.planes)


def test_lsbm_change_rate(rng):
    cp = split_rgb(rng.integers(1, 255, (256, 256, 3), dtype=np.uint8))
    out = lsbm_embed(cp, EmbedSpec.from_beta(0.2, seed=9))
    n = cp.planes.size
    rate = np.count_nonzero(out.planes != cp.planes) / n
    sigma = math.sqrt(0.2 * 0.8 / n)
    assert abs(rate - 0.2) < 3 * sigma
    assert abs(rate - 0.2) < 0.01


def test_lsbm_magnitude_and_bounds(rng):
    img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    img[:8] = 255
    img[8:16] = 0
    cp = split_rgb(img)
    out = lsbm_embed(cp, EmbedSpec.from_beta(1 / 3, seed=2))
    d = out.planes - cp.planes
    assert set(np.unique(d)) <= {-1.0, 0.0, 1.0}
    assert out.planes.min() >= 0 and out.planes.max() <= 255
    assert np.all(out.planes[:, :8][d[:, :8] != 0] == 254)
    assert np.all(out.planes[:, 8:16][d[:, 8:16] != 0] == 1)


def test_lsbm_deterministic(rng):
    cp = split_rgb(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
    a = lsbm_embed(cp, EmbedSpec.from_beta(0.1, seed=4))
    b = lsbm_embed(cp, EmbedSpec.from_beta(0.1, seed=4))
    c = lsbm_embed(cp, EmbedSpec.from_beta(0.1, seed=5))
    assert np.array_equal(a.planes, b.planes) and not np.array_equal(a.planes, c.planes)


def test_lsbm_rejects_ycbcr():
    with pytest.raises(ImageFormatError):
        lsbm_embed(ColorPlanes(Domain.JPEG_YCBCR, np.zeros((3, 4, 4))), EmbedSpec(0.5))


def _jpeg(rng, size=64, quality=90):
    return encode_jpeg(rng.integers(0, 256, (size, size, 3), dtype=np.uint8), quality)[1]


def test_jpeg_beta_zero_identity(rng):
    j = _jpeg(rng)
    out = jpeg_embed(j, EmbedSpec(0.0))
    assert all(np.array_equal(a, b) for a, b in zip(out.coeff_blocks, j.coeff_blocks))


def test_jpeg_touches_only_nonzero_ac(rng):
    j = _jpeg(rng)
    out = jpeg_embed(j, EmbedSpec.from_beta(1 / 3, seed=3))
    for a, b in zip(j.coeff_blocks, out.coeff_blocks):
        d = b - a
        assert set(np.unique(d)) <= {-1, 0, 1}
        assert np.all(d[..., 0, 0] == 0)
        assert np.all(d[a == 0] == 0)


def test_jpeg_change_rate(rng):
    j = _jpeg(rng, size=256, quality=95)
    out = jpeg_embed(j, EmbedSpec.from_beta(0.1, seed=11))
    sites = changed = 0
    for a, b in zip(j.coeff_blocks, out.coeff_blocks):
        mask = a != 0
        mask[..., 0, 0] = False
        sites += int(mask.sum())
        changed += int((a != b)[mask].sum())
    assert sites >= 10 ** 5
    rate = changed / sites
    assert abs(rate - 0.1) < 3 * math.sqrt(0.09 / sites)
    assert abs(rate - 0.1) < 0.01


def test_jpeg_embed_does_not_mutate_input(rng):
    j = _jpeg(rng)
    before = [b.copy() for b in j.coeff_blocks]
    jpeg_embed(j, EmbedSpec.from_beta(0.2, seed=1))
    assert all(np.array_equal(a, b) for a, b in zip(before, j.coeff_blocks))


def test_synthetic_cover_shape_and_determinism():
    a = synthetic_cover(np.random.default_rng(0), 32)
    b = synthetic_cover(np.random.default_rng(0), 32)
    assert a.shape == (32, 32, 3) and a.dtype == np.uint8
    assert np.array_equal(a, b)
    assert a.std() > 1
