"""Embedding simulators (spatial LSB matching, JPEG +-1 on nonzero AC) and synthetic covers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channelrep import ColorPlanes, Domain
from .errors import ConfigError, ImageFormatError
from .jpegcodec import JpegImage

LOG2_3 = math.log2(3)


def ternary_entropy(beta: float) -> float:
    """H3(beta) = -2 beta log2 beta - (1 - 2 beta) log2(1 - 2 beta), in bits.

    Increasing on [0, 1/3], where it reaches its maximum log2 3.
    """
    if beta <= 0:
        return 0.0
    if beta > 0.5:
        return float("nan")
    rest = 1 - 2 * beta
    return -2 * beta * math.log2(beta) - (rest * math.log2(rest) if rest > 0 else 0.0)


def inverse_ternary_entropy(alpha: float, tol: float = 1e-12) -> float:
    """Change rate in [0, 1/3] whose ternary entropy equals ``alpha`` (bisection)."""
    if not 0 <= alpha <= LOG2_3 + 1e-12:
        raise ConfigError(f"payload {alpha} outside [0, log2 3]")
    if alpha == 0:
        return 0.0
    if alpha >= LOG2_3:
        return 1 / 3
    lo, hi = 0.0, 1 / 3  # H3 is increasing on this interval
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ternary_entropy(mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class EmbedSpec:
    payload_alpha: float
    seed: int = 0
    change_rate_beta: float | None = None

    def __post_init__(self):
        beta = inverse_ternary_entropy(self.payload_alpha)
        if self.change_rate_beta is None:
            object.__setattr__(self, "change_rate_beta", beta)
        elif abs(self.change_rate_beta - beta) > 1e-9:
            raise ConfigError(f"beta {self.change_rate_beta} does not match alpha {self.payload_alpha}")

    @classmethod
    def from_beta(cls, beta: float, seed: int = 0) -> "EmbedSpec":
        if not 0 <= beta <= 1 / 3:
            raise ConfigError(f"change rate {beta} outside [0, 1/3]")
        return cls(ternary_entropy(beta), seed, beta)

    @property
    def beta(self) -> float:
        return self.change_rate_beta


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed for parallel dataset generation."""
    return (int(seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def lsbm_embed(planes: ColorPlanes, spec: EmbedSpec) -> ColorPlanes:
    """LSB matching: every pixel of every channel moves by +-1 with probability beta.

    Direction is a fair coin, except that 0 always moves up and 255 always
    moves down.
    """
    if planes.domain is not Domain.SPATIAL_RGB:
        raise ImageFormatError("LSB matching needs SPATIAL_RGB planes")
    x = planes.planes
    if np.any(x != np.round(x)):
        raise ImageFormatError("LSB matching needs 8-bit valued planes")
    rng = np.random.default_rng(spec.seed)
    change = rng.random(x.shape) < spec.beta
    step = np.where(rng.random(x.shape) < 0.5, -1.0, 1.0)
    step[x == 0] = 1.0
    step[x == 255] = -1.0
    return ColorPlanes(Domain.SPATIAL_RGB, x + change * step)


def jpeg_embed(j: JpegImage, spec: EmbedSpec) -> JpegImage:
    """Change each nonzero AC coefficient by +-1 with probability beta; DC and zeros untouched."""
    rng = np.random.default_rng(spec.seed)
    out = j.copy()
    for comp in out.components_info:
        c = comp.coeffs
        sites = c != 0
        sites[..., 0, 0] = False
        change = rng.random(c.shape) < spec.beta
        step = np.where(rng.random(c.shape) < 0.5, -1, 1).astype(c.dtype)
        comp.coeffs = c + (sites & change) * step
    return out


def _smooth_noise(rng, size, sigma):
    f = np.fft.fftfreq(size)
    gain = np.exp(-2 * (np.pi * sigma) ** 2 * (f[:, None] ** 2 + f[None, :] ** 2))
    field = np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * gain).real
    return field / (field.std() + 1e-12)


def synthetic_cover(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Random smooth color texture as an H x W x 3 uint8 image.

    Luma is a mix of oriented sinusoids and band-limited noise fields at a
    few scales; chroma adds weaker independent fields. Values are rounded
    to integers and clipped, so the only fine-grain noise is rounding.
    """
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    luma = np.zeros((size, size))
    for _ in range(rng.integers(1, 4)):
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(6, 40)
        luma += rng.uniform(5, 30) * np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period
                                            + rng.uniform(0, 2 * np.pi))
    for sigma in (1.5, 4.0, 10.0):
        luma += rng.uniform(2, 20) * _smooth_noise(rng, size, sigma)
    gains = rng.uniform(0.6, 1.2, size=3)
    means = rng.uniform(70, 180, size=3)
    img = np.stack([means[c] + gains[c] * luma + rng.uniform(1, 8) * _smooth_noise(rng, size, 3.0)
                    for c in range(3)], axis=-1)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
