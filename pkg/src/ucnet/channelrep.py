"""Channel representation: per-channel residual stacks concatenated into 3 x 62 planes."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ImageFormatError
from .filterbank import FilterBank, ResidualConfig, apply_bank


class Domain(enum.Enum):
    SPATIAL_RGB = "SPATIAL_RGB"
    JPEG_YCBCR = "JPEG_YCBCR"

    @classmethod
    def parse(cls, value) -> "Domain":
        """Accept enum members, their names, or the CLI spellings ``spatial``/``jpeg``."""
        if isinstance(value, cls):
            return value
        v = str(value).strip()
        aliases = {"spatial": cls.SPATIAL_RGB, "jpeg": cls.JPEG_YCBCR}
        if v.lower() in aliases:
            return aliases[v.lower()]
        try:
            return cls(v.upper())
        except ValueError:
            raise ConfigError(f"unknown domain {value!r}") from None


@dataclass(frozen=True, eq=False)
class ColorPlanes:
    domain: Domain
    planes: np.ndarray  # (3, H, W) float64

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 3:
            raise ImageFormatError(f"expected 3 planes of equal size, got shape {planes.shape}")
        if self.domain is Domain.SPATIAL_RGB and planes.size and (planes.min() < 0 or planes.max() > 255):
            raise ImageFormatError("SPATIAL_RGB plane values must lie in [0, 255]")
        object.__setattr__(self, "planes", planes)

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def to_image(self) -> np.ndarray:
        """H x W x 3 uint8 view for spatial planes (values must already be integral)."""
        return np.clip(np.rint(self.planes), 0, 255).astype(np.uint8).transpose(1, 2, 0).copy()


@dataclass(frozen=True, eq=False)
class ChannelRep:
    maps: np.ndarray  # (3 * K, H, W), channel-major
    truncation_T: float

    @property
    def shape(self):
        return self.maps.shape


def split_rgb(image) -> ColorPlanes:
    """Separate an H x W x 3 8-bit image into R, G, B planes."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageFormatError(f"expected an H x W x 3 image, got shape {image.shape}")
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255 or not np.all(image == np.round(image)):
            raise ImageFormatError("image values must be 8-bit integers")
    return ColorPlanes(Domain.SPATIAL_RGB, image.transpose(2, 0, 1).astype(np.float64))


def channel_representation(cp: ColorPlanes, bank: FilterBank, cfg: ResidualConfig = ResidualConfig(),
                           dtype=np.float32, workers: int = 1) -> ChannelRep:
    """Filter each color plane with the whole bank and concatenate the three stacks.

    Output plane ``62 * c + k`` is residual ``k`` of color channel ``c``.
    Channels are never summed or otherwise mixed.
    """
    if len(bank) != 62:
        raise ConfigError(f"filter bank must hold 62 kernels, got {len(bank)}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            stacks = list(pool.map(lambda p: apply_bank(p, bank, cfg), cp.planes))
    else:
        stacks = [apply_bank(p, bank, cfg) for p in cp.planes]
    return ChannelRep(np.concatenate(stacks, axis=0).astype(dtype, copy=False), cfg.truncation_T)
