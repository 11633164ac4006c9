"""Fixed high-pass filter bank: 30 SRM basic linear kernels followed by 32 Gabor kernels.

All kernels live on a 5x5 support; smaller SRM supports are centered and
zero padded. Filtering uses correlation orientation (the kernel is not flipped).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

SUPPORT = 5
_C = SUPPORT // 2

DEFAULT_SCALES = (0.5, 0.75, 1.0, 1.25)
DEFAULT_ORIENTATIONS = 8
DEFAULT_GAMMA = 0.5
DEFAULT_PHASE = 0.0


class Family(enum.Enum):
    SRM_1ST = "SRM_1ST"
    SRM_2ND = "SRM_2ND"
    SRM_3RD = "SRM_3RD"
    SRM_SQUARE3 = "SRM_SQUARE3"
    SRM_SQUARE5 = "SRM_SQUARE5"
    SRM_EDGE3 = "SRM_EDGE3"
    SRM_EDGE5 = "SRM_EDGE5"
    GABOR = "GABOR"


class PadMode(enum.Enum):
    ZERO = "ZERO"
    REFLECT = "REFLECT"


@dataclass(frozen=True, eq=False)
class Kernel:
    taps: np.ndarray
    normalizer: float
    family: Family
    index_in_family: int

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.shape != (SUPPORT, SUPPORT):
            raise ConfigError(f"kernel taps must be {SUPPORT}x{SUPPORT}, got {taps.shape}")
        if not self.normalizer > 0:
            raise ConfigError("kernel normalizer must be positive")
        if not np.any(taps):
            raise ConfigError("kernel taps are all zero")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def normalized(self) -> np.ndarray:
        return self.taps / self.normalizer


@dataclass(frozen=True)
class FilterBank:
    kernels: tuple[Kernel, ...]

    def __len__(self):
        return len(self.kernels)

    def __iter__(self):
        return iter(self.kernels)

    def __getitem__(self, i):
        return self.kernels[i]

    @cached_property
    def weights(self) -> np.ndarray:
        """Normalized taps stacked as a (K, 5, 5) float64 array."""
        w = np.stack([k.normalized for k in self.kernels])
        w.setflags(write=False)
        return w


@dataclass(frozen=True)
class ResidualConfig:
    truncation_T: float = 3.0
    pad_mode: PadMode = PadMode.ZERO

    def __post_init__(self):
        if not self.truncation_T > 0:
            raise ConfigError("truncation_T must be positive")
        object.__setattr__(self, "pad_mode", PadMode(self.pad_mode))


# neighbor directions as (row, col) offsets, starting to the right, clockwise
_DIRECTIONS_8 = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]
_DIRECTIONS_4 = [(0, 1), (1, 0), (1, 1), (1, -1)]

_SQUARE3 = np.array([[-1, 2, -1],
                     [2, -4, 2],
                     [-1, 2, -1]], dtype=np.float64)

_SQUARE5 = np.array([[-1, 2, -2, 2, -1],
                     [2, -6, 8, -6, 2],
                     [-2, 8, -12, 8, -2],
                     [2, -6, 8, -6, 2],
                     [-1, 2, -2, 2, -1]], dtype=np.float64)


def _line_kernel(direction, coeffs, offsets):
    taps = np.zeros((SUPPORT, SUPPORT))
    dr, dc = direction
    for c, o in zip(coeffs, offsets):
        taps[_C + o * dr, _C + o * dc] += c
    return taps


def _embed(small):
    taps = np.zeros((SUPPORT, SUPPORT))
    n = small.shape[0]
    off = (SUPPORT - n) // 2
    taps[off:off + n, off:off + n] = small
    return taps


def srm_kernels() -> list[Kernel]:
    """The 30 SRM basic linear residual kernels, in family order."""
    out = []
    for i, d in enumerate(_DIRECTIONS_8):
        out.append(Kernel(_line_kernel(d, (-1, 1), (0, 1)), 1.0, Family.SRM_1ST, i))
    for i, d in enumerate(_DIRECTIONS_4):
        out.append(Kernel(_line_kernel(d, (1, -2, 1), (-1, 0, 1)), 2.0, Family.SRM_2ND, i))
    for i, d in enumerate(_DIRECTIONS_8):
        out.append(Kernel(_line_kernel(d, (1, -3, 3, -1), (-1, 0, 1, 2)), 3.0, Family.SRM_3RD, i))
    out.append(Kernel(_embed(_SQUARE3), 4.0, Family.SRM_SQUARE3, 0))
    out.append(Kernel(_SQUARE5.copy(), 12.0, Family.SRM_SQUARE5, 0))
    # EDGE kernels: upper half of the square kernel, rotated by multiples of 90 degrees
    edge3 = _SQUARE3.copy()
    edge3[2, :] = 0
    for i in range(4):
        out.append(Kernel(_embed(np.rot90(edge3, -i)), 4.0, Family.SRM_EDGE3, i))
    edge5 = _SQUARE5.copy()
    edge5[3:, :] = 0
    for i in range(4):
        out.append(Kernel(np.rot90(edge5, -i).copy(), 12.0, Family.SRM_EDGE5, i))
    return out


def gabor_taps(sigma: float, theta: float, gamma: float = DEFAULT_GAMMA,
               phase: float = DEFAULT_PHASE) -> np.ndarray:
    """Gabor function sampled on the 5x5 integer grid (x = column, y = row), mean removed."""
    y, x = np.mgrid[-_C:_C + 1, -_C:_C + 1].astype(np.float64)
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    lam = 2.0 * sigma
    g = np.exp(-(xr ** 2 + gamma ** 2 * yr ** 2) / (2 * sigma ** 2)) * np.cos(2 * np.pi * xr / lam + phase)
    return g - g.mean()


def gabor_kernels(scales: Sequence[float] = DEFAULT_SCALES, orientations: int = DEFAULT_ORIENTATIONS,
                  gamma: float = DEFAULT_GAMMA, phase: float = DEFAULT_PHASE) -> list[Kernel]:
    """32 zero-mean Gabor kernels ordered by (scale, orientation), orientation k*pi/orientations."""
    if len(scales) * orientations != 32:
        raise ConfigError(f"{len(scales)} scales x {orientations} orientations != 32 Gabor kernels")
    out = []
    for sigma in scales:
        for k in range(orientations):
            taps = gabor_taps(sigma, k * math.pi / orientations, gamma, phase)
            out.append(Kernel(taps, 1.0, Family.GABOR, len(out)))
    return out


def full_bank() -> FilterBank:
    return FilterBank(tuple(srm_kernels() + gabor_kernels()))


def _pad(plane, pad_mode):
    mode = "constant" if pad_mode is PadMode.ZERO else "reflect"
    return np.pad(plane, _C, mode=mode)


def apply_bank(plane, bank: FilterBank, cfg: ResidualConfig = ResidualConfig()) -> np.ndarray:
    """Filter one H x W plane with every kernel and clamp to [-T, T].

    Returns a (len(bank), H, W) float64 stack with the same spatial size as
    the input.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ConfigError(f"expected a 2-D plane, got shape {plane.shape}")
    h, w = plane.shape
    if h < SUPPORT or w < SUPPORT:
        raise ConfigError(f"plane {h}x{w} is smaller than the {SUPPORT}x{SUPPORT} kernel support")
    windows = np.lib.stride_tricks.sliding_window_view(_pad(plane, cfg.pad_mode), (SUPPORT, SUPPORT))
    cols = windows.reshape(h * w, SUPPORT * SUPPORT)
    res = (bank.weights.reshape(len(bank), -1) @ cols.T).reshape(len(bank), h, w)
    return np.clip(res, -cfg.truncation_T, cfg.truncation_T, out=res)


def write_filters(bank: FilterBank, path) -> None:
    """Plain-text export: header line, then one line per kernel."""
    lines = [f"UCNET-FILTERS v1 count={len(bank)}"]
    for k in bank:
        taps = " ".join(f"{v:.9g}" for v in k.taps.ravel())
        lines.append(f"{k.family.value} {k.index_in_family} {k.normalizer:.9g} {taps}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_filters(path) -> FilterBank:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("UCNET-FILTERS v1 count="):
        raise ConfigError(f"{path}: not a UCNET-FILTERS v1 file")
    count = int(lines[0].rsplit("=", 1)[1])
    kernels = []
    for line in lines[1:count + 1]:
        parts = line.split()
        taps = np.array([float(v) for v in parts[3:]]).reshape(SUPPORT, SUPPORT)
        kernels.append(Kernel(taps, float(parts[2]), Family(parts[0]), int(parts[1])))
    if len(kernels) != count:
        raise ConfigError(f"{path}: header says {count} kernels, found {len(kernels)}")
    return FilterBank(tuple(kernels))
