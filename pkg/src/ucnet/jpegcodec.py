"""Baseline JPEG: quantized DCT coefficient access, unrounded YCbCr decompression,
and a small 4:4:4 encoder for fabricating covers.

Coefficient blocks are stored in natural order, ``block[v, u]`` with ``v`` the
vertical and ``u`` the horizontal frequency. Quantization tables are kept in
zigzag order exactly as stored in the file.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .channelrep import ColorPlanes, Domain
from .errors import (ArithmeticUnsupported, BadMarker, ConfigError, ImageFormatError,
                     ProgressiveUnsupported, TruncatedStream)


def _zigzag_order():
    order = []
    for s in range(15):
        rows = range(max(0, s - 7), min(s, 7) + 1)
        if s % 2 == 0:
            rows = reversed(rows)
        order.extend((r, s - r) for r in rows)
    return order


ZIGZAG = _zigzag_order()
# ZIGZAG_TO_NATURAL[k] is the row-major index of zigzag position k
ZIGZAG_TO_NATURAL = np.array([r * 8 + c for r, c in ZIGZAG])

BASE_LUMA_QTABLE = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
]).reshape(8, 8)

BASE_CHROMA_QTABLE = np.full((8, 8), 99)
BASE_CHROMA_QTABLE[:4, :4] = [[17, 18, 24, 47],
                              [18, 21, 26, 66],
                              [24, 26, 56, 99],
                              [47, 66, 99, 99]]

# (class, id) -> (code-length counts for lengths 1..16, symbols)
STD_HUFFMAN = {
    (0, 0): ([0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0], list(range(12))),
    (0, 1): ([0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0], list(range(12))),
    (1, 0): ([0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d], [
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
        0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
        0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
        0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
        0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
        0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
        0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
        0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
        0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
        0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
        0xf9, 0xfa]),
    (1, 1): ([0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77], [
        0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
        0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
        0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
        0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
        0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
        0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
        0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
        0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
        0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
        0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
        0xf9, 0xfa]),
}

SOI, EOI, SOS, DQT, DHT, DRI, DAC, COM = 0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xDD, 0xCC, 0xFE
SOF_SEQUENTIAL = (0xC0, 0xC1)
SOF_PROGRESSIVE = 0xC2
SOF_ARITHMETIC = (0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF)
SOF_OTHER = (0xC3, 0xC5, 0xC6, 0xC7)


def dct_matrix() -> np.ndarray:
    """Orthonormal 8-point DCT-II matrix ``D[u, x] = c(u) cos((2x+1) u pi / 16)``."""
    u = np.arange(8)[:, None]
    x = np.arange(8)[None, :]
    d = np.cos((2 * x + 1) * u * np.pi / 16) / 2
    d[0] /= math.sqrt(2)
    return d


_D = dct_matrix()


@dataclass(eq=False)
class Component:
    cid: int
    h: int
    v: int
    tq: int
    coeffs: np.ndarray  # (blocks_y, blocks_x, 8, 8) int32, natural order


@dataclass(eq=False)
class JpegImage:
    width: int
    height: int
    quant_tables: dict[int, np.ndarray]  # id -> 64 ints, zigzag order
    components_info: list[Component] = field(default_factory=list)

    @property
    def components(self) -> int:
        return len(self.components_info)

    @property
    def sampling(self) -> list[tuple[int, int]]:
        return [(c.h, c.v) for c in self.components_info]

    @property
    def coeff_blocks(self) -> list[np.ndarray]:
        return [c.coeffs for c in self.components_info]

    def qtable_natural(self, component: int) -> np.ndarray:
        """Quantization table of a component as an 8x8 natural-order array."""
        zz = self.quant_tables[self.components_info[component].tq]
        nat = np.empty(64, dtype=np.int64)
        nat[ZIGZAG_TO_NATURAL] = zz
        return nat.reshape(8, 8)

    def copy(self) -> "JpegImage":
        comps = [Component(c.cid, c.h, c.v, c.tq, c.coeffs.copy()) for c in self.components_info]
        return JpegImage(self.width, self.height, {k: v.copy() for k, v in self.quant_tables.items()}, comps)


# --------------------------------------------------------------------------- decoding

class _BitReader:
    """MSB-first bit reader over one entropy-coded segment with 0xFF00 unstuffing done."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def bits(self, n: int) -> int:
        while self.nbits < n:
            if self.pos >= len(self.data):
                raise TruncatedStream("entropy-coded data ended early")
            self.acc = (self.acc << 8) | self.data[self.pos]
            self.pos += 1
            self.nbits += 8
        self.nbits -= n
        val = (self.acc >> self.nbits) & ((1 << n) - 1)
        self.acc &= (1 << self.nbits) - 1
        return val

    def reset(self):
        self.acc = 0
        self.nbits = 0


class _HuffmanTable:
    def __init__(self, counts, symbols):
        if sum(counts) != len(symbols):
            raise BadMarker("Huffman table symbol count mismatch")
        self.lookup = {}
        self.codes = {}
        code = 0
        k = 0
        for length in range(1, 17):
            for _ in range(counts[length - 1]):
                sym = symbols[k]
                self.lookup[(length, code)] = sym
                self.codes[sym] = (code, length)
                code += 1
                k += 1
            code <<= 1

    def decode(self, reader: _BitReader) -> int:
        code = 0
        for length in range(1, 17):
            code = (code << 1) | reader.bits(1)
            sym = self.lookup.get((length, code))
            if sym is not None:
                return sym
        raise BadMarker("invalid Huffman code")


def _extend(v: int, size: int) -> int:
    return v - (1 << size) + 1 if v < (1 << (size - 1)) else v


def _decode_block(reader, dc_table, ac_table, pred, out_zz):
    size = dc_table.decode(reader)
    if size > 11:
        raise BadMarker(f"DC magnitude category {size} out of range")
    dc = pred + (_extend(reader.bits(size), size) if size else 0)
    out_zz[0] = dc
    k = 1
    while k < 64:
        rs = ac_table.decode(reader)
        run, size = rs >> 4, rs & 15
        if size == 0:
            if run == 15:
                k += 16
                continue
            break
        k += run
        if k > 63:
            raise BadMarker("AC run exceeds block")
        out_zz[k] = _extend(reader.bits(size), size)
        k += 1
    return dc


def _scan_segment(data: bytes, start: int):
    """Entropy-coded bytes from ``start`` up to the next real marker, unstuffed."""
    end = start
    n = len(data)
    while True:
        end = data.find(b"\xff", end)
        if end < 0 or end + 1 >= n:
            raise TruncatedStream("scan data is not terminated by a marker")
        nxt = data[end + 1]
        if nxt == 0x00:
            end += 2
            continue
        if 0xD0 <= nxt <= 0xD7:
            raise BadMarker("restart markers are not supported")
        break
    return data[start:end].replace(b"\xff\x00", b"\xff"), end


def parse_jpeg(data: bytes) -> JpegImage:
    """Parse a baseline sequential Huffman JPEG into its quantized DCT coefficients."""
    data = bytes(data)
    if len(data) < 2:
        raise TruncatedStream("file too short")
    if data[0] != 0xFF or data[1] != SOI:
        raise BadMarker("missing SOI marker")
    pos = 2
    qtables: dict[int, np.ndarray] = {}
    htables: dict[tuple[int, int], _HuffmanTable] = {}
    frame = None
    comps: list[Component] = []
    decoded_scan = False

    def segment(p):
        if p + 2 > len(data):
            raise TruncatedStream("segment length missing")
        (length,) = struct.unpack(">H", data[p:p + 2])
        if length < 2 or p + length > len(data):
            raise TruncatedStream("segment runs past end of file")
        return data[p + 2:p + length], p + length

    while True:
        if pos >= len(data):
            raise TruncatedStream("missing EOI marker")
        if data[pos] != 0xFF:
            raise BadMarker(f"expected marker at offset {pos}")
        while pos < len(data) and data[pos] == 0xFF:
            pos += 1
        if pos >= len(data):
            raise TruncatedStream("missing EOI marker")
        marker = data[pos]
        pos += 1
        if marker == EOI:
            break
        if marker == SOF_PROGRESSIVE:
            raise ProgressiveUnsupported()
        if marker in SOF_ARITHMETIC or marker == DAC:
            raise ArithmeticUnsupported()
        if marker in SOF_OTHER or marker == SOI or 0xD0 <= marker <= 0xD7:
            raise BadMarker(f"unsupported marker 0xFF{marker:02X}")
        body, pos = segment(pos)
        if marker == DQT:
            i = 0
            while i < len(body):
                pq, tq = body[i] >> 4, body[i] & 15
                i += 1
                if tq > 3 or pq > 1:
                    raise BadMarker("bad DQT table spec")
                n = 64 * (pq + 1)
                if i + n > len(body):
                    raise TruncatedStream("DQT table truncated")
                fmt = ">64H" if pq else "64B"
                qtables[tq] = np.array(struct.unpack(fmt, body[i:i + n]), dtype=np.int64)
                i += n
        elif marker == DHT:
            i = 0
            while i < len(body):
                if i + 17 > len(body):
                    raise TruncatedStream("DHT table truncated")
                tc, th = body[i] >> 4, body[i] & 15
                counts = list(body[i + 1:i + 17])
                total = sum(counts)
                if i + 17 + total > len(body) or tc > 1 or th > 3:
                    raise BadMarker("bad DHT table spec")
                htables[(tc, th)] = _HuffmanTable(counts, list(body[i + 17:i + 17 + total]))
                i += 17 + total
        elif marker == DRI:
            if len(body) >= 2 and struct.unpack(">H", body[:2])[0] != 0:
                raise BadMarker("restart intervals are not supported")
        elif marker in SOF_SEQUENTIAL:
            if frame is not None:
                raise BadMarker("multiple frames")
            if len(body) < 6:
                raise TruncatedStream("SOF truncated")
            precision, height, width, nc = struct.unpack(">BHHB", body[:6])
            if precision != 8:
                raise BadMarker(f"{precision}-bit samples are not supported")
            if nc not in (1, 3) or len(body) < 6 + 3 * nc:
                raise BadMarker(f"unsupported component count {nc}")
            if height == 0 or width == 0:
                raise BadMarker("zero image dimension (DNL) is not supported")
            frame = (width, height)
            for c in range(nc):
                cid, hv, tq = body[6 + 3 * c:9 + 3 * c]
                comps.append(Component(cid, hv >> 4, hv & 15, tq, None))
            hmax = max(c.h for c in comps)
            vmax = max(c.v for c in comps)
            for c in comps:
                if c.h < 1 or c.v < 1 or hmax % c.h or vmax % c.v:
                    raise BadMarker("unsupported sampling factors")
                bx = math.ceil(math.ceil(width * c.h / hmax) / 8)
                by = math.ceil(math.ceil(height * c.v / vmax) / 8)
                c.coeffs = np.zeros((by, bx, 8, 8), dtype=np.int32)
        elif marker == SOS:
            if frame is None:
                raise BadMarker("SOS before SOF")
            ns = body[0]
            scomps = []
            for i in range(ns):
                cid, tt = body[1 + 2 * i:3 + 2 * i]
                match = [c for c in comps if c.cid == cid]
                if not match:
                    raise BadMarker(f"scan references unknown component {cid}")
                scomps.append((match[0], tt >> 4, tt & 15))
            ss, se, ahal = body[1 + 2 * ns:4 + 2 * ns]
            if ss != 0 or se != 63 or ahal != 0:
                raise BadMarker("non-sequential scan parameters")
            seg, pos = _scan_segment(data, pos)
            _decode_scan(seg, frame, comps, scomps, htables)
            decoded_scan = True
        # APPn, COM and other segments are skipped
    if frame is None or not decoded_scan:
        raise BadMarker("no frame or scan data before EOI")
    for c in comps:
        if c.tq not in qtables:
            raise BadMarker(f"missing quantization table {c.tq}")
    return JpegImage(frame[0], frame[1], qtables, comps)


def _decode_scan(seg, frame, comps, scomps, htables):
    reader = _BitReader(seg)
    width, height = frame
    hmax = max(c.h for c in comps)
    vmax = max(c.v for c in comps)
    tables = []
    for comp, td, ta in scomps:
        if (0, td) not in htables or (1, ta) not in htables:
            raise BadMarker("scan references a missing Huffman table")
        tables.append((htables[(0, td)], htables[(1, ta)]))
    preds = [0] * len(scomps)
    zz = np.zeros(64, dtype=np.int32)

    def read_into(ci, by, bx):
        comp = scomps[ci][0]
        zz[:] = 0
        preds[ci] = _decode_block(reader, tables[ci][0], tables[ci][1], preds[ci], zz)
        gy, gx = comp.coeffs.shape[:2]
        if by < gy and bx < gx:  # blocks past the component edge only pad the MCU
            comp.coeffs[by, bx].flat[ZIGZAG_TO_NATURAL] = zz

    if len(scomps) == 1:
        comp = scomps[0][0]
        gy, gx = comp.coeffs.shape[:2]
        for by in range(gy):
            for bx in range(gx):
                read_into(0, by, bx)
    else:
        mcux = math.ceil(width / (8 * hmax))
        mcuy = math.ceil(height / (8 * vmax))
        for my in range(mcuy):
            for mx in range(mcux):
                for ci, (comp, _, _) in enumerate(scomps):
                    for v in range(comp.v):
                        for h in range(comp.h):
                            read_into(ci, my * comp.v + v, mx * comp.h + h)


# --------------------------------------------------------------------------- pixel domain

def idct_block(coeffs, qtable) -> np.ndarray:
    """Dequantize and inverse-DCT one block; +128 level shift, no rounding or clipping.

    ``qtable`` may be 64 natural-order entries or an 8x8 array.
    """
    s = np.asarray(coeffs, dtype=np.float64).reshape(8, 8) * np.asarray(qtable, dtype=np.float64).reshape(8, 8)
    return _D.T @ s @ _D + 128.0


def decompress(j: JpegImage) -> list[np.ndarray]:
    """Each component as an unrounded real plane at its native resolution (MCU-padding cropped)."""
    hmax = max(h for h, _ in j.sampling)
    vmax = max(v for _, v in j.sampling)
    planes = []
    for ci, comp in enumerate(j.components_info):
        q = j.qtable_natural(ci).astype(np.float64)
        s = comp.coeffs.astype(np.float64) * q
        pix = np.einsum("vy,abvu,ux->abyx", _D, s, _D, optimize=True) + 128.0
        by, bx = comp.coeffs.shape[:2]
        plane = pix.transpose(0, 2, 1, 3).reshape(by * 8, bx * 8)
        cw = math.ceil(j.width * comp.h / hmax)
        ch = math.ceil(j.height * comp.v / vmax)
        planes.append(plane[:ch, :cw])
    return planes


def decompress_to_ycbcr(j: JpegImage) -> ColorPlanes:
    """Unrounded, unclipped Y, Cb, Cr planes at luma resolution.

    Subsampled chroma is upsampled by pixel replication. A grayscale file
    gets neutral (constant 128) chroma planes.
    """
    hmax = max(h for h, _ in j.sampling)
    vmax = max(v for _, v in j.sampling)
    out = []
    for comp, plane in zip(j.components_info, decompress(j)):
        up = np.repeat(np.repeat(plane, vmax // comp.v, axis=0), hmax // comp.h, axis=1)
        out.append(up[:j.height, :j.width])
    while len(out) < 3:
        out.append(np.full((j.height, j.width), 128.0))
    return ColorPlanes(Domain.JPEG_YCBCR, np.stack(out))


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """JFIF full-range conversion of a (3, H, W) RGB array."""
    r, g, b = np.asarray(rgb, dtype=np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = np.asarray(ycc, dtype=np.float64)
    r = y + 1.402 * (cr - 128)
    g = y - 0.344136 * (cb - 128) - 0.714136 * (cr - 128)
    b = y + 1.772 * (cb - 128)
    return np.stack([r, g, b])


# --------------------------------------------------------------------------- encoding

def scaled_qtable(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling of a base table."""
    if not 1 <= quality <= 100:
        raise ConfigError(f"quality must be in 1..100, got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((np.asarray(base, dtype=np.int64) * scale + 50) // 100, 1, 255)


def _forward_dct_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    blocks = (plane - 128.0).reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    return np.einsum("uy,abyx,vx->abuv", _D, blocks, _D, optimize=True)


def encode_jpeg(planes, quality: int = 75) -> tuple[bytes, JpegImage]:
    """Encode to a baseline 4:4:4 JPEG with standard tables.

    ``planes`` is a ColorPlanes (RGB is converted to YCbCr; YCbCr is used
    as is), an H x W x 3 uint8 image, or an H x W grayscale array. Sizes
    that are not multiples of 8 are padded by edge replication.
    Returns the file bytes and the JpegImage actually written.
    """
    if isinstance(planes, ColorPlanes):
        arr = planes.planes
        ycc = rgb_to_ycbcr(arr) if planes.domain is Domain.SPATIAL_RGB else arr
    else:
        arr = np.asarray(planes)
        if arr.ndim == 2:
            ycc = arr[None].astype(np.float64)
        elif arr.ndim == 3 and arr.shape[2] == 3:
            ycc = rgb_to_ycbcr(arr.transpose(2, 0, 1))
        else:
            raise ImageFormatError(f"cannot encode array of shape {arr.shape}")
    nc, height, width = ycc.shape
    if height < 1 or width < 1:
        raise ImageFormatError("empty image")
    ph, pw = -height % 8, -width % 8
    ycc = np.pad(ycc, ((0, 0), (0, ph), (0, pw)), mode="edge")
    luma_q = scaled_qtable(BASE_LUMA_QTABLE, quality)
    chroma_q = scaled_qtable(BASE_CHROMA_QTABLE, quality)
    qtables = {0: luma_q.ravel()[ZIGZAG_TO_NATURAL]}
    if nc == 3:
        qtables[1] = chroma_q.ravel()[ZIGZAG_TO_NATURAL]
    comps = []
    for ci in range(nc):
        q = luma_q if ci == 0 else chroma_q
        coeffs = np.rint(_forward_dct_blocks(np.clip(ycc[ci], 0, 255)) / q).astype(np.int32)
        coeffs[..., 0, 0] = np.clip(coeffs[..., 0, 0], -2047, 2047)
        dc = coeffs[..., 0, 0].copy()
        np.clip(coeffs, -1023, 1023, out=coeffs)
        coeffs[..., 0, 0] = dc
        comps.append(Component(ci + 1, 1, 1, 0 if ci == 0 else 1, coeffs))
    image = JpegImage(width, height, qtables, comps)
    return write_jpeg(image), image


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, value: int, n: int):
        self.acc = (self.acc << n) | (value & ((1 << n) - 1))
        self.nbits += n
        while self.nbits >= 8:
            self.nbits -= 8
            byte = (self.acc >> self.nbits) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0)
        self.acc &= (1 << self.nbits) - 1

    def flush(self) -> bytes:
        if self.nbits:
            self.write((1 << (8 - self.nbits)) - 1, 8 - self.nbits)
        return bytes(self.out)


def _magnitude(v: int):
    size = abs(v).bit_length()
    return size, (v if v >= 0 else v + (1 << size) - 1)


def _marker(code: int, body: bytes = b"") -> bytes:
    return bytes([0xFF, code]) + struct.pack(">H", len(body) + 2) + body


def write_jpeg(j: JpegImage) -> bytes:
    """Serialize coefficients as a baseline JPEG (standard Huffman tables, no subsampling).

    Deterministic: identical input produces identical bytes.
    """
    if j.components not in (1, 3):
        raise ConfigError(f"cannot write {j.components} components")
    if any(s != (1, 1) for s in j.sampling):
        raise ConfigError("writer supports only 1x1 sampling (4:4:4 or grayscale)")
    for c in j.components_info:
        bx, by = math.ceil(j.width / 8), math.ceil(j.height / 8)
        if c.coeffs.shape != (by, bx, 8, 8):
            raise ConfigError(f"component {c.cid} block grid {c.coeffs.shape[:2]} != {(by, bx)}")
    out = bytearray(b"\xff\xd8")
    out += _marker(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    for tid in sorted(j.quant_tables):
        tab = np.asarray(j.quant_tables[tid])
        if tab.max() > 255:
            out += _marker(DQT, bytes([0x10 | tid]) + struct.pack(">64H", *tab.tolist()))
        else:
            out += _marker(DQT, bytes([tid]) + bytes(tab.astype(np.uint8).tolist()))
    sof = struct.pack(">BHHB", 8, j.height, j.width, j.components)
    for c in j.components_info:
        sof += bytes([c.cid, 0x11, c.tq])
    out += _marker(0xC0, sof)
    table_ids = [0] if j.components == 1 else [0, 1]
    for tc in (0, 1):
        for th in table_ids:
            counts, symbols = STD_HUFFMAN[(tc, th)]
            out += _marker(DHT, bytes([(tc << 4) | th] + counts + symbols))
    sos = bytes([j.components])
    for ci, c in enumerate(j.components_info):
        t = 0 if ci == 0 else 1
        sos += bytes([c.cid, (t << 4) | t])
    out += _marker(SOS, sos + bytes([0, 63, 0]))

    codes = {key: _HuffmanTable(*STD_HUFFMAN[key]).codes for key in STD_HUFFMAN}
    writer = _BitWriter()
    preds = [0] * j.components
    zz_blocks = [c.coeffs.reshape(c.coeffs.shape[0], c.coeffs.shape[1], 64)[..., ZIGZAG_TO_NATURAL].tolist()
                 for c in j.components_info]
    by, bx = j.components_info[0].coeffs.shape[:2]
    for y in range(by):
        for x in range(bx):
            for ci in range(j.components):
                t = 0 if ci == 0 else 1
                dc_codes, ac_codes = codes[(0, t)], codes[(1, t)]
                zz = zz_blocks[ci][y][x]
                diff = zz[0] - preds[ci]
                preds[ci] = zz[0]
                size, bits = _magnitude(diff)
                if size > 11:
                    raise ConfigError(f"DC difference {diff} out of range")
                writer.write(*dc_codes[size])
                if size:
                    writer.write(bits, size)
                run = 0
                for k in range(1, 64):
                    v = zz[k]
                    if v == 0:
                        run += 1
                        continue
                    while run > 15:
                        writer.write(*ac_codes[0xF0])
                        run -= 16
                    size, bits = _magnitude(v)
                    if size > 10:
                        raise ConfigError(f"AC coefficient {v} out of baseline range")
                    writer.write(*ac_codes[(run << 4) | size])
                    writer.write(bits, size)
                    run = 0
                if run:
                    writer.write(*ac_codes[0x00])
    out += writer.flush()
    out += b"\xff\xd9"
    return bytes(out)


def read_jpeg(path) -> JpegImage:
    with open(path, "rb") as fh:
        return parse_jpeg(fh.read())
