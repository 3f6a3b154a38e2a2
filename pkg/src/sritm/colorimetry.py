"""Transfer functions, gamut and YCbCr matrices, quantization, frame I/O.

Everything operates on full-range normalized code values in [0,1] or on
linear light normalized by a peak luminance.  Gamut matrices are derived
from the primaries' chromaticity coordinates and the D65 white point
rather than hard-coded, so the forward/inverse pair multiplies to the
identity to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError

# -- SMPTE ST 2084 (PQ) exact rational constants ----------------------------

PQ_M1 = 2610.0 / 16384.0
PQ_M2 = 2523.0 / 4096.0 * 128.0
PQ_C1 = 3424.0 / 4096.0
PQ_C2 = 2413.0 / 4096.0 * 32.0
PQ_C3 = 2392.0 / 4096.0 * 32.0
PQ_PEAK_NITS = 10000.0

# -- BT.2100 HLG constants ---------------------------------------------------

HLG_A = 0.17883277
HLG_B = 1.0 - 4.0 * HLG_A
HLG_C = 0.5 - HLG_A * np.log(4.0 * HLG_A)

GAMMA = 2.4  # BT.1886 display gamma

SDR_DIFFUSE_WHITE_NITS = 100.0
DEFAULT_PEAK_NITS = 1000.0

# -- chromaticity coordinates (x, y) and D65 white ---------------------------

_PRIMARIES = {
    "bt709": ((0.640, 0.330), (0.300, 0.600), (0.150, 0.060)),
    "bt2020": ((0.708, 0.292), (0.170, 0.797), (0.131, 0.046)),
}
_D65 = (0.3127, 0.3290)

_LUMA = {"bt709": (0.2126, 0.0722), "bt2020ncl": (0.2627, 0.0593)}

VALID_PRIMARIES = ("bt709", "bt2020")
VALID_TRANSFER = ("gamma24", "pq", "hlg", "linear")
VALID_MATRIX = ("bt709", "bt2020ncl", "identity")
VALID_BIT_DEPTH = (8, 10, 16)


@dataclass(frozen=True)
class ColorimetrySpec:
    primaries: str
    transfer: str
    matrix: str
    bit_depth: int
    range: str = "full"

    def __post_init__(self):
        if self.primaries not in VALID_PRIMARIES:
            raise FormatError(f"unknown primaries {self.primaries!r}")
        if self.transfer not in VALID_TRANSFER:
            raise FormatError(f"unknown transfer {self.transfer!r}")
        if self.matrix not in VALID_MATRIX:
            raise FormatError(f"unknown matrix {self.matrix!r}")
        if self.bit_depth not in VALID_BIT_DEPTH:
            raise FormatError(f"unsupported bit depth {self.bit_depth}")
        if self.range != "full":
            raise FormatError(f"only full-range code values are supported, got {self.range!r}")


SDR_SPEC = ColorimetrySpec("bt709", "gamma24", "bt709", 8)
HDR_SPEC = ColorimetrySpec("bt2020", "pq", "bt2020ncl", 10)


@dataclass
class ImageFrame:
    """Three planes of normalized code values in [0,1], plus colorimetry."""

    planes: np.ndarray  # (3, H, W) float64
    spec: ColorimetrySpec

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 3:
            raise ShapeError(f"frame planes must be (3, H, W), got {self.planes.shape}")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass
class LuminanceFrame:
    """Linear-light RGB planes in cd/m^2 normalized by ``peak_nits``."""

    planes: np.ndarray  # (3, H, W) float64
    primaries: str = "bt2020"
    peak_nits: float = DEFAULT_PEAK_NITS

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 3:
            raise ShapeError(f"luminance planes must be (3, H, W), got {self.planes.shape}")


# ---------------------------------------------------------------------------
# transfer functions
# ---------------------------------------------------------------------------


def _clip_negative(values: np.ndarray, strict: bool) -> np.ndarray:
    if strict and np.any(values < 0):
        raise ShapeError("negative linear light in strict mode")
    return np.maximum(values, 0.0)


def pq_encode(linear: np.ndarray, peak_nits: float = DEFAULT_PEAK_NITS, strict: bool = False) -> np.ndarray:
    """ST 2084 inverse EOTF: normalized linear light (1.0 = peak_nits) to code value."""
    y = _clip_negative(np.asarray(linear, dtype=np.float64), strict) * (peak_nits / PQ_PEAK_NITS)
    ym = np.power(y, PQ_M1)
    return np.power((PQ_C1 + PQ_C2 * ym) / (1.0 + PQ_C3 * ym), PQ_M2)


def pq_decode(code: np.ndarray, peak_nits: float = DEFAULT_PEAK_NITS) -> np.ndarray:
    """ST 2084 EOTF: code value to normalized linear light (1.0 = peak_nits)."""
    v = np.power(np.clip(np.asarray(code, dtype=np.float64), 0.0, 1.0), 1.0 / PQ_M2)
    num = np.maximum(v - PQ_C1, 0.0)
    den = PQ_C2 - PQ_C3 * v
    y = np.power(num / den, 1.0 / PQ_M1)
    return y * (PQ_PEAK_NITS / peak_nits)


def gamma_encode(linear: np.ndarray, strict: bool = False) -> np.ndarray:
    """Inverse of the BT.1886 power law: V = L^(1/2.4) on [0,1] light."""
    return np.power(_clip_negative(np.asarray(linear, dtype=np.float64), strict), 1.0 / GAMMA)


def gamma_decode(code: np.ndarray) -> np.ndarray:
    return np.power(np.clip(np.asarray(code, dtype=np.float64), 0.0, 1.0), GAMMA)


def hlg_encode(linear: np.ndarray, strict: bool = False) -> np.ndarray:
    """BT.2100 HLG OETF on scene light normalized to [0,1]."""
    e = _clip_negative(np.asarray(linear, dtype=np.float64), strict)
    lo = np.sqrt(3.0 * e)
    with np.errstate(invalid="ignore"):
        hi = HLG_A * np.log(np.maximum(12.0 * e - HLG_B, 1e-300)) + HLG_C
    return np.where(e <= 1.0 / 12.0, lo, hi)


def hlg_decode(code: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(code, dtype=np.float64), 0.0, 1.0)
    lo = v * v / 3.0
    hi = (np.exp((v - HLG_C) / HLG_A) + HLG_B) / 12.0
    return np.where(v <= 0.5, lo, hi)


def apply_transfer(values: np.ndarray, kind: str, direction: str,
                   peak_nits: float = DEFAULT_PEAK_NITS, strict: bool = False) -> np.ndarray:
    """Encode linear light to code values or decode back, by transfer name."""
    if direction not in ("encode", "decode"):
        raise FormatError(f"direction must be encode or decode, got {direction!r}")
    if kind == "gamma24":
        return gamma_encode(values, strict) if direction == "encode" else gamma_decode(values)
    if kind == "pq":
        return pq_encode(values, peak_nits, strict) if direction == "encode" else pq_decode(values, peak_nits)
    if kind == "hlg":
        return hlg_encode(values, strict) if direction == "encode" else hlg_decode(values)
    if kind == "linear":
        return np.asarray(values, dtype=np.float64)
    raise FormatError(f"unknown transfer {kind!r}")


# ---------------------------------------------------------------------------
# gamut conversion
# ---------------------------------------------------------------------------


def _xyz_from_xy(x: float, y: float) -> np.ndarray:
    return np.array([x / y, 1.0, (1.0 - x - y) / y], dtype=np.float64)


def rgb_to_xyz_matrix(primaries: str) -> np.ndarray:
    """Derive the RGB->XYZ matrix from chromaticities, white balanced to D65."""
    r, g, b = _PRIMARIES[primaries]
    cols = np.stack([_xyz_from_xy(*r), _xyz_from_xy(*g), _xyz_from_xy(*b)], axis=1)
    white = _xyz_from_xy(*_D65)
    scale = np.linalg.solve(cols, white)
    return cols * scale[None, :]


def gamut_matrix(src: str, dst: str) -> np.ndarray:
    if src == dst:
        return np.eye(3, dtype=np.float64)
    return np.linalg.solve(rgb_to_xyz_matrix(dst), rgb_to_xyz_matrix(src))


def gamut_convert(rgb: np.ndarray, src: str, dst: str) -> np.ndarray:
    """3x3 matrix transform of linear-light (3, H, W) RGB planes."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if src == dst:
        return rgb
    m = gamut_matrix(src, dst)
    return np.einsum("ij,jhw->ihw", m, rgb)


# ---------------------------------------------------------------------------
# YCbCr
# ---------------------------------------------------------------------------


def ycbcr_convert(planes: np.ndarray, matrix: str, direction: str, permissive: bool = True) -> np.ndarray:
    """Full-range R'G'B' <-> Y'CbCr with chroma offset 0.5.

    ``direction`` is "to_ycbcr" or "to_rgb".  Out-of-range results are
    clamped to [0,1] in permissive mode.
    """
    planes = np.asarray(planes, dtype=np.float64)
    if matrix == "identity":
        return planes
    if matrix not in _LUMA:
        raise FormatError(f"unknown YCbCr matrix {matrix!r}")
    kr, kb = _LUMA[matrix]
    kg = 1.0 - kr - kb
    if direction == "to_ycbcr":
        r, g, b = planes
        y = kr * r + kg * g + kb * b
        cb = (b - y) / (2.0 * (1.0 - kb)) + 0.5
        cr = (r - y) / (2.0 * (1.0 - kr)) + 0.5
        out = np.stack([y, cb, cr])
    elif direction == "to_rgb":
        y, cb, cr = planes
        cb = cb - 0.5
        cr = cr - 0.5
        r = y + 2.0 * (1.0 - kr) * cr
        b = y + 2.0 * (1.0 - kb) * cb
        g = (y - kr * r - kb * b) / kg
        out = np.stack([r, g, b])
    else:
        raise FormatError(f"direction must be to_ycbcr or to_rgb, got {direction!r}")
    if permissive:
        out = np.clip(out, 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


def quantize(values: np.ndarray, bits: int) -> np.ndarray:
    """Round-half-away-from-zero to integer codes in [0, 2^bits - 1]."""
    max_code = (1 << bits) - 1
    v = np.asarray(values, dtype=np.float64)
    codes = np.floor(np.abs(v) * max_code + 0.5) * np.sign(v)
    return np.clip(codes, 0, max_code).astype(np.int64)


def dequantize(codes: np.ndarray, bits: int) -> np.ndarray:
    max_code = (1 << bits) - 1
    return np.asarray(codes, dtype=np.float64) / max_code


def quantize_to_grid(values: np.ndarray, bits: int) -> np.ndarray:
    """Snap normalized values onto the bit-depth code grid (quantize+dequantize)."""
    return dequantize(quantize(values, bits), bits)


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def sdr_to_linear(frame: ImageFrame, peak_nits: float = DEFAULT_PEAK_NITS,
                  diffuse_white_nits: float = SDR_DIFFUSE_WHITE_NITS) -> LuminanceFrame:
    """SDR code values to linear light, diffuse white anchored at 100 cd/m^2."""
    if frame.spec.transfer != "gamma24":
        raise FormatError(f"sdr_to_linear expects gamma24 input, got {frame.spec.transfer}")
    rgb = ycbcr_convert(frame.planes, frame.spec.matrix, "to_rgb")
    linear = gamma_decode(rgb) * (diffuse_white_nits / peak_nits)
    return LuminanceFrame(linear, primaries=frame.spec.primaries, peak_nits=peak_nits)


def hdr_encode(lum: LuminanceFrame, peak_nits: float | None = None) -> ImageFrame:
    """Linear light to the HDR display format: BT.2020, PQ, 10-bit codes."""
    peak = lum.peak_nits if peak_nits is None else peak_nits
    rgb2020 = gamut_convert(np.maximum(lum.planes, 0.0), lum.primaries, "bt2020")
    code = pq_encode(rgb2020, peak)
    yuv = ycbcr_convert(code, "bt2020ncl", "to_ycbcr")
    return ImageFrame(quantize_to_grid(yuv, 10), HDR_SPEC)


def hdr_to_linear(frame: ImageFrame, peak_nits: float = DEFAULT_PEAK_NITS) -> LuminanceFrame:
    """HDR display-format codes back to linear light normalized by peak_nits."""
    if frame.spec.transfer != "pq":
        raise FormatError(f"hdr_to_linear expects pq input, got {frame.spec.transfer}")
    rgb_code = ycbcr_convert(frame.planes, frame.spec.matrix, "to_rgb")
    linear = pq_decode(rgb_code, peak_nits)
    return LuminanceFrame(linear, primaries=frame.spec.primaries, peak_nits=peak_nits)


def sdr_encode(lum: LuminanceFrame, diffuse_white_nits: float = SDR_DIFFUSE_WHITE_NITS) -> tuple[ImageFrame, int]:
    """Linear light to SDR codes (BT.709, gamma, 8-bit), clamping above diffuse white.

    Returns the frame and the count of clamped (out-of-range) samples.
    """
    rgb709 = gamut_convert(lum.planes, lum.primaries, "bt709")
    clipped = int(np.sum((rgb709 < 0) | (rgb709 * lum.peak_nits > diffuse_white_nits + 1e-9)))
    rel = np.clip(rgb709 * (lum.peak_nits / diffuse_white_nits), 0.0, 1.0)
    yuv = ycbcr_convert(gamma_encode(rel), "bt709", "to_ycbcr")
    return ImageFrame(quantize_to_grid(yuv, 8), SDR_SPEC), clipped


# ---------------------------------------------------------------------------
# frame files: 16-bit grayscale-stack PNG + text sidecar
# ---------------------------------------------------------------------------

_SIDECAR_KEYS = ("width", "height", "bit_depth", "primaries", "transfer", "matrix", "range")


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".meta")


def save_frame(frame: ImageFrame, path, comment: str | None = None) -> None:
    """Write a frame as a 16-bit PNG (planes stacked vertically) plus sidecar."""
    path = Path(path)
    stored = quantize(np.clip(frame.planes, 0.0, 1.0), 16).astype(np.uint16)
    stack = stored.reshape(3 * frame.height, frame.width)
    Image.fromarray(stack).save(path, format="PNG")
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines += [
        f"width={frame.width}",
        f"height={frame.height}",
        f"bit_depth={frame.spec.bit_depth}",
        f"primaries={frame.spec.primaries}",
        f"transfer={frame.spec.transfer}",
        f"matrix={frame.spec.matrix}",
        f"range={frame.spec.range}",
    ]
    _sidecar_path(path).write_text("\n".join(lines) + "\n")


def _parse_sidecar(path: Path, strict: bool) -> dict[str, str]:
    if not path.exists():
        raise FormatError(f"missing sidecar {path}")
    entries: dict[str, str] = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{ln}: malformed line {raw!r}")
        key = key.strip()
        if key not in _SIDECAR_KEYS:
            if strict:
                raise FormatError(f"{path}:{ln}: unknown sidecar key {key!r}")
            continue
        entries[key] = value.strip()
    missing = [k for k in _SIDECAR_KEYS if k not in entries]
    if missing:
        raise FormatError(f"{path}: missing sidecar key(s): {', '.join(missing)}")
    return entries


def load_frame(path, strict: bool = True) -> ImageFrame:
    """Load a frame file written by :func:`save_frame`, validating the sidecar."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing frame file {path}")
    meta = _parse_sidecar(_sidecar_path(path), strict)
    try:
        width, height = int(meta["width"]), int(meta["height"])
        bit_depth = int(meta["bit_depth"])
    except ValueError as exc:
        raise FormatError(f"{_sidecar_path(path)}: non-integer dimension or bit_depth: {exc}") from exc
    spec = ColorimetrySpec(meta["primaries"], meta["transfer"], meta["matrix"], bit_depth, meta["range"])
    raw = np.asarray(Image.open(path)).astype(np.uint16)
    if raw.ndim != 2 or raw.shape != (3 * height, width):
        raise FormatError(
            f"{path}: raster is {raw.shape}, sidecar implies {(3 * height, width)} (3 stacked planes)"
        )
    planes = dequantize(raw.reshape(3, height, width), 16)
    # snap back onto the original code grid so save/load roundtrips bit-exactly
    if bit_depth < 16:
        planes = quantize_to_grid(planes, bit_depth)
    return ImageFrame(planes, spec)


def frame_spec_with(frame: ImageFrame, **changes) -> ImageFrame:
    """Copy of the frame with selected ColorimetrySpec fields replaced."""
    return ImageFrame(frame.planes.copy(), replace(frame.spec, **changes))
