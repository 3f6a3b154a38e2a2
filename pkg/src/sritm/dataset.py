"""Training-pair production: synthetic scenes, patch extraction, shards.

Scenes are composed procedurally in linear light (gradients, soft
geometric shapes, band-limited texture) up to 1000 cd/m2, then rendered
twice: once into the HDR display format (BT.2020 / PQ / 10-bit) and once
through a fixed global tone curve into SDR (BT.709 / gamma / 8-bit).
That yields aligned pairs with a genuine dynamic-range disparity, in
place of externally sourced video.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import colorimetry as cm
from .errors import FormatError, ShapeError
from .tensor import Tensor, resize_bicubic

SHARD_MAGIC = b"SRDS\x01"

TONE_KNEE = 0.7
TONE_SLOPE = 10.0 / 3.0  # soft-compression rate above the knee


@dataclass
class PairSample:
    lr_sdr: np.ndarray  # (3, p/sf, p/sf) float32 code values
    hr_hdr: np.ndarray  # (3, p, p) float32 code values
    frame_id: int | None = None
    origin: tuple[int, int] | None = None  # (row, col) on the HR grid

    def __post_init__(self):
        if self.lr_sdr.ndim != 3 or self.hr_hdr.ndim != 3:
            raise ShapeError("pair tensors must be (3, H, W)")


@dataclass(frozen=True)
class DatasetSpec:
    sf: int = 2
    patch_size: int = 160  # on the HR grid
    patches_per_frame: tuple[int, int] = (20, 40)
    frame_stride: tuple[int, int] = (10, 80)
    seed: int = 0

    def __post_init__(self):
        if self.patch_size % self.sf != 0:
            raise ShapeError(f"patch size {self.patch_size} not divisible by sf {self.sf}")
        if self.patches_per_frame[0] > self.patches_per_frame[1] or self.patches_per_frame[0] < 1:
            raise ShapeError(f"bad patches_per_frame range {self.patches_per_frame}")
        if self.frame_stride[0] > self.frame_stride[1] or self.frame_stride[0] < 1:
            raise ShapeError(f"bad frame_stride range {self.frame_stride}")


def sample_frames(frame_list: list, spec: DatasetSpec) -> list:
    """Walk the ordered frame list with a random stride drawn per step."""
    if not frame_list:
        raise ShapeError("sample_frames: empty frame list")
    rng = np.random.default_rng([spec.seed, 0x5714])
    lo, hi = spec.frame_stride
    picked = []
    idx = 0
    while idx < len(frame_list):
        picked.append(frame_list[idx])
        idx += int(rng.integers(lo, hi + 1))
    return picked


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


def _soft_mask(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, ry: float, rx: float,
               softness: float) -> np.ndarray:
    d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return np.clip((1.0 - d) / softness, 0.0, 1.0)


def _band_limited_noise(rng: np.random.Generator, size: int, cutoff: float) -> np.ndarray:
    spectrum = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    spectrum *= np.exp(-((fy**2 + fx**2) / (2.0 * cutoff**2)))
    noise = np.real(np.fft.ifft2(spectrum))
    peak = np.max(np.abs(noise))
    return noise / peak if peak > 0 else noise


def synth_linear_scene(rng_seed: int, size: int) -> np.ndarray:
    """A (3, size, size) linear-light RGB scene, 1.0 = 1000 cd/m2, BT.709 gamut."""
    rng = np.random.default_rng([int(rng_seed), 0x5CEE])
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")

    # smooth illumination gradient, 5..80 cd/m2
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy + 1.0) / 2.0
    base_color = rng.uniform(0.3, 1.0, size=3)
    scene = (0.005 + 0.075 * ramp)[None] * base_color[:, None, None]

    # soft-edged shapes, some reaching highlight range
    for _ in range(int(rng.integers(4, 9))):
        mask = _soft_mask(
            yy, xx,
            rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
            rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.35),
            rng.uniform(0.05, 0.4),
        )
        color = rng.uniform(0.2, 1.0, size=3)
        level = 10 ** rng.uniform(-1.3, 0.0)  # 50..1000 cd/m2
        scene = scene * (1.0 - mask[None]) + (level * color)[:, None, None] * mask[None]

    # band-limited texture, multiplicative so dark areas stay dark
    texture = _band_limited_noise(rng, size, cutoff=rng.uniform(0.08, 0.2))
    scene = scene * (1.0 + 0.25 * texture[None])
    return np.clip(scene, 0.0, 1.0)


def tone_map_sdr(linear: np.ndarray, peak_nits: float = cm.DEFAULT_PEAK_NITS) -> np.ndarray:
    """Fixed global tone curve: diffuse-white scale, knee, clamp.

    Input is linear light normalized by peak_nits; output is linear
    relative to SDR diffuse white, in [0,1].  Below the knee the curve
    is the identity, so dark regions agree with the HDR rendering.
    """
    s = linear * (peak_nits / cm.SDR_DIFFUSE_WHITE_NITS)
    over = np.maximum(s - TONE_KNEE, 0.0)
    y = np.minimum(s, TONE_KNEE) + over / (1.0 + TONE_SLOPE * over)
    return np.clip(y, 0.0, 1.0)


def synth_scene(rng_seed: int, size: int) -> tuple[cm.ImageFrame, cm.ImageFrame]:
    """Aligned (hdr_frame, sdr_frame) pair rendered from one synthetic scene."""
    linear = synth_linear_scene(rng_seed, size)
    lum = cm.LuminanceFrame(linear, primaries="bt709", peak_nits=cm.DEFAULT_PEAK_NITS)
    hdr = cm.hdr_encode(lum)
    sdr_rel = tone_map_sdr(linear)
    sdr_yuv = cm.ycbcr_convert(cm.gamma_encode(sdr_rel), "bt709", "to_ycbcr")
    sdr = cm.ImageFrame(cm.quantize_to_grid(sdr_yuv, 8), cm.SDR_SPEC)
    return hdr, sdr


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------


def extract_pairs(hdr_frame: cm.ImageFrame, sdr_frame: cm.ImageFrame, spec: DatasetSpec,
                  frame_id: int = 0) -> list[PairSample]:
    """Randomly crop HR patches and bicubic-downscale the SDR side to LR.

    Crop origins are aligned to multiples of sf so per-crop downscaling
    agrees with whole-frame downscaling away from borders.
    """
    if hdr_frame.planes.shape != sdr_frame.planes.shape:
        raise ShapeError(
            f"frame size mismatch: hdr {hdr_frame.planes.shape} vs sdr {sdr_frame.planes.shape}"
        )
    p = spec.patch_size
    h, w = hdr_frame.height, hdr_frame.width
    if h < p or w < p:
        raise ShapeError(f"frame {h}x{w} smaller than patch size {p}")
    rng = np.random.default_rng([spec.seed, int(frame_id), 0x9A7C])
    count = int(rng.integers(spec.patches_per_frame[0], spec.patches_per_frame[1] + 1))
    max_y = (h - p) // spec.sf
    max_x = (w - p) // spec.sf
    samples = []
    for _ in range(count):
        oy = int(rng.integers(0, max_y + 1)) * spec.sf
        ox = int(rng.integers(0, max_x + 1)) * spec.sf
        hr = hdr_frame.planes[:, oy : oy + p, ox : ox + p].astype(np.float32)
        sdr_crop = sdr_frame.planes[:, oy : oy + p, ox : ox + p].astype(np.float32)
        lr = resize_bicubic(Tensor(sdr_crop[None]), 1.0 / spec.sf, antialias=True).data[0]
        samples.append(PairSample(lr_sdr=lr, hr_hdr=hr, frame_id=frame_id, origin=(oy, ox)))
    return samples


# ---------------------------------------------------------------------------
# shards
# ---------------------------------------------------------------------------


def _pack_array(arr: np.ndarray) -> bytes:
    parts = [struct.pack("<B", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape)]
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def write_shard(samples: list[PairSample], path) -> None:
    parts = [SHARD_MAGIC, struct.pack("<I", len(samples))]
    for s in samples:
        parts.append(_pack_array(s.lr_sdr))
        parts.append(_pack_array(s.hr_hdr))
    Path(path).write_bytes(b"".join(parts))


def read_shard(path) -> list[PairSample]:
    """Read a shard; provenance fields are not stored and come back None."""
    blob = Path(path).read_bytes()
    if blob[: len(SHARD_MAGIC)] != SHARD_MAGIC:
        raise FormatError(f"{path}: bad shard magic {blob[:len(SHARD_MAGIC)]!r}")
    offset = len(SHARD_MAGIC)

    def take(n: int, what: str, index: int):
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what} of sample {index} at byte {offset}")
        out = blob[offset : offset + n]
        offset += n
        return out

    (count,) = struct.unpack("<I", take(4, "header", -1))
    samples = []
    for i in range(count):
        arrays = []
        for what in ("lr_sdr", "hr_hdr"):
            (rank,) = struct.unpack("<B", take(1, what, i))
            dims = struct.unpack(f"<{rank}I", take(4 * rank, what, i))
            size = int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(take(4 * size, what, i), dtype="<f4").reshape(dims)
            arrays.append(data.astype(np.float32))
        samples.append(PairSample(lr_sdr=arrays[0], hr_hdr=arrays[1]))
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing byte(s) after {count} samples")
    return samples


def make_synthetic_shard(n_frames: int, spec: DatasetSpec, size: int = 256) -> list[PairSample]:
    """Generate n_frames synthetic scenes and extract pairs from each."""
    samples: list[PairSample] = []
    for fid in range(n_frames):
        hdr, sdr = synth_scene(spec.seed + fid, size)
        samples.extend(extract_pairs(hdr, sdr, spec, frame_id=fid))
    return samples
