"""Image arrays, norms, counter-based Gaussian sampling and tensor file I/O.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` holding intensities
on the [0, 1] scale; gradient fields share the shape but are unbounded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

SEGT_MAGIC = b"SEGT"
PIXEL_SCALE = 255.0

_WORDS_PER_COUNTER = 4  # Philox4x64 yields four 64-bit words per counter step


class InvalidDimensionError(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


def as_image(x, *, check_range: bool = True) -> np.ndarray:
    """Validate and return ``x`` as a float64 (H, W, C) image."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if check_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def dimension(x: np.ndarray) -> int:
    return int(np.prod(np.shape(x)))


def clamp_image(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def lp_norm(field, p, *, per_pixel: bool = False) -> float:
    """l1, l2 or l-infinity norm of a field.

    With ``per_pixel`` the l1 norm becomes the mean absolute value and the
    l2 norm the root-mean-square value; l-infinity is unaffected.
    """
    v = np.abs(np.asarray(field, dtype=np.float64)).ravel()
    if v.size == 0:
        raise ValueError("norm of an empty field")
    if p in (np.inf, "inf", "linf"):
        return float(v.max())
    if p == 1:
        return float(v.mean() if per_pixel else v.sum())
    if p == 2:
        if per_pixel:
            return float(np.sqrt(np.mean(v * v)))
        return float(np.sqrt(np.sum(v * v)))
    raise ValueError(f"unsupported norm order {p!r}")


def to_pixel_scale(value: float) -> float:
    """Convert an intensity difference on [0, 1] to 0-255 units."""
    return value * PIXEL_SCALE


@dataclass(frozen=True)
class RngStream:
    """Identity of one Gaussian sample vector: ``(seed, k, i)``."""

    seed: int
    k: int = 0
    i: int = 0


def _philox_key(seed: int, k: int) -> int:
    return (int(seed) % 2**64) | ((int(k) % 2**64) << 64)


def gaussian_block(seed: int, k: int, start: int, count: int, d: int) -> np.ndarray:
    """Samples ``i = start .. start+count-1`` of stream ``(seed, k)``, shape (count, d).

    Every sample owns a fixed window of the Philox counter space, so the
    vector for a given ``(seed, k, i)`` does not depend on how samples are
    batched or in which order they are requested.
    """
    if d < 1:
        raise InvalidDimensionError("sample dimension must be >= 1")
    if count < 0 or start < 0:
        raise ValueError("sample indices must be non-negative")
    steps = -(-d // _WORDS_PER_COUNTER)
    bitgen = np.random.Philox(key=_philox_key(seed, k), counter=0)
    bitgen.advance(start * steps)
    raw = bitgen.random_raw(count * steps * _WORDS_PER_COUNTER)
    raw = raw.reshape(count, steps * _WORDS_PER_COUNTER)[:, :d]
    # 53-bit uniforms strictly inside (0, 1), then the inverse normal CDF
    uniform = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(uniform)


def sample_gaussian(stream: RngStream, shape) -> np.ndarray:
    """Standard normal vector for ``stream`` reshaped to ``shape``."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    d = int(np.prod(shape)) if shape else 0
    if d < 1:
        raise InvalidDimensionError("sample dimension must be >= 1")
    return gaussian_block(stream.seed, stream.k, stream.i, 1, d).reshape(shape)


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for a (seed, path...) position, e.g. a per-image seed."""
    ss = np.random.SeedSequence([int(seed) % 2**64, *(int(p) for p in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- SEGT tensor files ------------------------------------------------------


def encode_segt(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    header = SEGT_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes(order="C")


def decode_segt(blob: bytes) -> np.ndarray:
    if blob[:4] != SEGT_MAGIC:
        raise TensorFormatError("missing SEGT magic")
    if len(blob) < 8:
        raise TensorFormatError("truncated SEGT header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8 + 4 * rank
    if len(blob) < offset:
        raise TensorFormatError("truncated SEGT dimensions")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(blob) != offset + 4 * count:
        raise TensorFormatError(
            f"payload holds {len(blob) - offset} bytes, expected {4 * count}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float32)


def write_segt(path, array) -> None:
    Path(path).write_bytes(encode_segt(array))


def read_segt(path) -> np.ndarray:
    return decode_segt(Path(path).read_bytes())


# -- binary PPM (P6) --------------------------------------------------------


def write_ppm(path, image) -> None:
    img = as_image(image)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    h, w, _ = img.shape
    pixels = np.rint(img * PIXEL_SCALE).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while not blob[end : end + 1].isspace():
            end += 1
        tokens.append(blob[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6":
        raise TensorFormatError("only binary P6 PPM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise TensorFormatError("only 8-bit PPM is supported")
    raster = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raster.reshape(h, w, 3).astype(np.float64) / PIXEL_SCALE
