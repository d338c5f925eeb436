"""Image tensors, sRGB -> CIELAB conversion, and raw-tensor file I/O.

Images are numpy float64 arrays of shape (H, W, C) with values in [0, 1].
All math runs in 64-bit floats; file payloads are 32-bit (enough headroom
for 1/255-quantized image data at half the size).

Raw tensor format ("rtf"): the first line is a JSON header such as
``{"shape": [H, W, C], "dtype": "f32"}`` terminated by a single newline
byte, followed immediately by the payload as little-endian values in
row-major order. No trailing bytes are permitted.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import cv2
import numpy as np

__all__ = [
    "UnreadablePngError",
    "UnsupportedPngError",
    "RtfFormatError",
    "load_png",
    "save_png",
    "srgb_to_lab",
    "save_raw_tensor",
    "load_raw_tensor",
    "write_rtf",
    "read_rtf",
]


class UnreadablePngError(Exception):
    """File is missing, truncated, or not a decodable PNG."""


class UnsupportedPngError(Exception):
    """PNG is valid but not an 8/16-bit RGB or RGBA image."""


class RtfFormatError(Exception):
    """Raw tensor file violates the rtf container format."""


_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# sRGB <-> XYZ under D65. The matrix is derived from the sRGB primary
# chromaticities and the D65 white point so that its rows sum to the white
# point exactly; neutral grays then map to a = b = 0 at machine precision.
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_PRIMARIES = np.array(
    [
        [0.64 / 0.33, 0.30 / 0.60, 0.15 / 0.06],
        [1.0, 1.0, 1.0],
        [(1 - 0.64 - 0.33) / 0.33, (1 - 0.30 - 0.60) / 0.60, (1 - 0.15 - 0.06) / 0.06],
    ]
)
_RGB_TO_XYZ = _PRIMARIES * np.linalg.solve(_PRIMARIES, _D65_WHITE)

_LAB_DELTA = 6.0 / 29.0


def load_png(path) -> np.ndarray:
    """Decode an 8- or 16-bit RGB/RGBA PNG into a (H, W, 3) unit-interval array.

    Intensities are divided by the bit-depth maximum (255 or 65535); an
    alpha channel is discarded, not composited.

    Raises ``UnreadablePngError`` for unreadable files and
    ``UnsupportedPngError`` for other color types or bit depths.
    """
    path = Path(path)
    try:
        head = path.open("rb").read(33)
    except OSError as exc:
        raise UnreadablePngError(f"cannot read {path}: {exc}") from exc
    if len(head) < 33 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise UnreadablePngError(f"{path} is not a PNG file")
    _, _, bit_depth, color_type = struct.unpack(">IIBB", head[16:26])
    if color_type not in (2, 6):
        raise UnsupportedPngError(
            f"{path}: color type {color_type} not supported (need RGB or RGBA)"
        )
    if bit_depth not in (8, 16):
        raise UnsupportedPngError(f"{path}: bit depth {bit_depth} not supported")

    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise UnreadablePngError(f"{path}: PNG body failed to decode")
    if data.ndim != 3 or data.shape[2] not in (3, 4):
        raise UnsupportedPngError(f"{path}: decoded to unexpected shape {data.shape}")
    data = data[:, :, :3][:, :, ::-1]  # BGR(A) -> RGB, drop alpha
    maximum = 255.0 if bit_depth == 8 else 65535.0
    return data.astype(np.float64) / maximum


def save_png(img: np.ndarray, path) -> None:
    """Write a unit-interval (H, W, 3) array as an 8-bit RGB PNG."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    quantized = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    ok = cv2.imwrite(str(path), quantized[:, :, ::-1])
    if not ok:
        raise OSError(f"failed to write PNG {path}")


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert a unit-interval sRGB image (H, W, 3) to CIELAB (D65, 2 deg).

    Pipeline: sRGB companding removal (threshold 0.04045, exponent 2.4),
    linear RGB -> XYZ, then the CIE L*a*b* transfer with L in [0, 100].
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    linear = np.where(
        img > 0.04045, ((img + 0.055) / 1.055) ** 2.4, img / 12.92
    )
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    f = np.where(
        t > _LAB_DELTA**3, np.cbrt(t), t / (3 * _LAB_DELTA**2) + 4.0 / 29.0
    )
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


_DTYPE_TAGS = {"f32": "<f4", "i32": "<i4"}


def write_rtf(path, array: np.ndarray, dtype_tag: str) -> None:
    """Write an array to the rtf container with the given payload dtype tag."""
    if dtype_tag not in _DTYPE_TAGS:
        raise RtfFormatError(f"unknown dtype tag {dtype_tag!r}")
    array = np.asarray(array)
    header = json.dumps(
        {"shape": list(array.shape), "dtype": dtype_tag}, separators=(",", ":")
    )
    payload = np.ascontiguousarray(array, dtype=_DTYPE_TAGS[dtype_tag]).tobytes()
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(payload)


def read_rtf(path) -> tuple[np.ndarray, str]:
    """Read an rtf file; returns (array with native-order payload dtype, dtype tag)."""
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise RtfFormatError("missing header line")
    try:
        header = json.loads(raw[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RtfFormatError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"shape", "dtype"}:
        raise RtfFormatError(f"malformed header: {header!r}")
    dtype_tag = header["dtype"]
    if dtype_tag not in _DTYPE_TAGS:
        raise RtfFormatError(f"unknown dtype tag {dtype_tag!r}")
    shape = header["shape"]
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(s, int) and s > 0 for s in shape)
    ):
        raise RtfFormatError(f"invalid shape {shape!r}")
    dtype = np.dtype(_DTYPE_TAGS[dtype_tag])
    count = int(np.prod(shape))
    payload = raw[newline + 1 :]
    if len(payload) != count * dtype.itemsize:
        raise RtfFormatError(
            f"payload is {len(payload)} bytes, expected {count * dtype.itemsize}"
        )
    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return array.astype(dtype.newbyteorder("=")), dtype_tag


def save_raw_tensor(tensor: np.ndarray, path) -> None:
    """Save an image tensor as rtf with an f32 payload.

    Values not representable in 32-bit floats are rounded on write; the
    round trip is bit-exact for any tensor whose values are f32-exact.
    """
    write_rtf(path, np.asarray(tensor, dtype=np.float64), "f32")


def load_raw_tensor(path) -> np.ndarray:
    """Load an f32 rtf file as a float64 array."""
    array, dtype_tag = read_rtf(path)
    if dtype_tag != "f32":
        raise RtfFormatError(f"expected f32 payload, found {dtype_tag!r}")
    return array.astype(np.float64)
