"""Image tensor I/O and color conversion tests.

The PNG oracle here is a byte-level encoder written straight from the
format definition (zlib + explicit chunk layout), independent of the
production decoder.
"""

import json
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pxattack.image import (
    RtfFormatError,
    UnreadablePngError,
    UnsupportedPngError,
    load_png,
    load_raw_tensor,
    save_png,
    save_raw_tensor,
    srgb_to_lab,
    write_rtf,
)


def _chunk(tag, payload):
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png_bytes(pixels, bit_depth=8, color_type=2):
    """Hand-assemble a non-interlaced PNG from a (H, W, C) integer array."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    kind = ">u2" if bit_depth == 16 else "u1"
    raw = b"".join(b"\x00" + pixels[r].astype(kind).tobytes() for r in range(h))
    return (
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw))
        + _chunk(b"IEND", b"")
    )


class TestLoadPng:
    def test_white_pixel_8bit(self, tmp_path):
        p = tmp_path / "w.png"
        p.write_bytes(write_png_bytes([[[255, 255, 255]]]))
        assert np.array_equal(load_png(p), [[[1.0, 1.0, 1.0]]])

    def test_black_pixel(self, tmp_path):
        p = tmp_path / "b.png"
        p.write_bytes(write_png_bytes([[[0, 0, 0]]]))
        assert np.array_equal(load_png(p), [[[0.0, 0.0, 0.0]]])

    def test_2x2_fixture_hand_decoded(self, tmp_path):
        table = np.array(
            [[[10, 20, 30], [40, 50, 60]], [[70, 80, 90], [200, 210, 255]]]
        )
        p = tmp_path / "fix.png"
        p.write_bytes(write_png_bytes(table))
        assert np.array_equal(load_png(p), table / 255.0)

    def test_16bit_divides_by_65535(self, tmp_path):
        table = np.array([[[123, 5123, 40000], [65535, 0, 32768]]])
        p = tmp_path / "deep.png"
        p.write_bytes(write_png_bytes(table, bit_depth=16))
        assert np.array_equal(load_png(p), table / 65535.0)

    def test_rgba_alpha_dropped(self, tmp_path):
        table = np.array([[[10, 20, 30, 0], [40, 50, 60, 128]]])
        p = tmp_path / "a.png"
        p.write_bytes(write_png_bytes(table, color_type=6))
        assert np.array_equal(load_png(p), table[:, :, :3] / 255.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadablePngError):
            load_png(tmp_path / "nope.png")

    def test_not_a_png(self, tmp_path):
        p = tmp_path / "x.png"
        p.write_bytes(b"definitely not a png file, just text filler bytes")
        with pytest.raises(UnreadablePngError):
            load_png(p)

    def test_grayscale_rejected(self, tmp_path):
        gray = np.array([[0, 255]])
        ihdr = struct.pack(">IIBBBBB", 2, 1, 8, 0, 0, 0, 0)
        raw = b"\x00" + gray.astype("u1").tobytes()
        p = tmp_path / "g.png"
        p.write_bytes(
            b"\x89PNG\r\n\x1a\n"
            + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw))
            + _chunk(b"IEND", b"")
        )
        with pytest.raises(UnsupportedPngError):
            load_png(p)

    def test_truncated_body(self, tmp_path):
        data = write_png_bytes([[[1, 2, 3]]])
        p = tmp_path / "t.png"
        p.write_bytes(data[:40])
        with pytest.raises(UnreadablePngError):
            load_png(p)

    def test_save_load_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(7)
        img = rng.random((5, 4, 3))
        p = tmp_path / "rt.png"
        save_png(img, p)
        assert np.array_equal(load_png(p), np.rint(img * 255.0) / 255.0)


def _reference_lab_gray(v):
    """Scalar-math reference: sRGB gray -> L*, via the standard pipeline."""
    lin = ((v + 0.055) / 1.055) ** 2.4 if v > 0.04045 else v / 12.92
    t = lin  # Y/Yn for a neutral gray
    f = t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29
    return 116 * f - 16


class TestSrgbToLab:
    def test_white(self):
        lab = srgb_to_lab(np.ones((1, 1, 3)))
        assert np.allclose(lab, [[[100.0, 0.0, 0.0]]], atol=1e-9)

    def test_black(self):
        lab = srgb_to_lab(np.zeros((1, 1, 3)))
        assert np.allclose(lab, [[[0.0, 0.0, 0.0]]], atol=1e-12)

    def test_mid_gray_reference(self):
        lab = srgb_to_lab(np.full((1, 1, 3), 0.5))
        assert lab[0, 0, 0] == pytest.approx(_reference_lab_gray(0.5), abs=1e-9)
        assert lab[0, 0, 0] == pytest.approx(53.389, abs=1e-3)

    @pytest.mark.parametrize("v", [0.01, 0.04045, 0.2, 0.5, 0.73, 0.999])
    def test_neutral_grays_have_zero_ab(self, v):
        lab = srgb_to_lab(np.full((1, 1, 3), v))
        assert abs(lab[0, 0, 1]) < 1e-9
        assert abs(lab[0, 0, 2]) < 1e-9
        assert lab[0, 0, 0] == pytest.approx(_reference_lab_gray(v), abs=1e-9)

    def test_monotone_in_l_for_grays(self):
        grays = np.linspace(0, 1, 64)
        ls = [srgb_to_lab(np.full((1, 1, 3), g))[0, 0, 0] for g in grays]
        assert all(a < b for a, b in zip(ls, ls[1:]))

    def test_shape_error(self):
        with pytest.raises(ValueError):
            srgb_to_lab(np.zeros((2, 2, 4)))
        with pytest.raises(ValueError):
            srgb_to_lab(np.zeros((2, 2)))


class TestRawTensorFormat:
    def test_roundtrip_simple(self, tmp_path):
        t = np.array([[[0.25, 0.5, 1.0]]])
        p = tmp_path / "t.rtf"
        save_raw_tensor(t, p)
        assert np.array_equal(load_raw_tensor(p), t)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.floats(width=32, allow_nan=False, allow_infinity=False),
            min_size=1,
            max_size=24,
        )
    )
    def test_roundtrip_any_f32_values(self, tmp_path_factory, values):
        t = np.array(values, dtype=np.float32).astype(np.float64).reshape(-1, 1, 1)
        p = tmp_path_factory.mktemp("rtf") / "t.rtf"
        save_raw_tensor(t, p)
        assert np.array_equal(load_raw_tensor(p), t)

    def test_file_level_roundtrip_is_byte_identity(self, tmp_path):
        p1, p2 = tmp_path / "a.rtf", tmp_path / "b.rtf"
        save_raw_tensor(np.arange(12.0).reshape(2, 2, 3) / 7, p1)
        save_raw_tensor(load_raw_tensor(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        p = tmp_path / "h.rtf"
        save_raw_tensor(np.zeros((2, 3, 1)), p)
        raw = p.read_bytes()
        header, payload = raw.split(b"\n", 1)
        assert json.loads(header) == {"shape": [2, 3, 1], "dtype": "f32"}
        assert len(payload) == 2 * 3 * 1 * 4

    def test_hand_built_fixture(self, tmp_path):
        payload = np.array([1.0, 0.5, -2.0, 0.0], dtype="<f4").tobytes()
        p = tmp_path / "fix.rtf"
        p.write_bytes(b'{"shape":[2,2,1],"dtype":"f32"}\n' + payload)
        assert np.array_equal(
            load_raw_tensor(p), np.array([[[1.0], [0.5]], [[-2.0], [0.0]]])
        )

    def test_payload_length_mismatch(self, tmp_path):
        p = tmp_path / "bad.rtf"
        p.write_bytes(b'{"shape":[2,2,3],"dtype":"f32"}\n' + b"\x00" * 47)
        with pytest.raises(RtfFormatError):
            load_raw_tensor(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "bad.rtf"
        p.write_bytes(b'{"shape":[1,1,1],"dtype":"f32"}\n' + b"\x00" * 5)
        with pytest.raises(RtfFormatError):
            load_raw_tensor(p)

    @pytest.mark.parametrize(
        "header",
        [
            b"not json at all",
            b'{"shape":[1,1,1]}',
            b'{"shape":[0,1],"dtype":"f32"}',
            b'{"shape":[1,1],"dtype":"f64"}',
            b'{"shape":"nope","dtype":"f32"}',
        ],
    )
    def test_malformed_headers(self, tmp_path, header):
        p = tmp_path / "bad.rtf"
        p.write_bytes(header + b"\n" + b"\x00" * 4)
        with pytest.raises(RtfFormatError):
            load_raw_tensor(p)

    def test_missing_newline(self, tmp_path):
        p = tmp_path / "bad.rtf"
        p.write_bytes(b'{"shape":[1,1,1],"dtype":"f32"}')
        with pytest.raises(RtfFormatError):
            load_raw_tensor(p)

    def test_wrong_dtype_for_image(self, tmp_path):
        p = tmp_path / "seg.rtf"
        write_rtf(p, np.zeros((2, 2), dtype=np.int32), "i32")
        with pytest.raises(RtfFormatError):
            load_raw_tensor(p)

    def test_float64_precision_not_preserved(self, tmp_path):
        value = 1.0 / 255.0  # not representable in f32
        p = tmp_path / "q.rtf"
        save_raw_tensor(np.full((1, 1, 1), value), p)
        loaded = load_raw_tensor(p)[0, 0, 0]
        assert loaded == np.float64(np.float32(value))
        assert loaded != value
