import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sritm.colorimetry as cm
from sritm.errors import FormatError, ShapeError

# PQ code for 100 cd/m2 absolute, frozen from an independent high-precision
# evaluation of the ST 2084 closed form (mpmath, 50 digits):
#   m1=2610/16384, m2=2523*128/4096, c1=3424/4096, c2=2413*32/4096, c3=2392*32/4096
#   V(0.01) = 0.50808051220368343...
PQ_CODE_100_NITS = 0.5080805122036834


class TestTransferFunctions:
    def test_pq_encode_peak_is_exactly_one(self):
        assert cm.pq_encode(np.array(1.0), peak_nits=10000.0) == 1.0

    def test_pq_encode_100_nits(self):
        code = cm.pq_encode(np.array(100.0 / 1000.0), peak_nits=1000.0)
        assert code == pytest.approx(PQ_CODE_100_NITS, abs=1e-12)
        assert round(float(code), 4) == 0.5081

    def test_pq_roundtrip(self):
        grid = np.logspace(-4, 0, 200)
        back = cm.pq_decode(cm.pq_encode(grid, 1000.0), 1000.0)
        assert np.max(np.abs(back - grid) / grid) < 1e-6

    def test_gamma_roundtrip(self):
        grid = np.logspace(-4, 0, 200)
        back = cm.gamma_decode(cm.gamma_encode(grid))
        assert np.max(np.abs(back - grid) / grid) < 1e-9

    def test_hlg_roundtrip(self):
        grid = np.logspace(-4, 0, 200)
        back = cm.hlg_decode(cm.hlg_encode(grid))
        assert np.max(np.abs(back - grid) / grid) < 1e-7

    def test_hlg_breakpoint_continuity(self):
        lo = cm.hlg_encode(np.array(1.0 / 12.0 - 1e-12))
        hi = cm.hlg_encode(np.array(1.0 / 12.0 + 1e-12))
        assert abs(float(hi) - float(lo)) < 1e-9
        assert float(cm.hlg_encode(np.array(1.0 / 12.0))) == pytest.approx(0.5, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(1e-5, 1.0), min_size=2, max_size=40), st.sampled_from(["gamma24", "pq", "hlg"]))
    def test_transfers_strictly_monotone(self, values, kind):
        grid = np.unique(np.asarray(values, dtype=np.float64))
        if grid.size < 2:
            return
        encoded = cm.apply_transfer(grid, kind, "encode")
        assert np.all(np.diff(encoded) > 0)

    def test_strict_mode_rejects_negative_light(self):
        with pytest.raises(ShapeError):
            cm.pq_encode(np.array([-0.1]), strict=True)
        assert cm.pq_encode(np.array([-0.1]))[()] == 0.0  # permissive clamps


class TestGamut:
    def test_identity_when_same(self, rng):
        rgb = rng.uniform(0, 1, (3, 4, 4))
        assert cm.gamut_convert(rgb, "bt709", "bt709") is rgb or np.array_equal(
            cm.gamut_convert(rgb, "bt709", "bt709"), rgb
        )

    def test_white_preserved_both_ways(self):
        white = np.ones((3, 1, 1))
        for src, dst in (("bt709", "bt2020"), ("bt2020", "bt709")):
            out = cm.gamut_convert(white, src, dst)
            assert np.max(np.abs(out - 1.0)) < 1e-10

    def test_matrix_pair_is_identity(self):
        m_fwd = cm.gamut_matrix("bt709", "bt2020")
        m_bwd = cm.gamut_matrix("bt2020", "bt709")
        assert np.max(np.abs(m_bwd @ m_fwd - np.eye(3))) < 1e-10

    def test_rows_sum_to_one(self):
        for src, dst in (("bt709", "bt2020"), ("bt2020", "bt709")):
            m = cm.gamut_matrix(src, dst)
            assert np.max(np.abs(m.sum(axis=1) - 1.0)) < 1e-10

    def test_709_to_2020_first_row_chromaticity_derived(self):
        # published value of the BT.709->BT.2020 conversion, 4 decimals
        row = cm.gamut_matrix("bt709", "bt2020")[0]
        assert np.allclose(np.round(row, 4), [0.6274, 0.3293, 0.0433])


class TestYCbCr:
    def test_gray_axis(self):
        for matrix in ("bt709", "bt2020ncl"):
            gray = np.full((3, 2, 2), 0.42)
            out = cm.ycbcr_convert(gray, matrix, "to_ycbcr")
            assert np.allclose(out[0], 0.42, atol=1e-12)
            assert np.allclose(out[1:], 0.5, atol=1e-12)

    def test_roundtrip(self, rng):
        rgb = rng.uniform(0, 1, (3, 6, 6))
        for matrix in ("bt709", "bt2020ncl"):
            back = cm.ycbcr_convert(cm.ycbcr_convert(rgb, matrix, "to_ycbcr"), matrix, "to_rgb")
            assert np.max(np.abs(back - rgb)) < 1e-6

    def test_bt709_pure_red_luma(self):
        red = np.zeros((3, 1, 1))
        red[0] = 1.0
        out = cm.ycbcr_convert(red, "bt709", "to_ycbcr")
        assert out[0, 0, 0] == pytest.approx(0.2126, abs=1e-12)

    def test_identity_matrix_passthrough(self, rng):
        x = rng.uniform(0, 1, (3, 2, 2))
        assert np.array_equal(cm.ycbcr_convert(x, "identity", "to_ycbcr"), x)


class TestQuantize:
    def test_full_scale_10bit(self):
        assert cm.quantize(np.array(1.0), 10) == 1023

    def test_half_rounds_away_from_zero(self):
        assert cm.quantize(np.array(0.5), 8) == 128  # 127.5 -> 128

    def test_roundtrip_half_step_bound(self, rng):
        v = rng.uniform(0, 1, 1000)
        back = cm.dequantize(cm.quantize(v, 10), 10)
        assert np.max(np.abs(back - v)) <= 0.5 / 1023 + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), st.sampled_from([8, 10, 16]))
    def test_codes_in_range(self, v, bits):
        code = int(cm.quantize(np.array(v), bits))
        assert 0 <= code <= (1 << bits) - 1


class TestPipelines:
    def test_sdr_black_maps_to_zero_light(self):
        planes = np.zeros((3, 2, 2))
        planes[1:] = 0.5  # neutral chroma
        frame = cm.ImageFrame(planes, cm.SDR_SPEC)
        lum = cm.sdr_to_linear(frame)
        assert np.max(np.abs(lum.planes)) < 1e-12

    def test_monotone_in_diffuse_scale(self):
        codes = []
        for scale in (0.2, 0.4, 0.6, 0.8, 1.0):
            planes = np.full((3, 1, 1), 0.0)
            planes[0] = scale  # gray luma ramp, neutral chroma
            planes[1:] = 0.5
            lum = cm.sdr_to_linear(cm.ImageFrame(planes, cm.SDR_SPEC))
            hdr = cm.hdr_encode(lum)
            codes.append(hdr.planes[0, 0, 0])
        assert all(b > a for a, b in zip(codes, codes[1:]))

    def test_sdr_white_hits_520_code(self):
        planes = np.ones((3, 2, 2))
        planes[1:] = 0.5
        frame = cm.ImageFrame(planes, cm.SDR_SPEC)
        hdr = cm.hdr_encode(cm.sdr_to_linear(frame, peak_nits=1000.0))
        # 100 cd/m2 -> PQ code ~0.5081 -> 10-bit code 520
        y_code = cm.quantize(hdr.planes[0, 0, 0], 10)
        assert int(y_code) == 520

    def test_hdr_linear_roundtrip(self, rng):
        linear = rng.uniform(0, 1, (3, 4, 4))
        lum = cm.LuminanceFrame(linear, primaries="bt2020", peak_nits=1000.0)
        frame = cm.hdr_encode(lum)
        assert frame.spec == cm.HDR_SPEC
        back = cm.hdr_to_linear(frame, peak_nits=1000.0)
        # 10-bit quantization bounds the error
        assert np.max(np.abs(back.planes - linear)) < 5e-3


class TestFrameIO:
    def make_frame(self, rng, bits=10):
        planes = cm.quantize_to_grid(rng.uniform(0, 1, (3, 5, 7)), bits)
        spec = cm.HDR_SPEC if bits == 10 else cm.SDR_SPEC
        return cm.ImageFrame(planes, spec)

    def test_ten_bit_code_survives_16bit_storage(self, tmp_path):
        planes = np.full((3, 2, 2), 1023 / 1023.0)
        frame = cm.ImageFrame(planes, cm.HDR_SPEC)
        cm.save_frame(frame, tmp_path / "f.png")
        stored = np.asarray(__import__("PIL.Image", fromlist=["Image"]).open(tmp_path / "f.png"))
        assert stored.max() == 65535
        back = cm.load_frame(tmp_path / "f.png")
        assert np.array_equal(cm.quantize(back.planes, 10), np.full((3, 2, 2), 1023))

    @pytest.mark.parametrize("bits", [8, 10])
    def test_save_load_roundtrip_bit_exact(self, tmp_path, rng, bits):
        frame = self.make_frame(rng, bits)
        cm.save_frame(frame, tmp_path / "f.png")
        back = cm.load_frame(tmp_path / "f.png")
        assert back.spec == frame.spec
        assert np.array_equal(back.planes, frame.planes)

    def test_missing_sidecar(self, tmp_path, rng):
        frame = self.make_frame(rng)
        cm.save_frame(frame, tmp_path / "f.png")
        (tmp_path / "f.png.meta").unlink()
        with pytest.raises(FormatError, match="missing sidecar"):
            cm.load_frame(tmp_path / "f.png")

    def test_unknown_key_rejected_in_strict_mode(self, tmp_path, rng):
        frame = self.make_frame(rng)
        cm.save_frame(frame, tmp_path / "f.png")
        meta = tmp_path / "f.png.meta"
        meta.write_text(meta.read_text() + "mystery=1\n")
        with pytest.raises(FormatError, match="mystery"):
            cm.load_frame(tmp_path / "f.png")
        cm.load_frame(tmp_path / "f.png", strict=False)  # permissive ignores it

    def test_contradictory_dimensions(self, tmp_path, rng):
        frame = self.make_frame(rng)
        cm.save_frame(frame, tmp_path / "f.png")
        meta = tmp_path / "f.png.meta"
        meta.write_text(meta.read_text().replace("width=7", "width=9"))
        with pytest.raises(FormatError, match="raster"):
            cm.load_frame(tmp_path / "f.png")

    def test_corrupt_value_names_key(self, tmp_path, rng):
        frame = self.make_frame(rng)
        cm.save_frame(frame, tmp_path / "f.png")
        meta = tmp_path / "f.png.meta"
        meta.write_text(meta.read_text().replace("bit_depth=10", "bit_depth=ten"))
        with pytest.raises(FormatError, match="bit_depth"):
            cm.load_frame(tmp_path / "f.png")
