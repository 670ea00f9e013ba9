"""Pulse shaping, matched filtering, resampling, and the waveform file format."""

import numpy as np
import pytest

from fiberlab.signal import SymbolSequence, evm_percent, gray_16qam, map_bits
from fiberlab.waveform import (AliasingError, PulseShapeSpec, SampledWaveform,
                               matched_filter, read_waveform, resample, rrc_taps, shape,
                               write_waveform)

CMAP = gray_16qam()


def random_symbols(n, seed=0):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, 4 * n, dtype=np.uint8)
    return map_bits(bits, CMAP)


def unit_power(x):
    return x / np.sqrt(np.mean(np.abs(x) ** 2))


class TestRrcTaps:
    def test_cascade_unit_gain_at_symbol_instants(self):
        spec = PulseShapeSpec(rolloff=0.01, filter_span=256, sps=4)
        h = rrc_taps(spec)
        cascade = np.convolve(h, h)
        center = len(h) - 1
        assert cascade[center] == pytest.approx(1.0, abs=1e-12)

    def test_odd_symmetric(self):
        h = rrc_taps(PulseShapeSpec(0.25, 16, 4))
        assert len(h) % 2 == 1
        assert np.allclose(h, h[::-1])

    def test_rolloff_zero_is_sinc(self):
        spec = PulseShapeSpec(rolloff=0.0, filter_span=32, sps=4)
        h = rrc_taps(spec)
        t = (np.arange(len(h)) - (len(h) - 1) / 2) / 4
        expected = np.sinc(t)
        expected /= np.sqrt(np.sum(expected ** 2))
        assert np.allclose(h, expected, atol=1e-12)


class TestShape:
    def test_impulse_response(self):
        spec = PulseShapeSpec(0.01, 64, 4)
        tx = SymbolSequence(np.array([1.0 + 0j]))
        w = shape(tx, spec)
        h = rrc_taps(spec)
        assert len(w) == 1 * 4 + 64 * 4
        assert np.allclose(w.samples[:len(h)], h)
        assert np.argmax(np.abs(w.samples)) == w.delay_samples

    def test_zero_symbols_zero_waveform(self):
        w = shape(SymbolSequence(np.zeros(50, dtype=complex)), PulseShapeSpec(0.01, 64, 4))
        assert np.all(w.samples == 0)

    def test_output_length_and_metadata(self):
        spec = PulseShapeSpec(0.1, 32, 4)
        w = shape(random_symbols(100), spec, symbol_rate=32e9)
        assert len(w) == 100 * 4 + 32 * 4
        assert w.n_symbols == 100
        assert w.sps == 4
        assert w.sample_rate == pytest.approx(128e9)

    def test_spectrum_confined(self):
        spec = PulseShapeSpec(0.01, 256, 4)
        w = shape(random_symbols(4096, seed=3), spec)
        psd = np.abs(np.fft.fft(w.samples)) ** 2
        freqs = np.fft.fftfreq(len(w), d=1 / 4)  # in symbol-rate units
        in_band = np.abs(freqs) <= (1 + spec.rolloff) / 2 * 1.02
        out_power = np.sum(psd[~in_band])
        assert out_power / np.sum(psd) < 1e-4  # < -40 dB

    def test_sps_one_rejected(self):
        with pytest.raises(AliasingError):
            shape(random_symbols(10), PulseShapeSpec(0.01, 64, 1))


class TestMatchedFilter:
    def test_loopback_evm_below_one_percent(self):
        spec = PulseShapeSpec(0.01, 256, 4)
        tx = random_symbols(4000, seed=1)
        rx = matched_filter(shape(tx, spec), spec)
        evm = evm_percent(rx.symbols, unit_power(tx.symbols))
        assert evm < 1.0
        assert np.mean(np.abs(rx.symbols - unit_power(tx.symbols)) ** 2) < 1e-3

    def test_scale_invariance(self):
        spec = PulseShapeSpec(0.01, 64, 4)
        w = shape(random_symbols(200), spec)
        rx1 = matched_filter(w, spec)
        w2 = SampledWaveform(w.samples * 17.3, w.sample_rate, w.symbol_rate,
                             w.delay_samples, w.n_symbols)
        rx2 = matched_filter(w2, spec)
        assert np.allclose(rx1.symbols, rx2.symbols, atol=1e-12)

    def test_integer_delay_compensation(self):
        spec = PulseShapeSpec(0.01, 64, 4)
        w = shape(random_symbols(200), spec)
        shifted = SampledWaveform(np.concatenate([np.zeros(12, complex), w.samples]),
                                  w.sample_rate, w.symbol_rate,
                                  w.delay_samples + 12, w.n_symbols)
        rx1 = matched_filter(w, spec)
        rx2 = matched_filter(shifted, spec)
        assert np.allclose(rx1.symbols, rx2.symbols, atol=1e-12)

    def test_unit_output_power(self):
        spec = PulseShapeSpec(0.01, 64, 4)
        rx = matched_filter(shape(random_symbols(500, seed=2), spec), spec)
        assert np.mean(np.abs(rx.symbols) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_sps_mismatch_rejected(self):
        spec4 = PulseShapeSpec(0.01, 64, 4)
        w = shape(random_symbols(100), spec4)
        with pytest.raises(ValueError, match="samples/symbol"):
            matched_filter(w, PulseShapeSpec(0.01, 64, 2))

    def test_too_short_rejected(self):
        spec = PulseShapeSpec(0.01, 64, 4)
        w = SampledWaveform(np.ones(16, complex), 4.0, 1.0)
        with pytest.raises(ValueError, match="shorter"):
            matched_filter(w, spec)


class TestLinearity:
    def test_shape_is_linear(self):
        spec = PulseShapeSpec(0.05, 32, 4)
        a, b = random_symbols(64, 5), random_symbols(64, 6)
        mix = SymbolSequence(2.0 * a.symbols + 3.0j * b.symbols)
        w_mix = shape(mix, spec)
        expected = 2.0 * shape(a, spec).samples + 3.0j * shape(b, spec).samples
        assert np.allclose(w_mix.samples, expected, atol=1e-12)


class TestResample:
    def test_roundtrip_2_4_2(self):
        spec = PulseShapeSpec(0.01, 64, 2)
        w = shape(random_symbols(512, seed=7), spec)
        back = resample(resample(w, 4), 2)
        err = np.mean(np.abs(back.samples - w.samples) ** 2) / np.mean(np.abs(w.samples) ** 2)
        assert err < 1e-6
        assert back.sps == 2 and back.delay_samples == w.delay_samples

    def test_identity_ratio_bit_identical(self):
        w = shape(random_symbols(64), PulseShapeSpec(0.01, 32, 4))
        same = resample(w, 4)
        assert np.array_equal(same.samples, w.samples)

    def test_pure_tone_preserved(self):
        n = 4096
        tone = np.exp(2j * np.pi * 0.05 * np.arange(n))
        w = SampledWaveform(tone, sample_rate=4.0, symbol_rate=1.0)
        up = resample(w, 8)
        down = resample(up, 4)
        assert np.max(np.abs(down.samples)) == pytest.approx(1.0, rel=1e-3)
        assert np.allclose(down.samples, tone, atol=1e-6)

    def test_aliasing_error_raised(self):
        spec = PulseShapeSpec(0.01, 64, 4)
        w = shape(random_symbols(256, seed=8), spec)
        with pytest.raises(AliasingError):
            resample(w, 1)  # band edge 0.505 Rs exceeds the new Nyquist 0.5 Rs

    def test_upsample_preserves_band(self):
        spec = PulseShapeSpec(0.01, 64, 2)
        w = shape(random_symbols(512, seed=9), spec)
        up = resample(w, 4)
        # length-normalized spectra agree exactly on the shared band
        f_lo = np.fft.fft(w.samples) / len(w)
        f_hi = np.fft.fft(up.samples) / len(up)
        n = len(w)
        assert np.allclose(f_hi[:n // 4], f_lo[:n // 4], rtol=1e-9, atol=1e-15)


class TestWaveformFile:
    def test_roundtrip(self, tmp_path):
        w = shape(random_symbols(128, seed=10), PulseShapeSpec(0.01, 32, 4), symbol_rate=32e9)
        path = tmp_path / "dump.ceqw"
        write_waveform(path, w)
        back = read_waveform(path)
        assert np.array_equal(back.samples, w.samples)
        assert back.sample_rate == w.sample_rate
        assert back.symbol_rate == w.symbol_rate

    def test_dual_pol_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        samples = rng.normal(size=(2, 300)) + 1j * rng.normal(size=(2, 300))
        w = SampledWaveform(samples, 4.0, 1.0)
        path = tmp_path / "dual.ceqw"
        write_waveform(path, w)
        back = read_waveform(path)
        assert back.samples.shape == (2, 300)
        assert np.array_equal(back.samples, samples)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ceqw"
        path.write_bytes(b"NOPE!" + b"\0" * 64)
        with pytest.raises(ValueError, match="magic"):
            read_waveform(path)

    def test_truncated_payload_rejected(self, tmp_path):
        w = shape(random_symbols(64), PulseShapeSpec(0.01, 32, 4))
        path = tmp_path / "trunc.ceqw"
        write_waveform(path, w)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(ValueError):
            read_waveform(path)


class TestSampledWaveform:
    def test_non_integer_sps_rejected(self):
        with pytest.raises(ValueError, match="integer multiple"):
            SampledWaveform(np.zeros(8, complex), sample_rate=3.5, symbol_rate=1.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            SampledWaveform(np.array([1.0, np.inf + 0j]), 2.0, 1.0)
