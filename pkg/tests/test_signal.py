"""Constellation mapping, hard decisions, and the BER/Q2/EVM metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from fiberlab.signal import (SymbolSequence, align_gain, ber_from_q2, evm_percent,
                             gray_16qam, hard_decide, map_bits, measure, q2_from_ber)

CMAP = gray_16qam()

# frozen from the numeric inverse-erfc oracle (scipy.special.erfcinv)
Q2_OF_1E3 = 9.79982256904398
Q2_OF_1E2 = 7.333493162962927


class TestConstellation:
    def test_unit_average_power(self):
        assert abs(np.mean(np.abs(CMAP.points) ** 2) - 1.0) < 1e-12

    def test_labels_are_a_bijection(self):
        values = {tuple(label) for label in CMAP.bit_labels}
        assert len(values) == 16
        assert all(len(label) == 4 for label in values)

    def test_gray_adjacency_exhaustive(self):
        # horizontally/vertically adjacent grid points differ in exactly one bit
        step = 2.0 / np.sqrt(10.0)
        checked = 0
        for i, p in enumerate(CMAP.points):
            for j, q in enumerate(CMAP.points):
                if j <= i:
                    continue
                d = p - q
                adjacent = (abs(abs(d.real) - step) < 1e-9 and abs(d.imag) < 1e-9) or \
                           (abs(abs(d.imag) - step) < 1e-9 and abs(d.real) < 1e-9)
                if adjacent:
                    bit_flips = int(np.sum(CMAP.bit_labels[i] != CMAP.bit_labels[j]))
                    assert bit_flips == 1, (i, j)
                    checked += 1
        assert checked == 24  # 2 * 3 * 4 horizontal + vertical neighbor pairs


class TestMapBits:
    def test_label_0000_is_outer_corner(self):
        s = map_bits(np.zeros(4, dtype=np.uint8), CMAP)
        assert s.symbols[0] == pytest.approx((-3 - 3j) / np.sqrt(10))
        assert abs(s.symbols[0]) == pytest.approx(1.3416407864998738)

    def test_random_bits_unit_mean_power(self):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, 4 * 10 ** 5, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        assert np.mean(np.abs(s.symbols) ** 2) == pytest.approx(1.0, abs=0.01)

    def test_all_16_labels_bijective(self):
        bits = np.array([[b >> 3 & 1, b >> 2 & 1, b >> 1 & 1, b & 1] for b in range(16)],
                        dtype=np.uint8).ravel()
        s = map_bits(bits, CMAP)
        assert len(np.unique(s.symbols)) == 16

    def test_indivisible_bit_count_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            map_bits(np.zeros(7, dtype=np.uint8), CMAP)


def _awgn_16qam_ber(es_n0_linear: float) -> float:
    """Exact Gray-coded 16-QAM bit error rate over AWGN.

    Independent enumeration oracle: per-quadrature 4-PAM decisions with
    thresholds at {-2, 0, 2}/sqrt(10); sum the Gaussian probability mass of
    each (sent level, decided level) pair times its bit disagreements.
    """
    scale = 1.0 / np.sqrt(10.0)
    levels = np.array([-3.0, -1.0, 1.0, 3.0]) * scale
    gray = [(0, 0), (0, 1), (1, 1), (1, 0)]
    sigma = np.sqrt(1.0 / (2.0 * es_n0_linear))  # per-quadrature noise std
    edges = np.array([-np.inf, -2.0 * scale, 0.0, 2.0 * scale, np.inf])
    total = 0.0
    for si, sl in enumerate(levels):
        probs = norm.cdf((edges[1:] - sl) / sigma) - norm.cdf((edges[:-1] - sl) / sigma)
        for di in range(4):
            flips = (gray[si][0] != gray[di][0]) + (gray[si][1] != gray[di][1])
            total += probs[di] * flips
    return total / (4 * 2)  # average over levels, per bit (2 bits per quadrature)


class TestHardDecide:
    def test_noiseless_roundtrip_identity(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 2, 4 * 5000, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        assert np.array_equal(hard_decide(s, CMAP), bits)

    def test_small_noise_within_decision_region(self):
        rng = np.random.default_rng(2)
        bits = rng.integers(0, 2, 4 * 1000, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        half_min_dist = 1.0 / np.sqrt(10.0)  # half of the 2/sqrt(10) spacing
        angles = rng.uniform(0, 2 * np.pi, len(s.symbols))
        noisy = s.symbols + 0.99 * half_min_dist * np.exp(1j * angles)
        assert np.array_equal(hard_decide(noisy, CMAP), bits)

    def test_awgn_ber_matches_analytic_oracle(self):
        es_n0_db = 16.0
        es_n0 = 10 ** (es_n0_db / 10)
        n = 10 ** 5
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, 4 * n, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        sigma = np.sqrt(1.0 / (2.0 * es_n0))
        noisy = s.symbols + sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
        ber = np.mean(hard_decide(noisy, CMAP) != bits)
        p = _awgn_16qam_ber(es_n0)
        three_sigma = 3.0 * np.sqrt(p * (1 - p) / (4 * n))
        assert abs(ber - p) < three_sigma


class TestQ2Relation:
    def test_frozen_oracle_values(self):
        assert q2_from_ber(1e-3) == pytest.approx(Q2_OF_1E3, abs=5e-3)
        assert q2_from_ber(1e-2) == pytest.approx(Q2_OF_1E2, abs=5e-3)

    def test_inverse_recovers_1e3(self):
        assert ber_from_q2(9.80) == pytest.approx(1.0e-3, rel=0.01)

    def test_table_baseline_roundtrip(self):
        assert q2_from_ber(ber_from_q2(6.48)) == pytest.approx(6.48, abs=1e-9)

    def test_zero_db_matches_erfc_oracle(self):
        from scipy.special import erfc
        expected = 0.5 * erfc(1.0 / np.sqrt(2.0))
        assert ber_from_q2(0.0) == pytest.approx(expected, rel=1e-12)

    def test_roundtrip_grid(self):
        for ber in np.geomspace(1e-5, 0.4, 50):
            assert ber_from_q2(q2_from_ber(ber)) == pytest.approx(ber, rel=1e-9)

    def test_monotone_decreasing(self):
        bers = np.geomspace(1e-6, 0.49, 60)
        q2s = [q2_from_ber(b) for b in bers]
        assert np.all(np.diff(q2s) < 0)

    @pytest.mark.parametrize("bad", [0.0, -1e-3, 0.5, 0.7])
    def test_domain_errors(self, bad):
        with pytest.raises(ValueError):
            q2_from_ber(bad)

    @given(st.floats(min_value=1e-6, max_value=0.49))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_property(self, ber):
        assert ber_from_q2(q2_from_ber(ber)) == pytest.approx(ber, rel=1e-9)


class TestMetrics:
    def test_evm_definition(self):
        ref = np.array([1.0 + 0j, -1.0 + 0j])
        rx = ref + np.array([0.1, 0.1j])
        assert evm_percent(rx, ref) == pytest.approx(10.0)

    def test_measure_counts_and_consistency(self):
        rng = np.random.default_rng(4)
        bits = rng.integers(0, 2, 4 * 2000, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        noisy = s.symbols + 0.12 * (rng.normal(size=2000) + 1j * rng.normal(size=2000))
        rep = measure(noisy, bits, CMAP)
        assert rep.bits_total == 8000
        assert rep.ber == rep.bit_errors / rep.bits_total
        if rep.bit_errors:
            assert rep.q2_db == pytest.approx(q2_from_ber(rep.ber))

    def test_measure_error_free_reports_inf(self):
        bits = np.zeros(4 * 10, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        rep = measure(s, bits, CMAP)
        assert rep.bit_errors == 0 and np.isinf(rep.q2_db)

    def test_align_gain_removes_rotation_and_scale(self):
        rng = np.random.default_rng(5)
        bits = rng.integers(0, 2, 4 * 500, dtype=np.uint8)
        s = map_bits(bits, CMAP)
        distorted = SymbolSequence(s.symbols * 0.7 * np.exp(0.4j), role="received")
        aligned, gain = align_gain(distorted, s.symbols)
        assert np.allclose(aligned.symbols, s.symbols, atol=1e-12)
        assert gain == pytest.approx(np.exp(-0.4j) / 0.7)

    def test_symbol_sequence_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SymbolSequence(np.array([1.0, np.nan * 1j]))
