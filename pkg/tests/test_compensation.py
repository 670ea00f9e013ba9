"""CDC and DBP against forward-inverse, degeneration, and ordering oracles."""

from dataclasses import replace

import numpy as np
import pytest

from fiberlab.channel import FiberSpanSpec, LinkSpec, propagate_link, set_launch_power, uniform_link
from fiberlab.compensation import DbpSpec, cdc, dbp
from fiberlab.signal import evm_percent, gray_16qam, map_bits
from fiberlab.waveform import PulseShapeSpec, matched_filter, resample, shape

CMAP = gray_16qam()


def shaped(n_sym, seed, power_dbm, pulse):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, 4 * n_sym, dtype=np.uint8)
    tx = map_bits(bits, CMAP)
    w = set_launch_power(shape(tx, pulse, symbol_rate=32e9), power_dbm)
    return tx, w


class TestCdc:
    def test_zero_dispersion_is_identity(self):
        pulse = PulseShapeSpec(0.01, 64, 4)
        _, w = shaped(200, 0, 0.0, pulse)
        link = uniform_link(2, 80.0, beta2_ps2_per_km=0.0, ase=False)
        out = cdc(w, link)
        assert np.max(np.abs(out.samples - w.samples)) < 1e-12

    def test_inverts_noiseless_linear_link(self):
        pulse = PulseShapeSpec(0.01, 128, 4)
        tx, w = shaped(1000, 1, 0.0, pulse)
        link = uniform_link(5, 80.0, gamma_per_w_km=0.0, step_km=1.0, ase=False)
        w_rx = propagate_link(w, link, rng_seed=0)
        w_comp = cdc(w_rx, link)
        d = w_rx.delay_samples - w.delay_samples
        got = w_comp.samples[d:d + len(w)]
        rel_mse = np.mean(np.abs(got - w.samples) ** 2) / np.mean(np.abs(w.samples) ** 2)
        assert rel_mse < 1e-6

    def test_group_inverse(self):
        pulse = PulseShapeSpec(0.01, 64, 4)
        _, w = shaped(300, 2, 0.0, pulse)
        link = uniform_link(3, 80.0, ase=False)
        neg = LinkSpec(spans=tuple(
            (replace(s, beta2_ps2_per_km=-s.beta2_ps2_per_km), a) for s, a in link.spans))
        out = cdc(cdc(w, link), neg)
        assert np.max(np.abs(out.samples - w.samples)) / np.max(np.abs(w.samples)) < 1e-9

    def test_unitary(self):
        pulse = PulseShapeSpec(0.01, 64, 4)
        _, w = shaped(300, 3, 0.0, pulse)
        link = uniform_link(10, 80.0, ase=False)
        out = cdc(w, link)
        p_in = np.mean(np.abs(w.samples) ** 2)
        p_out = np.mean(np.abs(out.samples) ** 2)
        assert abs(p_out - p_in) / p_in < 1e-12


class TestDbp:
    def test_linear_degeneration_matches_cdc(self):
        pulse = PulseShapeSpec(0.01, 64, 2)
        _, w = shaped(500, 4, 0.0, pulse)
        link = uniform_link(4, 80.0, gamma_per_w_km=0.0, alpha_db_per_km=0.0,
                            step_km=1.0, ase=False)
        a = dbp(w, link, DbpSpec(steps_per_span=2, oversampling=2))
        b = cdc(w, link)
        assert np.max(np.abs(a.samples - b.samples)) / np.max(np.abs(b.samples)) < 1e-9

    def test_linear_degeneration_with_loss_and_gain(self):
        pulse = PulseShapeSpec(0.01, 64, 2)
        _, w = shaped(400, 5, 0.0, pulse)
        link = uniform_link(3, 80.0, gamma_per_w_km=0.0, step_km=1.0, ase=False)
        a = dbp(w, link, DbpSpec(steps_per_span=1, oversampling=2))
        b = cdc(w, link)  # loss and gain cancel exactly in this link
        assert np.max(np.abs(a.samples - b.samples)) / np.max(np.abs(b.samples)) < 1e-9

    def test_matched_density_inversion(self):
        pulse = PulseShapeSpec(0.01, 256, 4)
        tx, w = shaped(2000, 6, 3.0, pulse)
        link = uniform_link(2, 80.0, step_km=0.1, ase=False)
        w_rx = propagate_link(w, link, rng_seed=0)
        w_back = dbp(w_rx, link, DbpSpec(steps_per_span=800, oversampling=4))
        rx = matched_filter(w_back, pulse)
        ref = tx.symbols / np.sqrt(np.mean(np.abs(tx.symbols) ** 2))
        assert evm_percent(rx.symbols, ref) < 0.5

    def test_evm_improves_with_step_density(self):
        pulse = PulseShapeSpec(0.01, 128, 4)
        tx, w = shaped(1500, 7, 4.0, pulse)
        link = uniform_link(2, 80.0, step_km=0.25, ase=False)
        w_rx = propagate_link(w, link, rng_seed=0)
        ref = tx.symbols / np.sqrt(np.mean(np.abs(tx.symbols) ** 2))
        evms = []
        for steps in (1, 2, 4, 8):
            back = dbp(w_rx, link, DbpSpec(steps_per_span=steps, oversampling=4))
            rx = matched_filter(back, pulse)
            rot = np.vdot(rx.symbols, ref) / np.vdot(rx.symbols, rx.symbols)
            evms.append(evm_percent(rx.symbols * rot, ref))
        assert evms[0] > evms[1] > evms[2] > evms[3]

    def test_oversampling_mismatch_rejected(self):
        pulse = PulseShapeSpec(0.01, 64, 4)
        _, w = shaped(100, 8, 0.0, pulse)
        link = uniform_link(1, 80.0, ase=False)
        with pytest.raises(ValueError, match="samples/symbol"):
            dbp(w, link, DbpSpec(steps_per_span=1, oversampling=2))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DbpSpec(steps_per_span=0)
        with pytest.raises(ValueError, match="power of two"):
            DbpSpec(fft_size=1000)
        with pytest.raises(ValueError):
            DbpSpec(oversampling=0)


class TestDbpResampledChain:
    def test_two_sps_chain_recovers_linear_link(self):
        pulse = PulseShapeSpec(0.01, 256, 4)
        tx, w = shaped(1000, 9, 0.0, pulse)
        link = uniform_link(5, 80.0, gamma_per_w_km=0.0, step_km=1.0, ase=False)
        w_rx = propagate_link(w, link, rng_seed=0)
        w2 = resample(w_rx, 2)
        back = dbp(w2, link, DbpSpec(steps_per_span=1, oversampling=2))
        rx = matched_filter(back, replace(pulse, sps=2))
        ref = tx.symbols / np.sqrt(np.mean(np.abs(tx.symbols) ** 2))
        assert evm_percent(rx.symbols, ref) < 1.0
