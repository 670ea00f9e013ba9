"""Linear and model-based nonlinear compensation: frequency-domain CDC and DBP.

Both operators run a full-record FFT at the input length, so compensation is
the exact circular inverse of the accumulated linear response; DBP additionally
walks the spans in reverse with negated loss, dispersion, and nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import fft, ifft

from .channel import LinkSpec, _split_step
from .waveform import SampledWaveform


@dataclass(frozen=True)
class DbpSpec:
    """Back-propagation resolution: split count per span and the receiver-side
    oversampling; fft_size parameterizes the block-processing complexity model."""

    steps_per_span: int = 1
    oversampling: int = 2
    fft_size: int = 4096

    def __post_init__(self):
        if self.steps_per_span < 1:
            raise ValueError("steps_per_span must be >= 1")
        if self.oversampling < 1:
            raise ValueError("oversampling must be >= 1")
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")


def _accumulated_beta2_l(link: LinkSpec) -> float:
    """Total beta2 * length of the link in s^2."""
    return sum(span.beta2_ps2_per_km * 1e-24 * span.length_km for span, _ in link.spans)


def cdc(w: SampledWaveform, link: LinkSpec) -> SampledWaveform:
    """All-pass inversion of the link's accumulated chromatic dispersion."""
    b2l = _accumulated_beta2_l(link)
    samples = np.atleast_2d(w.samples)
    omega = 2.0 * np.pi * np.fft.fftfreq(samples.shape[-1], d=1.0 / w.sample_rate)
    out = ifft(fft(samples, axis=-1) * np.exp(-0.5j * b2l * omega ** 2), axis=-1)
    if w.samples.ndim == 1:
        out = out[0]
    return replace(w, samples=out)


def dbp(w: SampledWaveform, link: LinkSpec, spec: DbpSpec) -> SampledWaveform:
    """Span-by-span inverse NLSE: undo each amplifier gain, then back-propagate
    the span with negated alpha, beta2, gamma in steps_per_span symmetric steps."""
    if w.sps != spec.oversampling:
        raise ValueError(f"waveform at {w.sps} samples/symbol, dbp configured for {spec.oversampling}")
    samples = np.atleast_2d(w.samples).copy()
    for span, amp in reversed(link.spans):
        samples = samples / 10.0 ** (amp.gain_db / 20.0)
        samples = _split_step(
            samples, w.sample_rate,
            length_m=span.length_km * 1e3,
            n_steps=spec.steps_per_span,
            beta2_si=-span.beta2_ps2_per_km * 1e-27,
            alpha_np_per_m=-span.alpha_db_per_km * np.log(10.0) / 10.0 / 1e3,
            gamma_per_w_m=-span.gamma_per_w_km * 1e-3,
            warn_nl_phase=False,
        )
    out = samples if w.samples.ndim == 2 else samples[0]
    return replace(w, samples=out)
