"""Pulse shaping, matched filtering, resampling, and waveform file I/O.

The sampled-waveform objects carry an exact delay ledger (sample index of the
first symbol's center) so the receive side never estimates timing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .signal import SymbolSequence

_WAVEFORM_MAGIC = b"CEQW1"


class AliasingError(ValueError):
    """Raised when a rate change would fold signal energy across Nyquist."""


@dataclass
class SampledWaveform:
    """Complex baseband samples at an integer number of samples per symbol.

    ``samples`` is ``(N,)`` for one polarization or ``(2, N)`` for two.
    ``delay_samples`` is the index of symbol 0's center tap; ``n_symbols``
    records how many symbol periods the record carries (both are bookkeeping,
    not part of the on-disk format).
    """

    samples: np.ndarray
    sample_rate: float
    symbol_rate: float
    delay_samples: int = 0
    n_symbols: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim not in (1, 2):
            raise ValueError("samples must be 1-D or (2, N)")
        if self.samples.ndim == 2 and self.samples.shape[0] not in (1, 2):
            raise ValueError("at most two polarizations supported")
        ratio = self.sample_rate / self.symbol_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"sample_rate must be an integer multiple of symbol_rate, ratio={ratio}")
        if not np.all(np.isfinite(self.samples.view(np.float64))):
            raise ValueError("waveform contains non-finite samples")

    @property
    def sps(self) -> int:
        return round(self.sample_rate / self.symbol_rate)

    @property
    def n_pol(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[-1]


@dataclass(frozen=True)
class PulseShapeSpec:
    """Root-raised-cosine shaping parameters; span is the full filter length in symbols.

    At roll-off 0.01 the impulse response decays like a sinc, so short spans
    leave truncation ISI (measured: ~3.9% EVM at span 64, ~0.2% at span 256).
    """

    rolloff: float = 0.01
    filter_span: int = 256
    sps: int = 4

    def __post_init__(self):
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")
        if self.filter_span % 2 != 0 or self.filter_span <= 0:
            raise ValueError("filter_span must be a positive even symbol count")


def rrc_taps(spec: PulseShapeSpec) -> np.ndarray:
    """Unit-energy RRC taps so the cascaded Tx·Rx filter has unit gain at symbol instants."""
    sps, beta = spec.sps, spec.rolloff
    n_taps = spec.filter_span * sps + 1
    t = (np.arange(n_taps) - (n_taps - 1) / 2) / sps
    h = np.zeros(n_taps)

    at_zero = np.isclose(t, 0.0)
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    if beta > 0:
        at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta))
        h[at_sing] = (beta / np.sqrt(2.0)) * (
            (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
            + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
        )
    else:
        at_sing = np.zeros_like(at_zero)
    rest = ~(at_zero | at_sing)
    tr = t[rest]
    num = np.sin(np.pi * tr * (1.0 - beta)) + 4.0 * beta * tr * np.cos(np.pi * tr * (1.0 + beta))
    den = np.pi * tr * (1.0 - (4.0 * beta * tr) ** 2)
    h[rest] = num / den
    return h / np.sqrt(np.sum(h ** 2))


def shape(tx: SymbolSequence, spec: PulseShapeSpec, symbol_rate: float = 1.0) -> SampledWaveform:
    """Upsample and RRC-shape a symbol sequence.

    Linear convolution: output length is ``n_symbols * sps + filter_span * sps``
    and the delay ledger points at symbol 0's center tap.
    """
    if spec.sps < 2:
        raise AliasingError("shaping needs sps >= 2 to represent the signal band")
    h = rrc_taps(spec)
    symbols = tx.symbols
    single = symbols.ndim == 1
    symbols = np.atleast_2d(symbols)
    n_sym = symbols.shape[-1]
    up = np.zeros((symbols.shape[0], n_sym * spec.sps), dtype=np.complex128)
    up[:, ::spec.sps] = symbols
    out = fftconvolve(up, h[None, :], mode="full", axes=-1)
    if single:
        out = out[0]
    return SampledWaveform(out, symbol_rate=symbol_rate, sample_rate=symbol_rate * spec.sps,
                           delay_samples=(len(h) - 1) // 2, n_symbols=n_sym)


def matched_filter(rx: SampledWaveform, spec: PulseShapeSpec) -> SymbolSequence:
    """RRC matched filter, delay-compensated symbol-rate sampling, unit-power output."""
    if rx.sps != spec.sps:
        raise ValueError(f"waveform at {rx.sps} samples/symbol, filter expects {spec.sps}")
    h = rrc_taps(spec)
    if len(rx) < len(h):
        raise ValueError("waveform shorter than the matched filter span")
    samples = np.atleast_2d(rx.samples)
    filt = fftconvolve(samples, np.conj(h[::-1])[None, :], mode="full", axes=-1)
    delay = rx.delay_samples + (len(h) - 1) // 2
    n_sym = rx.n_symbols
    if n_sym is None:
        n_sym = (filt.shape[-1] - 1 - delay) // spec.sps + 1
    centers = delay + spec.sps * np.arange(n_sym)
    if centers[-1] >= filt.shape[-1]:
        raise ValueError("waveform too short for the declared symbol count")
    sym = filt[:, centers]
    power = np.mean(np.abs(sym) ** 2)
    if power == 0.0:
        raise ValueError("cannot normalize an all-zero waveform")
    sym = sym / np.sqrt(power)
    if rx.samples.ndim == 1:
        sym = sym[0]
    return SymbolSequence(sym, role="received")


def resample(w: SampledWaveform, new_sps: int,
             max_discard_fraction: float = 1e-6) -> SampledWaveform:
    """Band-limited rate change by spectral zero-padding / truncation.

    Exact for signals confined inside the smaller Nyquist band.  Downsampling
    acts as an ideal brick-wall lowpass; if more than ``max_discard_fraction``
    of the energy lies beyond the new Nyquist, an :class:`AliasingError` is
    raised.  Raise the threshold deliberately when the discarded band holds
    only broadband noise (e.g. ASE across the full simulation bandwidth).
    """
    if new_sps < 1:
        raise ValueError("new_sps must be >= 1")
    old_sps = w.sps
    if new_sps == old_sps:
        return replace(w, samples=w.samples.copy())
    n = len(w)
    n_new = n * new_sps
    if n_new % old_sps != 0:
        raise ValueError(f"length {n} not divisible for {old_sps}->{new_sps} resampling")
    n_new //= old_sps
    single = w.samples.ndim == 1
    spec = np.fft.fft(np.atleast_2d(w.samples), axis=-1)

    if new_sps > old_sps:
        out_spec = np.zeros((spec.shape[0], n_new), dtype=np.complex128)
        pos = (n + 1) // 2  # bins 0..pos-1 are non-negative frequencies
        out_spec[:, :pos] = spec[:, :pos]
        out_spec[:, n_new - (n - pos):] = spec[:, pos:]
        if n % 2 == 0:
            # the shared Nyquist bin splits symmetrically between +/- fs/2
            nyq = spec[:, n // 2].copy()
            out_spec[:, n_new - n // 2] = 0.5 * nyq
            out_spec[:, n // 2] = 0.5 * nyq
    else:
        half = n_new // 2
        kept = np.concatenate([spec[:, :half], spec[:, n - (n_new - half):]], axis=-1)
        drop_lo = half
        if n_new % 2 == 0:
            # +/- new-Nyquist alias onto one bin; folding them is the exact
            # adjoint of the upsampling split
            kept[:, half] += spec[:, half]
            drop_lo = half + 1
        total = np.sum(np.abs(spec) ** 2)
        lost = np.sum(np.abs(spec[:, drop_lo:n - (n_new - half)]) ** 2)
        if total > 0 and lost / total > max_discard_fraction:
            raise AliasingError(
                f"resampling to {new_sps} samples/symbol discards {lost / total:.2e} of the energy")
        out_spec = kept
    out = np.fft.ifft(out_spec, axis=-1) * (n_new / n)
    if single:
        out = out[0]
    ratio = new_sps / old_sps
    new_delay = w.delay_samples * ratio
    if abs(new_delay - round(new_delay)) > 1e-9:
        raise ValueError("delay ledger not representable at the new rate")
    return SampledWaveform(out, sample_rate=w.symbol_rate * new_sps, symbol_rate=w.symbol_rate,
                           delay_samples=round(new_delay), n_symbols=w.n_symbols)


def write_waveform(path, w: SampledWaveform) -> None:
    """Dump samples to the structured binary format (magic CEQW1, LE header, I/Q float64)."""
    samples = np.atleast_2d(w.samples)
    n_pol, n_samp = samples.shape
    with open(path, "wb") as fh:
        fh.write(_WAVEFORM_MAGIC)
        fh.write(struct.pack("<QQdd", n_pol, n_samp, w.sample_rate, w.symbol_rate))
        for p in range(n_pol):
            iq = np.empty(2 * n_samp)
            iq[0::2] = samples[p].real
            iq[1::2] = samples[p].imag
            fh.write(iq.astype("<f8").tobytes())


def read_waveform(path) -> SampledWaveform:
    """Load a CEQW1 waveform dump; delay ledger information is not stored on disk."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _WAVEFORM_MAGIC:
            raise ValueError(f"bad waveform magic {magic!r}")
        header = fh.read(struct.calcsize("<QQdd"))
        if len(header) != struct.calcsize("<QQdd"):
            raise ValueError("truncated waveform header")
        n_pol, n_samp, sample_rate, symbol_rate = struct.unpack("<QQdd", header)
        if n_pol not in (1, 2):
            raise ValueError(f"unsupported polarization count {n_pol}")
        payload = fh.read()
    expected = n_pol * n_samp * 2 * 8
    if len(payload) != expected:
        raise ValueError(f"waveform payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f8")
    samples = np.empty((n_pol, n_samp), dtype=np.complex128)
    for p in range(n_pol):
        iq = flat[p * 2 * n_samp:(p + 1) * 2 * n_samp]
        samples[p] = iq[0::2] + 1j * iq[1::2]
    if n_pol == 1:
        samples = samples[0]
    return SampledWaveform(samples, sample_rate=sample_rate, symbol_rate=symbol_rate)
