"""16-QAM constellation mapping, hard decisions, and quality metrics (BER, Q², EVM)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcinv

# 2-bit Gray code along each PAM axis: walking -3 -> -1 -> +1 -> +3 flips one bit
# at a time.  Levels are scaled so the 16-point grid has unit average power.
_PAM_LEVELS = (-3.0, -1.0, 1.0, 3.0)
_PAM_GRAY_BITS = ((0, 0), (0, 1), (1, 1), (1, 0))
_QAM16_SCALE = 1.0 / np.sqrt(10.0)

_DECISION_CHUNK = 1 << 16


@dataclass(frozen=True)
class ConstellationMap:
    """A QAM constellation with its bit labeling.

    ``points[i]`` carries the bit label ``bit_labels[i]``; points are indexed by
    the integer value of their label (I bits first, then Q bits, MSB first), so
    mapping a bit group is a single table lookup.
    """

    order: int
    points: np.ndarray      # (N,) complex128, unit average power
    bit_labels: np.ndarray  # (N, log2 N) uint8

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))


def gray_16qam() -> ConstellationMap:
    """Build the Gray-labeled 16-QAM map: 2-bit Gray code per quadrature,
    bits ordered I-pair then Q-pair."""
    n = 16
    points = np.zeros(n, dtype=np.complex128)
    labels = np.zeros((n, 4), dtype=np.uint8)
    for li, (i_level, i_bits) in enumerate(zip(_PAM_LEVELS, _PAM_GRAY_BITS)):
        for lq, (q_level, q_bits) in enumerate(zip(_PAM_LEVELS, _PAM_GRAY_BITS)):
            bits = (*i_bits, *q_bits)
            idx = bits[0] * 8 + bits[1] * 4 + bits[2] * 2 + bits[3]
            points[idx] = (i_level + 1j * q_level) * _QAM16_SCALE
            labels[idx] = bits
    return ConstellationMap(order=n, points=points, bit_labels=labels)


@dataclass
class SymbolSequence:
    """A run of complex symbols with a role tag: transmitted, received, or equalized.

    ``symbols`` is 1-D for single polarization or ``(2, N)`` for dual.
    """

    symbols: np.ndarray
    role: str = "transmitted"

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.complex128)
        if not np.all(np.isfinite(self.symbols.view(np.float64))):
            raise ValueError("symbol sequence contains non-finite values")

    def __len__(self) -> int:
        return self.symbols.shape[-1]


@dataclass(frozen=True)
class MetricsReport:
    bit_errors: int
    bits_total: int
    ber: float
    q2_db: float     # +inf when no errors were counted
    evm_pct: float


def map_bits(bits: np.ndarray, cmap: ConstellationMap) -> SymbolSequence:
    """Map a bit array onto constellation symbols (bits_per_symbol bits each)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    bps = cmap.bits_per_symbol
    if bits.size % bps != 0:
        raise ValueError(f"bit count {bits.size} not divisible by {bps}")
    groups = bits.reshape(-1, bps)
    # label value with MSB-first bit order == point index
    weights = 1 << np.arange(bps - 1, -1, -1)
    idx = groups @ weights
    return SymbolSequence(cmap.points[idx], role="transmitted")


def hard_decide(rx: SymbolSequence | np.ndarray, cmap: ConstellationMap) -> np.ndarray:
    """Nearest-Euclidean-point decision; returns the decided bit array.

    Exact ties resolve to the lowest point index (argmin order).
    """
    symbols = rx.symbols if isinstance(rx, SymbolSequence) else np.asarray(rx)
    symbols = symbols.ravel()
    idx = np.empty(symbols.size, dtype=np.intp)
    for start in range(0, symbols.size, _DECISION_CHUNK):
        chunk = symbols[start:start + _DECISION_CHUNK]
        d2 = np.abs(chunk[:, None] - cmap.points[None, :]) ** 2
        idx[start:start + _DECISION_CHUNK] = np.argmin(d2, axis=1)
    return cmap.bit_labels[idx].ravel()


def q2_from_ber(ber: float) -> float:
    """Q² factor in dB for a measured bit-error ratio."""
    if not 0.0 < ber < 0.5:
        raise ValueError(f"BER must lie in (0, 0.5), got {ber}")
    return float(20.0 * np.log10(np.sqrt(2.0) * erfcinv(2.0 * ber)))


def ber_from_q2(q2_db: float) -> float:
    """Inverse of :func:`q2_from_ber` on (0, 0.5)."""
    q_lin = 10.0 ** (q2_db / 20.0)
    return float(0.5 * erfc(q_lin / np.sqrt(2.0)))


def evm_percent(rx: np.ndarray, ref: np.ndarray) -> float:
    """RMS error vector magnitude relative to the RMS reference magnitude, in percent."""
    rx = np.asarray(rx).ravel()
    ref = np.asarray(ref).ravel()
    if rx.shape != ref.shape:
        raise ValueError("rx and reference lengths differ")
    err = np.mean(np.abs(rx - ref) ** 2)
    p_ref = np.mean(np.abs(ref) ** 2)
    return float(100.0 * np.sqrt(err / p_ref))


def align_gain(rx: SymbolSequence, ref: np.ndarray,
               fit: slice | None = None) -> tuple[SymbolSequence, complex]:
    """Rotate/scale by the least-squares complex gain fitted on known symbols.

    Desk-scale stand-in for the carrier-phase and gain recovery stages of a
    hardware receiver: a single complex factor a = <ref, rx>/<rx, rx> estimated
    over ``fit`` (default: all symbols) and applied to the whole sequence.
    """
    ref = np.asarray(ref).ravel()
    fit = fit if fit is not None else slice(None)
    seg_rx = rx.symbols[fit]
    seg_ref = ref[fit]
    if seg_rx.shape != seg_ref.shape or seg_rx.size == 0:
        raise ValueError("alignment fit ranges must be nonempty and matched")
    a = np.vdot(seg_rx, seg_ref) / np.vdot(seg_rx, seg_rx)
    return SymbolSequence(rx.symbols * a, role=rx.role), complex(a)


def measure(rx: SymbolSequence | np.ndarray, tx_bits: np.ndarray,
            cmap: ConstellationMap) -> MetricsReport:
    """Error-count BER against the transmitted bits, with Q² and EVM."""
    tx_bits = np.asarray(tx_bits, dtype=np.uint8).ravel()
    decided = hard_decide(rx, cmap)
    if decided.size != tx_bits.size:
        raise ValueError(f"bit count mismatch: {decided.size} decided vs {tx_bits.size} sent")
    errors = int(np.count_nonzero(decided != tx_bits))
    ber = errors / tx_bits.size
    q2 = q2_from_ber(ber) if errors > 0 else float("inf")
    ref = map_bits(tx_bits, cmap).symbols
    symbols = rx.symbols if isinstance(rx, SymbolSequence) else np.asarray(rx)
    evm = evm_percent(symbols, ref)
    return MetricsReport(bit_errors=errors, bits_total=tx_bits.size,
                         ber=ber, q2_db=q2, evm_pct=evm)
