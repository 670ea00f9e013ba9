"""Real-multiplications-per-bit accounting, analytic and instrumented.

The analytic side evaluates the per-scheme RMPB formulas; the instrumented
side converts operation counters collected during an equalization run with the
same counting convention, so the two must agree exactly when the loop
structure is right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SCHEMES = ("bi", "co_standard", "co_simplified")


@dataclass(frozen=True)
class CountingConvention:
    """What counts as a real multiplication.

    One complex multiply is four real ones; sigmoid/tanh evaluations and all
    additions are free.  A single LSTM step costs the four gate matrix products
    plus the three elementwise gate products.
    """

    complex_mult_real_mults: int = 4
    count_activations: bool = False
    count_additions: bool = False

    def lstm_step_mults(self, n_input: int, n_hidden: int) -> int:
        return 4 * n_hidden * (n_input + n_hidden) + 3 * n_hidden

    def fcl_mults(self, n_fcl_in: int, n_out: int) -> int:
        return n_out * n_fcl_in


DEFAULT_CONVENTION = CountingConvention()


def c_l(n_input: int, n_hidden: int) -> int:
    """Real multiplications of one LSTM time step: 4*n_h*(n_in+n_h) + 3*n_h."""
    if n_input < 1 or n_hidden < 1:
        raise ValueError("n_input and n_hidden must be positive")
    return DEFAULT_CONVENTION.lstm_step_mults(n_input, n_hidden)


def rmpb(scheme: str, n_mod: int = 16, l_t: int = 21, l_b: int | None = None,
         n_input: int = 4, n_hidden: int = 16) -> float:
    """Analytic real multiplications per bit for one equalization scheme.

    bi:             (2 L_T C_L + 4 L_T n_hidden) / log2(N)
    co_standard:    ((L_T + 1) C_L + 4 n_hidden) / log2(N)
    co_simplified:  (2 L_B / (L_B - L_T + 1) C_L + 4 n_hidden) / log2(N)
    """
    bits = math.log2(n_mod)
    cl = c_l(n_input, n_hidden)
    if scheme == "bi":
        return (2 * l_t * cl + 4 * l_t * n_hidden) / bits
    if scheme == "co_standard":
        return ((l_t + 1) * cl + 4 * n_hidden) / bits
    if scheme == "co_simplified":
        if l_b is None or l_b <= l_t - 1:
            raise ValueError("co_simplified needs a block length L_B > L_T - 1")
        return (2 * l_b / (l_b - l_t + 1) * cl + 4 * n_hidden) / bits
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def dbp_rmpb(n_mod: int, n_span: int, n_step: int, n_up: int, n_fft: int) -> float:
    """Back-propagation cost: (4/log2 N) n_span n_step n_up (2(log2 n_FFT + 1) + 1)."""
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    return (4.0 / math.log2(n_mod)) * n_span * n_step * n_up * (2 * (math.log2(n_fft) + 1) + 1)


def cdc_rmpb(n_mod: int, n_up: int, n_fft: int) -> float:
    """Single-stage frequency-domain CDC modeled as dbp_rmpb with one span-step."""
    return dbp_rmpb(n_mod, 1, 1, n_up, n_fft)


@dataclass
class OpCounter:
    """Per-run operation accumulator owned by one execution context."""

    lstm_steps: int = 0
    fcl_calls: int = 0
    fcl_mults: int = 0

    def merge(self, other: "OpCounter") -> None:
        self.lstm_steps += other.lstm_steps
        self.fcl_calls += other.fcl_calls
        self.fcl_mults += other.fcl_mults


@dataclass(frozen=True)
class ComplexityReport:
    scheme: str
    analytic_rmpb: float
    instrumented_rmpb: float
    n_mod: int
    l_t: int
    l_b: int | None
    n_input: int
    n_hidden: int
    lstm_steps: int
    fcl_calls: int
    fcl_mults: int
    output_symbols: int

    @property
    def ratio(self) -> float:
        return self.instrumented_rmpb / self.analytic_rmpb


class AuditError(AssertionError):
    """Instrumented and analytic counts disagree beyond tolerance."""


def audit(scheme: str, counter: OpCounter, output_symbols: int, n_mod: int = 16,
          l_t: int = 21, l_b: int | None = None, n_input: int = 4, n_hidden: int = 16,
          tolerance: float = 0.01) -> ComplexityReport:
    """Compare instrumented counts against the analytic formula for the run.

    Raises :class:`AuditError` with the per-stage counts when the relative
    mismatch exceeds ``tolerance`` (default 1%).
    """
    if output_symbols <= 0:
        raise ValueError("audit needs at least one equalized output symbol")
    bits = math.log2(n_mod)
    cl = c_l(n_input, n_hidden)
    measured = (counter.lstm_steps * cl + counter.fcl_mults) / (output_symbols * bits)
    analytic = rmpb(scheme, n_mod=n_mod, l_t=l_t, l_b=l_b,
                    n_input=n_input, n_hidden=n_hidden)
    report = ComplexityReport(
        scheme=scheme, analytic_rmpb=analytic, instrumented_rmpb=measured,
        n_mod=n_mod, l_t=l_t, l_b=l_b, n_input=n_input, n_hidden=n_hidden,
        lstm_steps=counter.lstm_steps, fcl_calls=counter.fcl_calls,
        fcl_mults=counter.fcl_mults, output_symbols=output_symbols)
    if abs(measured - analytic) > tolerance * analytic:
        raise AuditError(
            f"{scheme}: instrumented {measured:.4f} RMPB vs analytic {analytic:.4f} "
            f"(lstm_steps={counter.lstm_steps}, fcl_calls={counter.fcl_calls}, "
            f"fcl_mults={counter.fcl_mults}, outputs={output_symbols})")
    return report
