"""Seeded end-to-end runs: transmit, propagate, compensate, equalize, report.

A run is fully determined by (config, schemes): every random draw comes from a
named sub-stream of the root seed, so reruns reproduce metrics to the last
digit and sweep points can execute in parallel without changing results.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import complexity as cx
from .channel import propagate_link, set_launch_power
from .compensation import cdc, dbp
from .config import ExperimentConfig, stream_seed
from .equalizer import EqualizedOutput, equalize, train
from .signal import SymbolSequence, align_gain, gray_16qam, map_bits, measure
from .waveform import matched_filter, resample, shape

LINEAR_SCHEMES = ("cdc", "dbp")
LSTM_SCHEMES = ("bi", "co_standard", "co_simplified")


def parse_scheme(scheme: str, config: ExperimentConfig) -> tuple[str, int | None]:
    """Normalize a scheme id: 'cdc', 'dbp', 'dbp-N', or an equalizer mode."""
    if scheme == "cdc":
        return "cdc", None
    if scheme == "dbp":
        return "dbp", config.compensation.steps_per_span
    if scheme.startswith("dbp-"):
        return "dbp", int(scheme.split("-", 1)[1])
    if scheme in LSTM_SCHEMES:
        return scheme, None
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class SchemeResult:
    scheme: str
    ber: float
    q2_db: float | None
    evm_pct: float
    bit_errors: int
    bits_total: int
    rmpb: float | None = None
    audit_ok: bool | None = None
    instrumented_rmpb: float | None = None
    training_epochs: int | None = None
    best_val_loss: float | None = None


def generate_transmit(config: ExperimentConfig):
    """Random bits -> symbols -> shaped waveform at the configured launch power."""
    cmap = gray_16qam()
    eq = config.equalizer
    n_sym = eq.train_symbols + eq.test_symbols
    rng = np.random.default_rng(stream_seed(config.seed, "data-bits"))
    bits = rng.integers(0, 2, size=n_sym * cmap.bits_per_symbol, dtype=np.uint8)
    tx = map_bits(bits, cmap)
    pulse = config.signal.pulse_spec()
    w = shape(tx, pulse, symbol_rate=config.signal.symbol_rate_ghz * 1e9)
    w = set_launch_power(w, config.link.launch_power_dbm)
    return cmap, bits, tx, w, pulse


def cdc_symbol_stream(config: ExperimentConfig, dump_waveform_path=None):
    """Transmit, propagate, and linearly receive: the symbol stream every LSTM
    scheme trains and equalizes on.  Returns (cmap, bits, tx, rx_cdc)."""
    cmap, bits, tx, w_tx, pulse = generate_transmit(config)
    link = config.link.build()
    w_rx = propagate_link(w_tx, link, rng_seed=stream_seed(config.seed, "channel-noise"))
    if dump_waveform_path is not None:
        from .waveform import write_waveform
        write_waveform(dump_waveform_path, w_rx)
    n_fit = config.equalizer.train_symbols
    return cmap, bits, tx, receive_linear(w_rx, link, pulse, config, "cdc", None, tx, n_fit)


def receive_linear(w_rx, link, pulse, config: ExperimentConfig,
                   kind: str, dbp_steps: int | None,
                   tx: SymbolSequence | None = None, n_fit: int | None = None) -> SymbolSequence:
    """CDC or DBP followed by the matched filter, back to unit-power symbols.

    When the transmitted reference is given, a single data-aided complex gain
    (fitted on the first ``n_fit`` symbols) removes the bulk nonlinear phase
    rotation and scale that the out-of-scope carrier-recovery stages of a
    hardware receiver would absorb.
    """
    if kind == "cdc":
        w_comp = cdc(w_rx, link)
        rx = matched_filter(w_comp, pulse)
    else:
        spec = config.compensation.dbp_spec(dbp_steps)
        # the discarded band beyond the receiver Nyquist carries only ASE
        w_down = resample(w_rx, spec.oversampling, max_discard_fraction=0.25)
        w_comp = dbp(w_down, link, spec)
        pulse_down = replace(pulse, sps=spec.oversampling)
        rx = matched_filter(w_comp, pulse_down)
    if tx is not None:
        rx, _ = align_gain(rx, tx.symbols, fit=slice(0, n_fit))
    return rx


def run_pipeline(config: ExperimentConfig, schemes=("cdc",), dump_waveform_path=None) -> dict:
    """Execute the full chain for the requested schemes and return the report dict.

    LSTM schemes ride on the CDC-compensated symbol stream, train on the first
    train_symbols targets, and are scored on the same test targets as the
    linear schemes.
    """
    t0 = time.monotonic()
    parsed = [(s, *parse_scheme(s, config)) for s in schemes]
    cmap, bits, tx, w_tx, pulse = generate_transmit(config)
    link = config.link.build()
    w_rx = propagate_link(w_tx, link, rng_seed=stream_seed(config.seed, "channel-noise"))
    if dump_waveform_path is not None:
        from .waveform import write_waveform
        write_waveform(dump_waveform_path, w_rx)

    eq_cfg = config.equalizer
    k = eq_cfg.k
    n_train, n_test = eq_cfg.train_symbols, eq_cfg.test_symbols
    n_sym = n_train + n_test
    bps = cmap.bits_per_symbol
    test_lo, test_hi = n_train, n_sym - k
    test_bits = bits[test_lo * bps:test_hi * bps]

    needs_cdc = any(kind in LSTM_SCHEMES for _, kind, _ in parsed) or \
        any(kind == "cdc" for _, kind, _ in parsed)
    n_fit = eq_cfg.train_symbols
    rx_cdc = receive_linear(w_rx, link, pulse, config, "cdc", None, tx, n_fit) if needs_cdc else None

    trained = {}
    results: dict[str, SchemeResult] = {}
    for name, kind, steps in parsed:
        if kind == "cdc":
            rx_syms = rx_cdc.symbols[test_lo:test_hi]
            m = measure(rx_syms, test_bits, cmap)
            results[name] = SchemeResult(name, m.ber, _finite_or_none(m.q2_db), m.evm_pct,
                                         m.bit_errors, m.bits_total,
                                         rmpb=cx.cdc_rmpb(cmap.order, config.compensation.oversampling,
                                                          config.compensation.fft_size))
        elif kind == "dbp":
            rx = receive_linear(w_rx, link, pulse, config, "dbp", steps, tx, n_fit)
            rx_syms = rx.symbols[test_lo:test_hi]
            m = measure(rx_syms, test_bits, cmap)
            results[name] = SchemeResult(name, m.ber, _finite_or_none(m.q2_db), m.evm_pct,
                                         m.bit_errors, m.bits_total,
                                         rmpb=cx.dbp_rmpb(cmap.order, config.link.n_spans, steps,
                                                          config.compensation.oversampling,
                                                          config.compensation.fft_size))
        else:
            results[name] = _run_lstm_scheme(kind, config, cmap, rx_cdc, tx, bits, trained)

    report = {
        "config": config.to_dict(),
        "seed": config.seed,
        "schemes": {name: asdict(res) for name, res in results.items()},
        "runtime_s": round(time.monotonic() - t0, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    return report


def train_equalizer(config: ExperimentConfig, mode: str | None = None,
                    rx_cdc: SymbolSequence | None = None, tx: SymbolSequence | None = None):
    """Train the configured equalizer on the first train_symbols targets of the
    CDC-compensated stream; returns (net, TrainingReport)."""
    eq_cfg = config.equalizer
    mode = mode or eq_cfg.mode
    if rx_cdc is None or tx is None:
        _, _, tx, rx_cdc = cdc_symbol_stream(config)
    k = eq_cfg.k
    n_train = eq_cfg.train_symbols
    train_spec = eq_cfg.spec("bi" if mode == "bi" else "co_standard")
    rx_train = SymbolSequence(rx_cdc.symbols[:n_train + k], role="received")
    tx_train = SymbolSequence(tx.symbols[:n_train + k], role="transmitted")
    return train(train_spec, eq_cfg.training(config.seed), rx_train, tx_train)


def _run_lstm_scheme(mode: str, config: ExperimentConfig, cmap, rx_cdc: SymbolSequence,
                     tx: SymbolSequence, bits: np.ndarray, trained: dict) -> SchemeResult:
    eq_cfg = config.equalizer
    k = eq_cfg.k
    n_train, n_test = eq_cfg.train_symbols, eq_cfg.test_symbols
    n_sym = n_train + n_test
    bps = cmap.bits_per_symbol
    spec = eq_cfg.spec(mode)

    # standard and simplified modes share one trained network
    train_key = "bi" if mode == "bi" else "co"
    if train_key not in trained:
        trained[train_key] = train_equalizer(config, mode, rx_cdc, tx)
    net, rep = trained[train_key]

    rx_test = SymbolSequence(rx_cdc.symbols[n_train - k:], role="received")
    counter = cx.OpCounter()
    per_block: list = []
    out: EqualizedOutput = equalize(net, spec, rx_test, counter=counter,
                                    per_block_counters=per_block if mode == "co_simplified" else None)
    test_lo, test_hi = n_train, n_sym - k
    assert len(out.symbols) == test_hi - test_lo
    m = measure(out.symbols.symbols, bits[test_lo * bps:test_hi * bps], cmap)

    audit_ok = True
    instrumented = None
    try:
        if mode == "co_simplified":
            for block_len, block_counter in per_block:
                cx.audit(mode, block_counter, block_len - spec.window_length + 1,
                         n_mod=cmap.order, l_t=spec.window_length, l_b=block_len,
                         n_input=spec.n_input, n_hidden=spec.n_hidden)
            total_outputs = sum(bl - spec.window_length + 1 for bl, _ in per_block)
        else:
            total_outputs = len(out.symbols)
            cx.audit(mode, counter, total_outputs, n_mod=cmap.order,
                     l_t=spec.window_length, l_b=spec.block_length,
                     n_input=spec.n_input, n_hidden=spec.n_hidden)
        instrumented = (counter.lstm_steps * cx.c_l(spec.n_input, spec.n_hidden)
                        + counter.fcl_mults) / (total_outputs * bps)
    except cx.AuditError:
        audit_ok = False

    return SchemeResult(
        mode, m.ber, _finite_or_none(m.q2_db), m.evm_pct, m.bit_errors, m.bits_total,
        rmpb=cx.rmpb(mode, n_mod=cmap.order, l_t=spec.window_length,
                     l_b=spec.block_length if mode == "co_simplified" else None,
                     n_input=spec.n_input, n_hidden=spec.n_hidden),
        audit_ok=audit_ok, instrumented_rmpb=instrumented,
        training_epochs=rep.epochs_run,
        best_val_loss=min(rep.val_losses) if rep.val_losses else None)


def _finite_or_none(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


# ---------------------------------------------------------------------------
# sweeps

def _sweep_point(args):
    index, config, schemes = args
    try:
        report = run_pipeline(config, schemes)
        rows = []
        for name, res in report["schemes"].items():
            rows.append({"value": _sweep_value(config), "scheme": name,
                         "ber": res["ber"], "q2_db": res["q2_db"], "rmpb": res["rmpb"],
                         "error": ""})
        return index, rows
    except Exception as exc:  # per-row failure, sweep continues
        return index, [{"value": _sweep_value(config), "scheme": s, "ber": None,
                        "q2_db": None, "rmpb": None, "error": repr(exc)} for s in schemes]


def _sweep_value(config: ExperimentConfig) -> float:
    if config.sweep.variable == "launch_power":
        return config.link.launch_power_dbm
    if config.sweep.variable == "distance":
        return config.link.n_spans * config.link.span_km
    return config.equalizer.k * 2 + 1


def run_sweep(config: ExperimentConfig, schemes=None, workers: int | None = None) -> list[dict]:
    """One row per (sweep value, scheme), ordered by sweep value.

    Tap-length sweeps evaluate the complexity formulas only (no retraining);
    power and distance sweeps run the full pipeline per point.
    """
    if schemes is None:
        schemes = ["cdc", f"dbp-{config.compensation.steps_per_span}", config.equalizer.mode]
    variable = config.sweep.variable
    if variable == "tap_length":
        rows = []
        for value in config.sweep.values:
            cfg = config.with_tap_length(value)
            spec = cfg.equalizer.spec()
            for name in schemes:
                kind, steps = parse_scheme(name, cfg)
                if kind in LSTM_SCHEMES:
                    rmpb = cx.rmpb(kind, l_t=spec.window_length,
                                   l_b=spec.block_length if kind == "co_simplified" else None,
                                   n_input=spec.n_input, n_hidden=spec.n_hidden)
                elif kind == "dbp":
                    rmpb = cx.dbp_rmpb(16, cfg.link.n_spans, steps,
                                       cfg.compensation.oversampling, cfg.compensation.fft_size)
                else:
                    rmpb = cx.cdc_rmpb(16, cfg.compensation.oversampling, cfg.compensation.fft_size)
                rows.append({"value": float(value), "scheme": name, "ber": None,
                             "q2_db": None, "rmpb": rmpb, "error": ""})
        return rows

    points = []
    for i, value in enumerate(config.sweep.values):
        cfg = (config.with_launch_power(value) if variable == "launch_power"
               else config.with_distance(value))
        points.append((i, cfg, list(schemes)))

    workers = workers or config.workers
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            indexed = list(pool.map(_sweep_point, points))
    else:
        indexed = [_sweep_point(p) for p in points]
    indexed.sort(key=lambda item: item[0])
    return [row for _, rows in indexed for row in rows]


SWEEP_COLUMNS = ("value", "scheme", "ber", "q2_db", "rmpb", "error")


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: ("" if row.get(key) is None else row.get(key))
                             for key in SWEEP_COLUMNS})


# ---------------------------------------------------------------------------
# complexity tables

COMPLEXITY_COLUMNS = ("scheme", "l_t", "l_b", "analytic_rmpb", "instrumented_rmpb", "ratio_to_bi")


def complexity_rows(config: ExperimentConfig) -> list[dict]:
    """Analytic RMPB for every scheme at the configured operating point."""
    spec = config.equalizer.spec()
    l_t, l_b = spec.window_length, spec.block_length
    n_in, n_h = spec.n_input, spec.n_hidden
    bi = cx.rmpb("bi", l_t=l_t, n_input=n_in, n_hidden=n_h)
    rows = []
    for scheme in cx.SCHEMES:
        val = cx.rmpb(scheme, l_t=l_t, l_b=l_b if scheme == "co_simplified" else None,
                      n_input=n_in, n_hidden=n_h)
        rows.append({"scheme": scheme, "l_t": l_t,
                     "l_b": l_b if scheme == "co_simplified" else "",
                     "analytic_rmpb": val, "instrumented_rmpb": "",
                     "ratio_to_bi": val / bi})
    for scheme, n_step in (("cdc", None), (f"dbp-{config.compensation.steps_per_span}",
                                           config.compensation.steps_per_span)):
        if n_step is None:
            val = cx.cdc_rmpb(16, config.compensation.oversampling, config.compensation.fft_size)
        else:
            val = cx.dbp_rmpb(16, config.link.n_spans, n_step,
                              config.compensation.oversampling, config.compensation.fft_size)
        rows.append({"scheme": scheme, "l_t": "", "l_b": "", "analytic_rmpb": val,
                     "instrumented_rmpb": "", "ratio_to_bi": val / bi})
    return rows


def write_complexity_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPLEXITY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
