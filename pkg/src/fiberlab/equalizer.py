"""Symbol-domain LSTM equalizers: bidirectional, center-oriented standard, and
center-oriented simplified (single forward + backward block pass with state
recycling).

All three architectures share the same parameter bundle (two directional LSTMs
plus one output layer), so a network trained in standard mode equalizes in
simplified mode without retraining.  Training always uses per-window gradients
truncated at the window edges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .complexity import OpCounter
from .lstm import (NetParams, OptimizerState, _net_features, _step_fused, bptt_window,
                   fcl, init_fcl_params, init_lstm_params, load_checkpoint,
                   optimizer_step, save_checkpoint)
from .signal import SymbolSequence

MODES = ("bi", "co_standard", "co_simplified")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EqualizerSpec:
    mode: str = "co_simplified"
    k: int = 10                     # single-side taps; window length is 2k+1
    n_input: int = 2                # 2 = single-pol I/Q, 4 = dual-pol
    n_hidden: int = 16
    block_length: int = 30000       # L_B, simplified mode only

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.n_input not in (2, 4):
            raise ValueError("n_input must be 2 or 4")
        if self.mode == "co_simplified" and self.block_length <= self.window_length:
            raise ValueError("block_length must exceed the window length 2k+1")

    @property
    def window_length(self) -> int:
        return 2 * self.k + 1

    @property
    def net_mode(self) -> str:
        return "bi" if self.mode == "bi" else "co"

    @property
    def fcl_in(self) -> int:
        if self.mode == "bi":
            return 2 * self.window_length * self.n_hidden
        return 2 * self.n_hidden


@dataclass(frozen=True)
class TrainingConfig:
    train_symbols: int = 20_000
    test_symbols: int = 200_000
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.train_symbols <= 0 or self.test_symbols <= 0:
            raise ValueError("symbol counts must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class EqualizedOutput:
    """Equalized symbols for every fully-contexted target position."""

    symbols: SymbolSequence
    valid_range: tuple[int, int]    # half-open target-index interval

    def __post_init__(self):
        lo, hi = self.valid_range
        if hi - lo != len(self.symbols):
            raise ValueError("valid_range extent must match the symbol count")


@dataclass
class TrainingReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)


def init_net(rng: np.random.Generator, spec: EqualizerSpec) -> NetParams:
    return NetParams(
        lstm_fwd=init_lstm_params(rng, spec.n_input, spec.n_hidden),
        lstm_bwd=init_lstm_params(rng, spec.n_input, spec.n_hidden),
        fcl=init_fcl_params(rng, spec.fcl_in, 2),
    )


# ---------------------------------------------------------------------------
# feature construction

def symbol_features(rx: SymbolSequence | np.ndarray, n_input: int = 2,
                    target_pol: int = 0) -> np.ndarray:
    """Per-symbol real feature vectors: [Re, Im] of the target polarization,
    plus the co-polarization pair when n_input is 4."""
    symbols = rx.symbols if isinstance(rx, SymbolSequence) else np.asarray(rx)
    if n_input == 2:
        pol = symbols if symbols.ndim == 1 else symbols[target_pol]
        return np.stack([pol.real, pol.imag], axis=-1)
    if symbols.ndim != 2 or symbols.shape[0] != 2:
        raise ValueError("n_input=4 requires a dual-polarization sequence")
    a, b = symbols[target_pol], symbols[1 - target_pol]
    return np.stack([a.real, a.imag, b.real, b.imag], axis=-1)


def feature_window(rx: SymbolSequence | np.ndarray, n: int, k: int,
                   n_input: int = 2, target_pol: int = 0) -> np.ndarray:
    """The 2k+1 input vectors for target index n: symbols n-k .. n+k in order."""
    feats = symbol_features(rx, n_input, target_pol)
    if n - k < 0 or n + k >= feats.shape[0]:
        raise IndexError(f"target {n} with k={k} exceeds sequence of length {feats.shape[0]}")
    return feats[n - k:n + k + 1]


def _window_view(feats: np.ndarray, l_t: int) -> np.ndarray:
    """(N - L_T + 1, L_T, n_input) sliding view over per-symbol features."""
    view = np.lib.stride_tricks.sliding_window_view(feats, l_t, axis=0)
    return view.transpose(0, 2, 1)


# ---------------------------------------------------------------------------
# equalization

def _windowed_equalize(net: NetParams, spec: EqualizerSpec, feats: np.ndarray,
                       counter: OpCounter | None, chunk: int = 2048) -> np.ndarray:
    """Shared path for the per-window modes (bi and co_standard)."""
    n = feats.shape[0]
    l_t = spec.window_length
    if n < l_t:
        raise ValueError(f"sequence of {n} symbols shorter than the window {l_t}")
    if net.fcl.n_in != spec.fcl_in:
        raise ValueError(f"network FCL expects {net.fcl.n_in} features, spec implies {spec.fcl_in}")
    view = _window_view(feats, l_t)
    steps_per_target = 2 * l_t if spec.mode == "bi" else l_t + 1
    out = np.empty(view.shape[0], dtype=np.complex128)
    for start in range(0, view.shape[0], chunk):
        windows = np.ascontiguousarray(view[start:start + chunk])
        feats_mat, _, _ = _net_features(net, windows, spec.net_mode)
        y = fcl(net.fcl, feats_mat)
        out[start:start + chunk] = y[:, 0] + 1j * y[:, 1]
        if counter is not None:
            counter.lstm_steps += steps_per_target * windows.shape[0]
            counter.fcl_calls += windows.shape[0]
            counter.fcl_mults += windows.shape[0] * 2 * net.fcl.n_in
    return out


def equalize_bi(net: NetParams, spec: EqualizerSpec, rx: SymbolSequence,
                counter: OpCounter | None = None, target_pol: int = 0) -> EqualizedOutput:
    """Bidirectional mode: both LSTMs traverse the full window of every target."""
    if spec.mode != "bi":
        raise ValueError("spec mode must be 'bi'")
    feats = symbol_features(rx, spec.n_input, target_pol)
    out = _windowed_equalize(net, spec, feats, counter)
    return EqualizedOutput(SymbolSequence(out, role="equalized"),
                           valid_range=(spec.k, feats.shape[0] - spec.k))


def equalize_co_standard(net: NetParams, spec: EqualizerSpec, rx: SymbolSequence,
                         counter: OpCounter | None = None, target_pol: int = 0) -> EqualizedOutput:
    """Center-oriented standard mode: k+1 fresh steps per side for every target."""
    if spec.mode not in ("co_standard", "co_simplified"):
        raise ValueError("spec mode must be a center-oriented one")
    feats = symbol_features(rx, spec.n_input, target_pol)
    out = _windowed_equalize(net, spec, feats, counter)
    return EqualizedOutput(SymbolSequence(out, role="equalized"),
                           valid_range=(spec.k, feats.shape[0] - spec.k))


def equalize_co_simplified(net: NetParams, spec: EqualizerSpec, rx_block: SymbolSequence,
                           counter: OpCounter | None = None,
                           target_pol: int = 0) -> EqualizedOutput:
    """Simplified mode over one block: a single continuous pass per direction
    (the previous target's state is recycled), then one FCL per interior symbol."""
    feats = symbol_features(rx_block, spec.n_input, target_pol)
    l_b, l_t, k = feats.shape[0], spec.window_length, spec.k
    if l_b < l_t:
        raise ValueError(f"block of {l_b} symbols shorter than the window {l_t}")
    w_fwd, b_fwd = net.lstm_fwd.fused()
    w_bwd, b_bwd = net.lstm_bwd.fused()
    n_h = net.lstm_fwd.n_hidden
    hs_fwd = np.empty((l_b, n_h))
    hs_bwd = np.empty((l_b, n_h))
    h = np.zeros(n_h)
    c = np.zeros(n_h)
    for t in range(l_b):
        h, c = _step_fused(w_fwd, b_fwd, n_h, h, c, feats[t])
        hs_fwd[t] = h
    h = np.zeros(n_h)
    c = np.zeros(n_h)
    for t in range(l_b - 1, -1, -1):
        h, c = _step_fused(w_bwd, b_bwd, n_h, h, c, feats[t])
        hs_bwd[t] = h

    valid = slice(k, l_b - k)
    feats_mat = np.concatenate([hs_fwd[valid], hs_bwd[valid]], axis=1)
    y = fcl(net.fcl, feats_mat)
    if counter is not None:
        n_valid = l_b - l_t + 1
        counter.lstm_steps += 2 * l_b
        counter.fcl_calls += n_valid
        counter.fcl_mults += n_valid * 2 * net.fcl.n_in
    out = y[:, 0] + 1j * y[:, 1]
    return EqualizedOutput(SymbolSequence(out, role="equalized"),
                           valid_range=(k, l_b - k))


def partition_blocks(rx, l_b: int, l_t: int) -> list[tuple[int, int]]:
    """Half-open block intervals overlapping by L_T - 1 so the valid ranges tile
    the sequence interior exactly once.  ``rx`` may be a sequence or its length."""
    n_symbols = rx if isinstance(rx, (int, np.integer)) else len(rx)
    if l_b <= l_t:
        raise ValueError("block length must exceed the window length")
    if n_symbols < l_t:
        raise ValueError(f"sequence of {n_symbols} symbols shorter than the window {l_t}")
    if n_symbols < l_b:
        warnings.warn(f"sequence of {n_symbols} symbols shorter than one block of {l_b}; "
                      "equalizing as a single short block", RuntimeWarning, stacklevel=2)
        return [(0, n_symbols)]
    blocks = []
    start = 0
    while True:
        stop = min(start + l_b, n_symbols)
        blocks.append((start, stop))
        if stop >= n_symbols:
            return blocks
        start += l_b - l_t + 1


def equalize(net: NetParams, spec: EqualizerSpec, rx: SymbolSequence,
             counter: OpCounter | None = None, target_pol: int = 0,
             per_block_counters: list | None = None) -> EqualizedOutput:
    """Mode dispatcher; simplified mode partitions into blocks and stitches the
    per-block valid ranges back together."""
    if spec.mode == "bi":
        return equalize_bi(net, spec, rx, counter, target_pol)
    if spec.mode == "co_standard":
        return equalize_co_standard(net, spec, rx, counter, target_pol)

    n = len(rx)
    pieces = []
    for start, stop in partition_blocks(n, spec.block_length, spec.window_length):
        block = SymbolSequence(rx.symbols[..., start:stop], role=rx.role)
        block_counter = OpCounter() if (counter is not None or per_block_counters is not None) else None
        out = equalize_co_simplified(net, spec, block, block_counter, target_pol)
        pieces.append(out.symbols.symbols)
        if block_counter is not None:
            if per_block_counters is not None:
                per_block_counters.append((stop - start, block_counter))
            if counter is not None:
                counter.merge(block_counter)
    stitched = np.concatenate(pieces)
    return EqualizedOutput(SymbolSequence(stitched, role="equalized"),
                           valid_range=(spec.k, n - spec.k))


# ---------------------------------------------------------------------------
# training

def train(spec: EqualizerSpec, cfg: TrainingConfig, rx_train: SymbolSequence,
          tx_train: SymbolSequence, target_pol: int = 0) -> tuple[NetParams, TrainingReport]:
    """Fit the network on aligned (received, transmitted) symbols.

    Windows are always the standard-mode kind, so gradients reach at most k
    steps back per side; the simplified mode reuses the result unchanged.
    """
    if len(rx_train) != len(tx_train):
        raise ValueError("rx and tx training sequences must be aligned")
    feats = symbol_features(rx_train, spec.n_input, target_pol)
    tx_symbols = tx_train.symbols if tx_train.symbols.ndim == 1 else tx_train.symbols[target_pol]
    targets_iq = np.stack([tx_symbols.real, tx_symbols.imag], axis=-1)

    l_t = spec.window_length
    view = _window_view(feats, l_t)
    n_targets = view.shape[0]
    if n_targets < 2:
        raise ValueError("not enough symbols to build training windows")
    target_idx = np.arange(spec.k, spec.k + n_targets)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7261]))
    order = rng.permutation(n_targets)
    n_val = max(1, int(round(cfg.val_fraction * n_targets)))
    val_rows = order[:n_val]
    train_rows = order[n_val:]

    net = init_net(np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x696e])), spec)
    opt = OptimizerState(learning_rate=cfg.learning_rate)
    report = TrainingReport()

    best_val = np.inf
    best_state = {k_: v.copy() for k_, v in net.flat().items()}
    stall = 0
    for epoch in range(cfg.max_epochs):
        rng_epoch = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6570, epoch]))
        perm = rng_epoch.permutation(train_rows)
        total = 0.0
        try:
            for start in range(0, perm.size, cfg.batch_size):
                rows = perm[start:start + cfg.batch_size]
                windows = np.ascontiguousarray(view[rows])
                batch_targets = targets_iq[target_idx[rows]]
                loss, grads = bptt_window(net, windows, batch_targets, spec.net_mode)
                total += loss
                scale = 1.0 / rows.size
                grads = {name: g * scale for name, g in grads.items()}
                optimizer_step(opt, net, grads)
        except FloatingPointError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc

        val_loss = _evaluate_loss(net, spec, view, targets_iq[target_idx], val_rows)
        report.train_losses.append(total / max(1, perm.size))
        report.val_losses.append(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = {k_: v.copy() for k_, v in net.flat().items()}
            report.best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    flat = net.flat()
    for name, arr in best_state.items():
        flat[name][...] = arr
    return net, report


def _evaluate_loss(net: NetParams, spec: EqualizerSpec, view: np.ndarray,
                   targets_iq: np.ndarray, rows: np.ndarray, chunk: int = 4096) -> float:
    total = 0.0
    for start in range(0, rows.size, chunk):
        r = rows[start:start + chunk]
        windows = np.ascontiguousarray(view[r])
        feats_mat, _, _ = _net_features(net, windows, spec.net_mode)
        y = fcl(net.fcl, feats_mat)
        total += float(np.sum(np.mean((y - targets_iq[r]) ** 2, axis=-1)))
    return total / max(1, rows.size)


# ---------------------------------------------------------------------------
# checkpoint pairs (one file per direction; the shared FCL is stored in both
# and must match on load)

def save_net(stem, net: NetParams) -> tuple[str, str]:
    fwd_path, bwd_path = f"{stem}.fwd.ckpt", f"{stem}.bwd.ckpt"
    save_checkpoint(fwd_path, net.lstm_fwd, net.fcl)
    save_checkpoint(bwd_path, net.lstm_bwd, net.fcl)
    return fwd_path, bwd_path


def load_net(stem, spec: EqualizerSpec | None = None) -> NetParams:
    expected = None
    if spec is not None:
        expected = (spec.n_input, spec.n_hidden, spec.fcl_in, 2)
    lstm_fwd, fcl_fwd = load_checkpoint(f"{stem}.fwd.ckpt", expected)
    lstm_bwd, fcl_bwd = load_checkpoint(f"{stem}.bwd.ckpt", expected)
    if not (np.array_equal(fcl_fwd.w_out, fcl_bwd.w_out)
            and np.array_equal(fcl_fwd.b_out, fcl_bwd.b_out)):
        raise ValueError("checkpoint pair carries inconsistent output layers")
    return NetParams(lstm_fwd=lstm_fwd, lstm_bwd=lstm_bwd, fcl=fcl_fwd)
