"""LSTM cell, output layer, truncated-BPTT gradients, Adam updates, checkpoints.

The cell follows the classic gate equations with a combined weight matrix per
gate acting on the concatenation [h_{t-1}, x_t]:

    f = sigmoid(w_f [h, x] + b_f)        i = sigmoid(w_i [h, x] + b_i)
    g = tanh  (w_c [h, x] + b_c)         o = sigmoid(w_o [h, x] + b_o)
    c' = f * c + i * g                   h' = o * tanh(c')

All arrays are float64; every function accepts a leading batch dimension on
states and inputs.  Parameters are shared across time steps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_CKPT_MAGIC = b"CEQM1"


def _sigmoid(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    # 1/(1+exp(-x)) saturates to the exact 0/1 limits on overflow, so the
    # plain form is safe; just silence the spurious overflow warning
    with np.errstate(over="ignore"):
        out = np.exp(-x, out=out)
        out += 1.0
        np.reciprocal(out, out=out)
    return out


@dataclass
class LstmParams:
    """Gate weights (n_hidden, n_hidden + n_input), columns ordered [h | x]."""

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        n_h = self.b_f.shape[0]
        for name in ("w_f", "w_i", "w_c", "w_o"):
            w = getattr(self, name)
            if w.shape[0] != n_h or w.shape[1] <= n_h:
                raise ValueError(f"{name} shape {w.shape} inconsistent with n_hidden={n_h}")
        for name in ("b_i", "b_c", "b_o"):
            if getattr(self, name).shape != (n_h,):
                raise ValueError(f"{name} shape inconsistent with n_hidden={n_h}")

    @property
    def n_hidden(self) -> int:
        return self.b_f.shape[0]

    @property
    def n_input(self) -> int:
        return self.w_f.shape[1] - self.n_hidden

    def fused(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (4*n_h, n_h+n_in) weights and (4*n_h,) biases.

        Row order is f, i, o, c so the three sigmoid gates occupy one
        contiguous slab and the tanh candidate the remainder.
        """
        return (np.concatenate([self.w_f, self.w_i, self.w_o, self.w_c], axis=0),
                np.concatenate([self.b_f, self.b_i, self.b_o, self.b_c]))

    def flat(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name)
                for name in ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o")}

    def n_parameters(self) -> int:
        return sum(a.size for a in self.flat().values())


@dataclass
class FclParams:
    """Affine output layer mapping concatenated hidden features to (I, Q)."""

    w_out: np.ndarray  # (n_out, n_fcl_in)
    b_out: np.ndarray  # (n_out,)

    def __post_init__(self):
        if self.w_out.shape[0] != self.b_out.shape[0]:
            raise ValueError("w_out rows must match b_out length")

    @property
    def n_out(self) -> int:
        return self.b_out.shape[0]

    @property
    def n_in(self) -> int:
        return self.w_out.shape[1]

    def flat(self) -> dict[str, np.ndarray]:
        return {"w_out": self.w_out, "b_out": self.b_out}


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, n_hidden: int, batch: int | None = None) -> "LstmState":
        shape = (n_hidden,) if batch is None else (batch, n_hidden)
        return cls(np.zeros(shape), np.zeros(shape))


def lstm_step(params: LstmParams, state: LstmState, x: np.ndarray) -> LstmState:
    """One gate update; x is (n_input,) or (batch, n_input) matching the state."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_input:
        raise ValueError(f"input size {x.shape[-1]} != n_input {params.n_input}")
    if state.h.shape != state.c.shape or state.h.shape[-1] != params.n_hidden:
        raise ValueError("state shape inconsistent with parameters")
    w, b = params.fused()
    h, c = _step_fused(w, b, params.n_hidden, state.h, state.c, x)
    return LstmState(h, c)


def _step_fused(w, b, n_h, h, c, x):
    z = np.concatenate([h, x], axis=-1)
    a = z @ w.T + b
    gates = _sigmoid(a[..., :3 * n_h])
    f, i, o = gates[..., :n_h], gates[..., n_h:2 * n_h], gates[..., 2 * n_h:]
    g = np.tanh(a[..., 3 * n_h:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def lstm_run(params: LstmParams, init: LstmState, xs: np.ndarray) -> list[LstmState]:
    """Left fold of lstm_step over xs (length T); returns the T visited states."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[0] == 0:
        raise ValueError("empty input sequence")
    w, b = params.fused()
    h, c = init.h, init.c
    states = []
    for t in range(xs.shape[0]):
        h, c = _step_fused(w, b, params.n_hidden, h, c, xs[t])
        states.append(LstmState(h, c))
    return states


def fcl(params: FclParams, features: np.ndarray) -> np.ndarray:
    """Affine map w_out @ features + b_out; features (n_in,) or (batch, n_in)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != params.n_in:
        raise ValueError(f"feature size {features.shape[-1]} != fcl input {params.n_in}")
    return features @ params.w_out.T + params.b_out


# ---------------------------------------------------------------------------
# cached forward / reverse-mode accumulation

class _LstmCache:
    __slots__ = ("z", "gates", "g", "c", "tanh_c", "c_prev")

    def __init__(self, z, gates, g, c, tanh_c, c_prev):
        self.z, self.gates, self.g = z, gates, g
        self.c, self.tanh_c, self.c_prev = c, tanh_c, c_prev


def _forward_cached(params: LstmParams, xs: np.ndarray) -> tuple[np.ndarray, _LstmCache]:
    """Run from the zero state over xs (T, B, n_in); returns hs (T, B, n_h) and cache."""
    w, b = params.fused()
    n_h = params.n_hidden
    t_len, batch = xs.shape[0], xs.shape[1]
    z = np.empty((t_len, batch, n_h + params.n_input))
    gates = np.empty((t_len, batch, 3 * n_h))
    g = np.empty((t_len, batch, n_h))
    c = np.empty_like(g)
    tanh_c = np.empty_like(g)
    c_prev = np.empty_like(g)
    hs = np.empty_like(g)

    z[:, :, n_h:] = xs
    z[0, :, :n_h] = 0.0
    c_t = np.zeros((batch, n_h))
    for t in range(t_len):
        a = z[t] @ w.T
        a += b
        _sigmoid(a[:, :3 * n_h], out=gates[t])
        np.tanh(a[:, 3 * n_h:], out=g[t])
        f_t, i_t, o_t = gates[t, :, :n_h], gates[t, :, n_h:2 * n_h], gates[t, :, 2 * n_h:]
        c_prev[t] = c_t
        c_t = f_t * c_t
        c_t += i_t * g[t]
        c[t] = c_t
        np.tanh(c_t, out=tanh_c[t])
        np.multiply(o_t, tanh_c[t], out=hs[t])
        if t + 1 < t_len:
            z[t + 1, :, :n_h] = hs[t]
    return hs, _LstmCache(z, gates, g, c, tanh_c, c_prev)


def _backward(params: LstmParams, cache: _LstmCache,
              dh_steps: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode pass; dh_steps (T, B, n_h) is the loss gradient on each h_t."""
    w, _ = params.fused()
    n_h = params.n_hidden
    t_len, batch = dh_steps.shape[0], dh_steps.shape[1]
    dw = np.zeros_like(w)
    db = np.zeros(4 * n_h)
    dh_next = np.zeros((batch, n_h))
    dc_next = np.zeros((batch, n_h))
    da = np.empty((batch, 4 * n_h))
    for t in range(t_len - 1, -1, -1):
        f_t = cache.gates[t, :, :n_h]
        i_t = cache.gates[t, :, n_h:2 * n_h]
        o_t = cache.gates[t, :, 2 * n_h:]
        dh = dh_steps[t] + dh_next
        do = dh * cache.tanh_c[t]
        dc = dh * o_t * (1.0 - cache.tanh_c[t] ** 2) + dc_next
        da[:, :n_h] = (dc * cache.c_prev[t]) * (f_t * (1.0 - f_t))
        da[:, n_h:2 * n_h] = (dc * cache.g[t]) * (i_t * (1.0 - i_t))
        da[:, 2 * n_h:3 * n_h] = do * (o_t * (1.0 - o_t))
        da[:, 3 * n_h:] = (dc * i_t) * (1.0 - cache.g[t] ** 2)
        dw += da.T @ cache.z[t]
        db += da.sum(axis=0)
        dz = da @ w
        dh_next = dz[:, :n_h]
        dc_next = dc * f_t
    return {"w_f": dw[:n_h], "w_i": dw[n_h:2 * n_h], "w_o": dw[2 * n_h:3 * n_h],
            "w_c": dw[3 * n_h:], "b_f": db[:n_h], "b_i": db[n_h:2 * n_h],
            "b_o": db[2 * n_h:3 * n_h], "b_c": db[3 * n_h:]}


# ---------------------------------------------------------------------------
# two-direction network used by every equalizer architecture

@dataclass
class NetParams:
    """Two direction-specific LSTMs plus the shared output layer."""

    lstm_fwd: LstmParams
    lstm_bwd: LstmParams
    fcl: FclParams

    def flat(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, part in (("fwd", self.lstm_fwd), ("bwd", self.lstm_bwd), ("fcl", self.fcl)):
            for name, arr in part.flat().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def n_parameters(self) -> int:
        return sum(a.size for a in self.flat().values())


def _net_features(net: NetParams, windows: np.ndarray, mode: str):
    """Forward both LSTMs over a batch of windows (B, T, n_in); returns the FCL
    feature matrix plus the per-direction caches needed for the backward pass."""
    t_len = windows.shape[1]
    if mode == "bi":
        xs_fwd = np.ascontiguousarray(windows.transpose(1, 0, 2))
        xs_bwd = np.ascontiguousarray(windows[:, ::-1].transpose(1, 0, 2))
    elif mode == "co":
        if t_len % 2 != 1:
            raise ValueError("co mode needs an odd window length 2k+1")
        k = (t_len - 1) // 2
        xs_fwd = np.ascontiguousarray(windows[:, :k + 1].transpose(1, 0, 2))
        xs_bwd = np.ascontiguousarray(windows[:, k:][:, ::-1].transpose(1, 0, 2))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    hs_fwd, cache_fwd = _forward_cached(net.lstm_fwd, xs_fwd)
    hs_bwd, cache_bwd = _forward_cached(net.lstm_bwd, xs_bwd)
    batch = windows.shape[0]
    if mode == "bi":
        feats = np.concatenate([hs_fwd.transpose(1, 0, 2).reshape(batch, -1),
                                hs_bwd.transpose(1, 0, 2).reshape(batch, -1)], axis=1)
    else:
        feats = np.concatenate([hs_fwd[-1], hs_bwd[-1]], axis=1)
    return feats, (hs_fwd, cache_fwd), (hs_bwd, cache_bwd)


def bptt_window(net: NetParams, windows: np.ndarray, targets: np.ndarray,
                mode: str) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for a batch of windows, back-propagating through every
    step of the window and no further.

    ``windows`` is (B, T, n_input) or a single (T, n_input) window; ``targets``
    matches with shape (B, n_out) or (n_out,).  The loss is the sum over the
    batch of each window's mean squared output error, so gradients add across
    windows.
    """
    windows = np.asarray(windows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
        targets = targets[None]
    feats, (hs_fwd, cache_fwd), (hs_bwd, cache_bwd) = _net_features(net, windows, mode)
    y = fcl(net.fcl, feats)
    err = y - targets
    loss = float(np.sum(np.mean(err ** 2, axis=-1)))
    if not np.isfinite(loss):
        raise FloatingPointError("training loss diverged to a non-finite value")

    dy = 2.0 * err / err.shape[-1]
    d_wout = dy.T @ feats
    d_bout = dy.sum(axis=0)
    dfeat = dy @ net.fcl.w_out

    n_h = net.lstm_fwd.n_hidden
    t_fwd = hs_fwd.shape[0]
    t_bwd = hs_bwd.shape[0]
    batch = windows.shape[0]
    if mode == "bi":
        dh_fwd = dfeat[:, :t_fwd * n_h].reshape(batch, t_fwd, n_h).transpose(1, 0, 2)
        dh_bwd = dfeat[:, t_fwd * n_h:].reshape(batch, t_bwd, n_h).transpose(1, 0, 2)
    else:
        dh_fwd = np.zeros((t_fwd, batch, n_h))
        dh_bwd = np.zeros((t_bwd, batch, n_h))
        dh_fwd[-1] = dfeat[:, :n_h]
        dh_bwd[-1] = dfeat[:, n_h:]
    grads_fwd = _backward(net.lstm_fwd, cache_fwd, np.ascontiguousarray(dh_fwd))
    grads_bwd = _backward(net.lstm_bwd, cache_bwd, np.ascontiguousarray(dh_bwd))

    grads = {f"fwd.{k}": v for k, v in grads_fwd.items()}
    grads.update({f"bwd.{k}": v for k, v in grads_bwd.items()})
    grads["fcl.w_out"] = d_wout
    grads["fcl.b_out"] = d_bout
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    """Adaptive-moment estimation with bias correction."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(opt: OptimizerState, params, grads: dict[str, np.ndarray]):
    """Apply one update in place; returns (params, opt) for chaining."""
    flat = params.flat() if hasattr(params, "flat") else params
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, p in flat.items():
        g = grads[name]
        m = opt.m.setdefault(name, np.zeros_like(p))
        v = opt.v.setdefault(name, np.zeros_like(p))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params, opt


# ---------------------------------------------------------------------------
# initialization and checkpoints

def init_lstm_params(rng: np.random.Generator, n_input: int, n_hidden: int) -> LstmParams:
    """Uniform +-1/sqrt(fan-in) weights, zero biases, forget bias 1.0."""
    bound = 1.0 / np.sqrt(n_input + n_hidden)
    def w():
        return rng.uniform(-bound, bound, size=(n_hidden, n_hidden + n_input))
    return LstmParams(w_f=w(), w_i=w(), w_c=w(), w_o=w(),
                      b_f=np.ones(n_hidden), b_i=np.zeros(n_hidden),
                      b_c=np.zeros(n_hidden), b_o=np.zeros(n_hidden))


def init_fcl_params(rng: np.random.Generator, n_fcl_in: int, n_out: int = 2) -> FclParams:
    bound = 1.0 / np.sqrt(n_fcl_in)
    return FclParams(w_out=rng.uniform(-bound, bound, size=(n_out, n_fcl_in)),
                     b_out=np.zeros(n_out))


_CKPT_ORDER = ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o", "w_out", "b_out")


def save_checkpoint(path, lstm: LstmParams, out_layer: FclParams) -> None:
    """One unidirectional LSTM plus output layer, float64 LE, fixed array order."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<iiii", lstm.n_input, lstm.n_hidden,
                             out_layer.n_in, out_layer.n_out))
        arrays = {**lstm.flat(), **out_layer.flat()}
        for name in _CKPT_ORDER:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path, expected: tuple[int, int, int, int] | None = None
                    ) -> tuple[LstmParams, FclParams]:
    """Inverse of save_checkpoint; validates magic, sizes, and (optionally) the
    expected (n_input, n_hidden, n_fcl_in, n_out) shape tuple."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError("truncated checkpoint header")
        n_input, n_hidden, n_fcl_in, n_out = struct.unpack("<iiii", header)
        if min(n_input, n_hidden, n_fcl_in, n_out) <= 0:
            raise ValueError("checkpoint header has non-positive dimensions")
        if expected is not None and (n_input, n_hidden, n_fcl_in, n_out) != tuple(expected):
            raise ValueError(
                f"checkpoint dimensions {(n_input, n_hidden, n_fcl_in, n_out)} "
                f"do not match the requested {tuple(expected)}")
        payload = fh.read()
    shapes = {
        "w_f": (n_hidden, n_hidden + n_input), "w_i": (n_hidden, n_hidden + n_input),
        "w_c": (n_hidden, n_hidden + n_input), "w_o": (n_hidden, n_hidden + n_input),
        "b_f": (n_hidden,), "b_i": (n_hidden,), "b_c": (n_hidden,), "b_o": (n_hidden,),
        "w_out": (n_out, n_fcl_in), "b_out": (n_out,),
    }
    expected_bytes = sum(int(np.prod(s)) for s in shapes.values()) * 8
    if len(payload) != expected_bytes:
        raise ValueError(f"checkpoint payload has {len(payload)} bytes, expected {expected_bytes}")
    arrays = {}
    offset = 0
    for name in _CKPT_ORDER:
        count = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count,
                                     offset=offset).reshape(shapes[name]).copy()
        offset += count * 8
    lstm = LstmParams(**{k: arrays[k] for k in _CKPT_ORDER[:8]})
    out_layer = FclParams(w_out=arrays["w_out"], b_out=arrays["b_out"])
    return lstm, out_layer
