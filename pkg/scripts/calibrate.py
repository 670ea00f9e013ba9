"""Desk-scale calibration: Q2 vs launch power for cdc/dbp, plus timing."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from fiberlab import *  # noqa
from fiberlab.pipeline import generate_transmit, receive_linear
from fiberlab.config import desk_scale_config, stream_seed
from fiberlab.channel import propagate_link
from dataclasses import replace

nf = float(sys.argv[1]) if len(sys.argv) > 1 else 5.0
n_train, n_test = 20_000, 200_000

cfg0 = desk_scale_config()
cfg0 = replace(cfg0, link=replace(cfg0.link, noise_figure_db=nf))
cmap = gray_16qam()

for p in (-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0):
    cfg = cfg0.with_launch_power(p)
    t0 = time.time()
    cmap, bits, tx, w_tx, pulse = generate_transmit(cfg)
    link = cfg.link.build()
    w_rx = propagate_link(w_tx, link, rng_seed=stream_seed(cfg.seed, "channel-noise"))
    t_fwd = time.time() - t0
    row = [f"P={p:+.1f} fwd={t_fwd:5.1f}s"]
    k = cfg.equalizer.k
    lo, hi = n_train, n_train + n_test - k
    tb = bits[4 * lo:4 * hi]
    for name, kind, steps in (("cdc", "cdc", None), ("dbp1", "dbp", 1), ("dbp3", "dbp", 3)):
        rx = receive_linear(w_rx, link, pulse, cfg, kind, steps, tx, n_train)
        m = measure(rx.symbols[lo:hi], tb, cmap)
        q2 = f"{m.q2_db:5.2f}" if np.isfinite(m.q2_db) else "  inf"
        row.append(f"{name}: BER={m.ber:.2e} Q2={q2}")
    print("  ".join(row), flush=True)
