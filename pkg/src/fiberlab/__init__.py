"""Desk-scale laboratory for fiber-nonlinearity mitigation in coherent links.

Simulate 16-QAM transmission over a multi-span nonlinear fiber, equalize with
CDC / DBP / LSTM schemes, and account for their computational complexity.
"""

from .channel import (AmplifierSpec, FiberSpanSpec, LinkSpec, amplify, propagate_link,
                      propagate_span, set_launch_power, uniform_link)
from .compensation import DbpSpec, cdc, dbp
from .complexity import (AuditError, ComplexityReport, CountingConvention, OpCounter,
                         audit, c_l, cdc_rmpb, dbp_rmpb, rmpb)
from .config import ExperimentConfig, desk_scale_config, load_config, stream_seed
from .equalizer import (EqualizedOutput, EqualizerSpec, TrainingConfig, TrainingReport,
                        equalize, equalize_bi, equalize_co_simplified,
                        equalize_co_standard, feature_window, init_net, load_net,
                        partition_blocks, save_net, train)
from .lstm import (FclParams, LstmParams, LstmState, NetParams, OptimizerState,
                   bptt_window, fcl, init_fcl_params, init_lstm_params, load_checkpoint,
                   lstm_run, lstm_step, optimizer_step, save_checkpoint)
from .signal import (ConstellationMap, MetricsReport, SymbolSequence, ber_from_q2,
                     evm_percent, gray_16qam, hard_decide, map_bits, measure,
                     q2_from_ber)
from .waveform import (AliasingError, PulseShapeSpec, SampledWaveform, matched_filter,
                       read_waveform, resample, rrc_taps, shape, write_waveform)

__version__ = "0.1.0"
