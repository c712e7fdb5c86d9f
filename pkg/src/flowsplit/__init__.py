"""Short/long TCP flow splitter and a two-tunnel network simulator to evaluate it."""

from .splitter import (
    HAVE_NATIVE, LONG, LONG_MARK, SHORT, SHORT_MARK, FiveTuple, FlowClass, FlowRecord,
    FlowTable, MalformedHeader, PacketHeader, PyFlowTable, build_header, checksum_ok,
    classify_only, evict_idle, ipv4_checksum, process_packet, set_tos,
)
from .netsim import Packet, RoutingPolicy, Simulator, TunnelState, Trace, simulate
from .workload import BackgroundLoad, FlowKind, FlowSpec, QueryMix, Workload
from .metrics import FlowStats, RunReport, compute_fct, compute_jitter, histogram, speedup
from .experiment import ConfigError, ExperimentConfig, run_experiment, run_pair, sweep

__version__ = "0.1.0"
