"""A back-to-back flow on an idle tunnel: the simulator against n*12 + 1000 µs."""

from flowsplit import netsim, splitter as sp
from flowsplit.workload import FlowSpec, assemble

tup = sp.FiveTuple(0x0A000001, 0x0A640001, 40000, 443, sp.IPPROTO_TCP)

for n in (1, 5, 100, 1000):
    w = assemble([FlowSpec(0, tup, n, 0, burst_size=n)])
    # per-flow hashing keeps the whole flow on one tunnel
    tr = netsim.simulate(w, netsim.RoutingPolicy.ECMP_PER_FLOW, 10**11).trace
    fct_us = (tr.t_dest.max() - tr.t_egress.min()) / 1000
    print(f"n={n:>5}  simulated {fct_us:>8.0f} µs   closed form {n * 12 + 1000:>8} µs")

# Same flow under the splitter: from packet 40 on it takes the other tunnel.
w = assemble([FlowSpec(0, tup, 100, 0, burst_size=100)])
tr = netsim.simulate(w, netsim.RoutingPolicy.SPLITTER_TOS, 10**11).trace
print("splitter, 100 packets: tunnel counts", [int((tr.tunnel == k).sum()) for k in (0, 1)],
      " FCT", (tr.t_dest.max() - tr.t_egress.min()) / 1000, "µs")
