"""Walk one TCP flow through the splitter and watch its mark flip at the threshold."""

import numpy as np

from flowsplit import splitter as sp

# One TCP flow and one UDP flow between the same pair of hosts.
tcp = sp.FiveTuple(0x0A000001, 0x0A640001, 40000, 443, sp.IPPROTO_TCP)
udp = tcp._replace(protocol=sp.IPPROTO_UDP)
header = sp.build_header(tcp)
print("fresh header      ", header.hex(), "checksum ok:", sp.checksum_ok(header))

table = sp.FlowTable(threshold=40)
classes = []
for k in range(45):
    cls, out = sp.process_packet(table, header, k, tcp.src_port, tcp.dst_port)
    classes.append(cls)
print("first long packet  #%d" % (classes.index(sp.LONG) + 1))
print("re-marked header  ", out.hex(), "tos=0x%02x" % out[1], "checksum ok:", sp.checksum_ok(out))

# The incremental update agrees with a full recompute.
print("incremental == recompute:", int.from_bytes(out[10:12], "big") == sp.ipv4_checksum(out))

# UDP rides through untouched and never enters the table.
u = sp.build_header(udp)
print("udp untouched:", sp.process_packet(table, u, 50, udp.src_port, udp.dst_port)[1] is u,
      " table size:", len(table))

# Idle eviction: 30 s is kept, 30 s + 1 µs is gone and the flow restarts short.
print("evicted at +30 s:      ", sp.evict_idle(table, 44 + 30_000_000))
print("evicted at +30 s + 1us:", sp.evict_idle(table, 44 + 30_000_001))
print("next packet:", sp.process_packet(table, header, 44 + 30_000_002, tcp.src_port, 443)[0].name)

# The batch classifier used by the fast engine gives the same counts.
flow = np.zeros(45, dtype=np.int64)
counts, is_long = sp.classify_batch(flow, np.arange(45), np.ones(45, bool), 40)
print("batch first long packet #%d" % (np.argmax(is_long) + 1))
