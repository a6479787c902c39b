"""
Calibrating the emulated 5G links
=================================

The default profiles put 7.5 ms of base delay plus up to 9.5 ms of jitter
on each direction, so a ping crossing both spans 15 to 34 ms. Bandwidth is
capped at 100 Mbit/s up and 152 Mbit/s down.
"""

import numpy as np

from edgebench.netem import bulk_transfer, default_profiles, echo_probe

links = default_profiles(seed=42)
echo = echo_probe(links["uplink_5g"], links["downlink_5g"])
rtts = np.array(echo.rtts_ms)
print(f"{rtts.size} probes: mean {rtts.mean():.2f} ms, min {rtts.min():.2f}, max {rtts.max():.2f}")

hist, edges = np.histogram(rtts, bins=np.arange(14, 36, 2))
for count, lo in zip(hist, edges):
    print(f"{lo:4.0f} ms {'#' * (count // 5)}")

for name in ("uplink_5g", "downlink_5g", "wan"):
    print(f"{name:12s} {bulk_transfer(links[name], 50_000_000):7.2f} Mbit/s  ({links[name].note})")
