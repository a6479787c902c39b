"""
Window sampling and the predicted loss
======================================

The anonymizer forwards one message per window of width 1/S_r. For a
producer emitting F_data messages per second the expected share dropped is
(1 - S_r / F_data) * 100.
"""

import numpy as np

from edgebench.anonymizer import SCHEMES, Sampler, predicted_packet_loss
from edgebench.cits import CitsMessage

rate = 2.0
for name in ("small", "medium", "large"):
    scheme = SCHEMES[name]
    print(f"{scheme.name:7s} S_r={scheme.sampling_rate_hz:<4g} predicted loss {predicted_packet_loss(scheme.sampling_rate_hz, rate):5.1f}%")

# feed one minute of 2 Hz traffic, with a little arrival jitter, through each gate
rng = np.random.default_rng(0)
arrivals = np.arange(120) * 500.0 + rng.uniform(7.5, 17.0, 120)
for name in ("small", "medium", "large"):
    sampler = Sampler(SCHEMES[name])
    kept = sum(len(sampler.offer(CitsMessage(1, k, int(t)), t)) for k, t in enumerate(arrivals))
    print(f"{name:7s} kept {kept:3d}/120 -> measured loss {100 * (120 - kept) / 120:5.1f}%")

# the prediction as a curve over input rates
rates = np.linspace(0.5, 10, 6)
print("F_data:", rates)
print("Small :", np.round([predicted_packet_loss(0.2, f) for f in rates], 1))
print("Medium:", np.round([predicted_packet_loss(1.0, f) for f in rates], 1))
