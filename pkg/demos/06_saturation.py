"""
When ten producers saturate the anonymizer
==========================================

With default resources the stage keeps up and the measured loss equals
the sampling prediction. Shrink the emulated CPU and RAM and the bounded
stage queue starts dropping on top of the sampling.
"""

import numpy as np

from edgebench.runner import simulate_repetition
from edgebench.scenarios import canonical

for per_cpu in (500.0, 2.0, 1.0, 0.5):
    scn = canonical("VI", sim_time=True, per_cpu_rate=per_cpu, queue_per_gb=2)
    rep = simulate_repetition(scn)
    lat = np.array([s.latency_ms for s in rep.samples])
    r = rep.report
    print(
        f"cap {scn.anonymization.rate_cap(per_cpu):6.0f} msg/s: loss {r.measured_loss_pct:5.1f}% "
        f"(excess {r.measured_loss_pct - r.predicted_loss_pct:+5.1f}), stage drops {rep.stage.stage_drops:4d}, "
        f"p95 latency {np.percentile(lat, 95):7.1f} ms"
    )
