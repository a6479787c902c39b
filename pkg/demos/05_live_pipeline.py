"""
A live run over loopback sockets
================================

The same pipeline with real TCP servers, link shims and wall-clock
producers. Ten seconds of scenario II: one producer at 2 Hz through the
Medium scheme, so half of the messages should be sampled out.
"""

import tempfile
from pathlib import Path

from edgebench.runner import run_scenario
from edgebench.scenarios import canonical

out = Path(tempfile.mkdtemp(prefix="edgebench-"))
result = run_scenario(canonical("II", duration_s=10, repetitions=1), out_dir=out)
rep = result.repetitions[0]
r = result.report
print(f"sent {r.sent_count}, received {r.received_count}, loss {r.measured_loss_pct:.1f}% (predicted {r.predicted_loss_pct:.0f}%)")
print(f"latency mean {r.mean_ms:.1f} ms, median {r.median_ms:.1f} ms, sigma {r.sigma_ms:.1f} ms")
print("stage counters:", rep.stage)
print("conservation:", rep.conservation)
print("logs:", sorted(p.name for p in (out / "II" / "rep0").iterdir()))
