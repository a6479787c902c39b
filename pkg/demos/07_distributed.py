"""
Services as separate processes
==============================

``--distributed`` starts the cloud log and the MEC node (edge broker plus
anonymizer) as their own ``edgebench serve`` processes. They talk the same
wire protocol as the in-process run.
"""

from edgebench.runner import run_scenario
from edgebench.scenarios import canonical

result = run_scenario(canonical("I", duration_s=10, repetitions=1, distributed=True))
r = result.report
print(f"loss {r.measured_loss_pct:.1f}% (predicted {r.predicted_loss_pct:.0f}%), verdict {r.verdict}")
print("stage counters read over STATS:", result.repetitions[0].stage)
