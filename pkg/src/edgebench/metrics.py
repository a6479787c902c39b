"""Post-run analysis: per-message latency, packet loss by key join, summary
statistics and the comparison against the sampling prediction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .anonymizer import AnonymizationScheme, predicted_packet_loss
from .cits import MessageKey
from .workload import ReceivedLog, SentLog

SINGLE_TOLERANCE = 2.0
MULTI_TOLERANCE = 8.0


class NoData(ValueError):
    pass


class UndefinedLoss(ValueError):
    pass


@dataclass(frozen=True)
class LatencySample:
    key: MessageKey
    latency_ms: int


def compute_latencies(received: ReceivedLog) -> list[LatencySample]:
    """``receive - origin`` per record, unclamped (clock skew may make it negative)."""
    return [LatencySample(r.key, r.receive_time_ms - r.key.origin_time_ms) for r in received.records]


@dataclass
class LossResult:
    loss_pct: float
    sent_count: int
    received_count: int
    matched: set[MessageKey] = field(repr=False)
    anomalies: list[MessageKey] = field(default_factory=list)
    duplicates: int = 0


def compute_packet_loss(sent: SentLog | Iterable[MessageKey], received: ReceivedLog | Iterable[MessageKey]) -> LossResult:
    """Share of sent keys never seen by a consumer, in percent.

    Duplicate receptions count once. Received keys that were never sent are
    reported as anomalies and left out of the ratio.
    """
    sent_keys = {r.key for r in sent.records} if isinstance(sent, SentLog) else set(sent)
    if not sent_keys:
        raise UndefinedLoss("sent log is empty")
    recv_keys = [r.key for r in received.records] if isinstance(received, ReceivedLog) else list(received)
    matched: set[MessageKey] = set()
    anomalies: list[MessageKey] = []
    duplicates = 0
    for key in recv_keys:
        if key not in sent_keys:
            anomalies.append(key)
        elif key in matched:
            duplicates += 1
        else:
            matched.add(key)
    # one rounding step, so 9 of 10 gives exactly 10.0
    loss = 100 * (len(sent_keys) - len(matched)) / len(sent_keys)
    return LossResult(loss, len(sent_keys), len(matched), matched, anomalies, duplicates)


@dataclass(frozen=True)
class LatencySummary:
    mean: float
    median: float
    sigma: float
    count: int


def summarize(samples: Sequence[LatencySample] | Sequence[float], *, median: str = "average", ddof: int = 0) -> LatencySummary:
    """Mean, median and standard deviation of latencies in ms.

    ``median="average"`` averages the two middle values of an even-sized
    sample, ``"low"`` takes the lower one. ``ddof=0`` gives the population
    deviation, ``ddof=1`` the sample deviation.
    """
    values = np.asarray([s.latency_ms if isinstance(s, LatencySample) else s for s in samples], dtype=float)
    if values.size == 0:
        raise NoData("no latency samples")
    if median == "average":
        mid = float(np.median(values))
    elif median == "low":
        mid = float(np.sort(values)[(values.size - 1) // 2])
    else:
        raise ValueError(f"median must be 'average' or 'low', not {median!r}")
    sigma = float(np.std(values, ddof=ddof)) if values.size > ddof else 0.0
    return LatencySummary(float(np.mean(values)), mid, sigma, int(values.size))


@dataclass
class BenchmarkReport:
    scenario_id: str
    mean_ms: float | None
    median_ms: float | None
    sigma_ms: float | None
    measured_loss_pct: float
    predicted_loss_pct: float
    sent_count: int
    received_count: int
    stage_drop_count: int = 0
    broker_reject_count: int = 0
    sampled_out_count: int = 0
    anomaly_count: int = 0
    duplicate_count: int = 0
    producers: int = 1
    repetition: int | None = None
    flags: list[str] = field(default_factory=list)
    delta_pct: float | None = None
    verdict: str | None = None
    conservation_ok: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(
    scenario_id: str,
    sent: SentLog,
    received: ReceivedLog,
    predicted_loss_pct: float,
    *,
    producers: int = 1,
    median: str = "average",
    ddof: int = 0,
    **counters,
) -> tuple[BenchmarkReport, list[LatencySample]]:
    loss = compute_packet_loss(sent, received)
    samples = [s for s in compute_latencies(received) if s.key in loss.matched]
    flags = []
    if samples:
        stats = summarize(samples, median=median, ddof=ddof)
        mean, mid, sigma = stats.mean, stats.median, stats.sigma
        if any(s.latency_ms < 0 for s in samples):
            flags.append("negative-latency")
    else:
        mean = mid = sigma = None
    if received.timed_out:
        flags.append("timeout")
    report = BenchmarkReport(
        scenario_id,
        mean,
        mid,
        sigma,
        loss.loss_pct,
        predicted_loss_pct,
        loss.sent_count,
        loss.received_count,
        anomaly_count=len(loss.anomalies),
        duplicate_count=loss.duplicates,
        producers=producers,
        flags=flags,
        **counters,
    )
    return report, samples


@dataclass(frozen=True)
class Verdict:
    passed: bool
    measured: float
    predicted: float
    delta: float
    tolerance: float

    def __str__(self) -> str:
        return "PASS" if self.passed else "FAIL"


def compare_to_prediction(
    report: BenchmarkReport,
    scheme: AnonymizationScheme,
    input_rate: float,
    *,
    tolerance: float | None = None,
) -> Verdict:
    """Measured loss against the sampling prediction.

    Default tolerance is 2 points for a single producer and 8 for several,
    where some saturation overhead is expected. Updates the report's
    ``delta_pct`` and ``verdict``.
    """
    predicted = predicted_packet_loss(scheme.sampling_rate_hz, input_rate)
    if tolerance is None:
        tolerance = SINGLE_TOLERANCE if report.producers <= 1 else MULTI_TOLERANCE
    delta = report.measured_loss_pct - predicted
    verdict = Verdict(abs(delta) <= tolerance, report.measured_loss_pct, predicted, delta, tolerance)
    report.predicted_loss_pct = predicted
    report.delta_pct = delta
    report.verdict = str(verdict)
    return verdict


def aggregate(
    scenario_id: str,
    runs: Sequence[tuple[BenchmarkReport, Sequence[LatencySample]]],
    *,
    median: str = "average",
    ddof: int = 0,
) -> BenchmarkReport:
    """Combine repetitions: mean of per-run means; median and sigma over the
    pooled samples; counters summed; loss from pooled counts."""
    if not runs:
        raise NoData("no repetitions to aggregate")
    reports = [r for r, _ in runs]
    pooled = [s for _, samples in runs for s in samples]
    means = [r.mean_ms for r in reports if r.mean_ms is not None]
    if pooled:
        stats = summarize(pooled, median=median, ddof=ddof)
        mid, sigma = stats.median, stats.sigma
    else:
        mid = sigma = None
    sent = sum(r.sent_count for r in reports)
    received = sum(r.received_count for r in reports)
    flags = sorted({f for r in reports for f in r.flags})
    conservation = [r.conservation_ok for r in reports if r.conservation_ok is not None]
    return BenchmarkReport(
        scenario_id,
        float(np.mean(means)) if means else None,
        mid,
        sigma,
        100 * (sent - received) / sent if sent else 0.0,
        reports[0].predicted_loss_pct,
        sent,
        received,
        stage_drop_count=sum(r.stage_drop_count for r in reports),
        broker_reject_count=sum(r.broker_reject_count for r in reports),
        sampled_out_count=sum(r.sampled_out_count for r in reports),
        anomaly_count=sum(r.anomaly_count for r in reports),
        duplicate_count=sum(r.duplicate_count for r in reports),
        producers=reports[0].producers,
        flags=flags,
        conservation_ok=all(conservation) if conservation else None,
    )


def _fmt(value: float | None, digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def format_table(reports: Sequence[BenchmarkReport]) -> str:
    """Plain-text table: latency mean/median/sigma, measured and predicted loss."""
    head = ("Scenario", "Mean (ms)", "Median (ms)", "Sigma (ms)", "Loss (%)", "Predicted (%)", "Delta", "Verdict")
    rows = [head]
    for r in reports:
        label = r.scenario_id if r.repetition is None else f"{r.scenario_id}#{r.repetition}"
        rows.append(
            (
                label,
                _fmt(r.mean_ms),
                _fmt(r.median_ms, 1),
                _fmt(r.sigma_ms),
                _fmt(r.measured_loss_pct),
                _fmt(r.predicted_loss_pct, 0),
                _fmt(r.delta_pct),
                r.verdict or "-",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths))) for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def write_report(path: str | Path, report: BenchmarkReport, repetitions: Sequence[BenchmarkReport] = (), **extra) -> None:
    doc = {"aggregate": report.to_dict(), "repetitions": [r.to_dict() for r in repetitions], **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
