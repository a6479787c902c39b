"""Acceptance gate: one test per criterion, each at its stated tolerance.

The live scenarios (criteria 2 to 4) run 60 s x 3 repetitions with the
default link profiles, all six concurrently, so this module takes a little
over three minutes.
"""

import asyncio
import contextlib
import random
import time

import pytest
from hypothesis import given, settings

import test_anonymizer as props
from conftest import ACCEPTANCE
from edgebench.anonymizer import predicted_packet_loss
from edgebench.cits import MessageKey
from edgebench.metrics import compute_packet_loss
from edgebench.netem import LinkProfile, bulk_transfer, default_profiles, echo_probe
from edgebench.runner import run_scenario, run_scenario_async, run_suite, simulate_repetition
from edgebench.scenarios import CANONICAL, Settings, canonical
from oracles import brute_force_loss

LIVE = ("I", "II", "III", "V", "VI", "VII")


@contextlib.contextmanager
def criterion(n, title):
    """Record PASS/FAIL for criterion ``n``; ``detail`` may be filled in."""
    detail = []
    t0 = time.monotonic()
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[n] = f"[FAIL] {n:2d}. {title}: {'; '.join(detail)} ({type(exc).__name__}: {exc})"
        raise
    note = "; ".join(detail)
    ACCEPTANCE[n] = f"[PASS] {n:2d}. {title}: {note} ({time.monotonic() - t0:.1f} s)"


@pytest.fixture(scope="module")
def live_results():
    async def main():
        scenarios = [canonical(sid, duration_s=60, repetitions=3) for sid in LIVE]
        results = await asyncio.gather(*(run_scenario_async(s) for s in scenarios))
        return dict(zip(LIVE, results))

    return asyncio.run(main())


def test_1_predicted_loss_table():
    with criterion(1, "predicted loss reproduces the scheme table") as d:
        t0 = time.monotonic()
        got = [predicted_packet_loss(sr, 2.0) for sr in (0.2, 1.0, float("inf"))]
        d.append(f"{got}")
        assert got == [90.0, 50.0, 0.0]
        assert time.monotonic() - t0 < 1.0


def test_2_scenario_I_loss(live_results):
    with criterion(2, "scenario I live loss = 90 +/- 2") as d:
        r = live_results["I"].report
        d.append(f"measured {r.measured_loss_pct:.2f}% over {r.sent_count} msgs, mean latency {r.mean_ms:.1f} ms")
        assert abs(r.measured_loss_pct - 90.0) <= 2.0


def test_3_scenario_II_III_loss(live_results):
    with criterion(3, "scenario II live loss = 50 +/- 2, scenario III <= 2") as d:
        ii, iii = live_results["II"].report, live_results["III"].report
        d.append(f"II {ii.measured_loss_pct:.2f}% (mean {ii.mean_ms:.1f} ms)")
        d.append(f"III {iii.measured_loss_pct:.2f}% (mean {iii.mean_ms:.1f} ms)")
        assert abs(ii.measured_loss_pct - 50.0) <= 2.0
        assert iii.measured_loss_pct <= 2.0


def test_4_multi_producer_overhead(live_results):
    with criterion(4, "10-producer loss >= single-producer prediction") as d:
        ok = True
        for sid, sr in (("V", 0.2), ("VI", 1.0), ("VII", float("inf"))):
            r = live_results[sid].report
            predicted = predicted_packet_loss(sr, 2.0)
            excess = r.measured_loss_pct - predicted
            d.append(f"{sid} {r.measured_loss_pct:.2f}% (excess {excess:+.2f})")
            ok &= excess >= 0
        assert ok


def test_5_latency_plumbing():
    with criterion(5, "sim latency mean in [D, D + p + 2]") as d:
        t0 = time.monotonic()
        up, wan, down, p = 12.0, 6.0, 9.0, 10.0
        links = {
            "uplink_5g": LinkProfile(up, 0.0, 100.0),
            "wan": LinkProfile(wan, 0.0, 1000.0),
            "downlink_5g": LinkProfile(down, 0.0, 152.0),
        }
        D = up + wan + down
        for sid in CANONICAL:
            rep = simulate_repetition(canonical(sid, sim_time=True, links=links, poll_interval_ms=p))
            d.append(f"{sid} {rep.report.mean_ms:.2f}")
            assert D <= rep.report.mean_ms <= D + p + 2
        d.insert(0, f"D={D:g} p={p:g}")
        assert time.monotonic() - t0 < 30


def test_6_rtt_calibration():
    with criterion(6, "5G echo RTT mean 25 +/- 2 ms, range within [15, 34]") as d:
        links = default_profiles(42)
        echo = echo_probe(links["uplink_5g"], links["downlink_5g"])
        d.append(f"mean {echo.mean:.2f} min {echo.min:.2f} max {echo.max:.2f} over {len(echo.rtts_ms)} probes")
        assert abs(echo.mean - 25.0) <= 2.0
        assert 15.0 <= echo.min and echo.max <= 34.0


def test_7_bandwidth_calibration():
    with criterion(7, "bulk transfer sustains the uplink/downlink caps (+/- 5%)") as d:
        links = default_profiles(42)
        for name, cap in (("uplink_5g", 100.0), ("downlink_5g", 152.0)):
            rate = bulk_transfer(links[name], 50_000_000)
            d.append(f"{name} {rate:.2f} Mbit/s")
            assert rate <= cap * 1.05
            assert rate >= cap * 0.95


def test_8_loss_oracle_equivalence():
    with criterion(8, "compute_packet_loss == brute-force join on 100 traces") as d:
        t0 = time.monotonic()
        rng = random.Random(8)
        for _ in range(100):
            sent = [MessageKey(1 + i % 10, 10_000 + 50 * i, i // 10) for i in range(500)]
            keep = rng.random()
            received = [k for k in sent if rng.random() < keep]
            rng.shuffle(received)
            assert compute_packet_loss(sent, received).loss_pct == brute_force_loss(sent, received)
        d.append("100/100 exact")
        assert time.monotonic() - t0 < 10


def test_9_conservation(live_results, tmp_path):
    with criterion(9, "published = delivered + rejected + in-flight on every run") as d:
        reps = [rep for res in live_results.values() for rep in res.repetitions]
        sim = run_suite(Settings(sim_time=True), tmp_path)
        reps += [rep for res in sim.results for rep in res.repetitions]
        bad = [(rep.report.scenario_id, rep.report.repetition) for rep in reps if not rep.conservation.ok]
        d.append(f"{len(reps) - len(bad)}/{len(reps)} repetitions balanced")
        for rep in reps:
            c = rep.conservation
            if not c.unknown:
                assert c.published == c.delivered + c.rejected + c.in_flight
        assert not bad


def test_10_determinism(tmp_path):
    with criterion(10, "two sim suite runs with seed 42 are byte-identical") as d:
        run_suite(Settings(sim_time=True, seed=42), tmp_path / "a")
        run_suite(Settings(sim_time=True, seed=42), tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        same = sum((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
        d.append(f"{same}/{len(files)} files identical")
        assert same == len(files) and files


def test_11_anonymizer_properties():
    bulk = settings(max_examples=10_000, deadline=None)
    with criterion(11, "anonymizer properties at 10^4 cases each") as d:
        for name, check, cases in (
            ("window count bound", props.check_window_bound, props.window_cases),
            ("pseudonym stability/injectivity", props.check_pseudonyms, props.pseudonym_cases),
            ("per-producer order", props.check_stage_order, props.stage_cases),
        ):
            bulk(given(*cases)(check))()
            d.append(name)
