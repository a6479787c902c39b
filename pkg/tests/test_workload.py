import asyncio

import pytest
from hypothesis import given, strategies as st

from edgebench.cits import MessageKey
from edgebench.cloud import CloudBroker, CloudServer, RegistryEntry
from edgebench.edge import EdgeBroker, EdgeServer
from edgebench.workload import (
    ProducerConfig,
    ReceivedLog,
    ReceivedRecord,
    SentLog,
    SentRecord,
    StartupError,
    message_count,
    read_received_csv,
    read_sent_csv,
    run_consumer,
    run_producer,
    write_received_csv,
    write_sent_csv,
)


def test_message_count():
    assert message_count(2.0, 60) == 120
    assert message_count(2.0, 0.75) == 2
    assert message_count(0.3, 10) == 3


def test_producer_config():
    cfg = ProducerConfig(3, rate_hz=4, duration_s=2, seed=9, payload_bytes=100)
    assert cfg.count == 8
    assert cfg.offset_ms(3) == 750.0
    m = cfg.make_message(2, 1234, "t")
    assert (m.producer_id, m.sequence, m.origin_time_ms, len(m.payload)) == (3, 2, 1234, 100)
    assert m == cfg.make_message(2, 1234, "t")
    with pytest.raises(ValueError):
        ProducerConfig(1, rate_hz=0)


keys = st.builds(MessageKey, st.integers(0, 2**32 - 2), st.integers(0, 2**63), st.integers(0, 2**63))


@given(st.lists(keys, max_size=20), st.lists(st.tuples(keys, st.integers(-(2**40), 2**63)), max_size=20))
def test_csv_round_trip(tmp_path_factory, sent_keys, recv):
    d = tmp_path_factory.mktemp("csv")
    sent = SentLog([SentRecord(k) for k in sent_keys])
    received = ReceivedLog([ReceivedRecord(k, t) for k, t in recv])
    write_sent_csv(d / "s.csv", sent)
    write_received_csv(d / "r.csv", received)
    assert [r.key for r in read_sent_csv(d / "s.csv").records] == sent_keys
    assert read_received_csv(d / "r.csv").records == received.records


def test_csv_header(tmp_path):
    write_sent_csv(tmp_path / "s.csv", SentLog([SentRecord(MessageKey(1, 2, 3))]))
    assert (tmp_path / "s.csv").read_text() == "producer_id,sequence,origin_time_ms\n1,3,2\n"


def test_map_ids():
    log = ReceivedLog([ReceivedRecord(MessageKey(10, 1, 0), 5)], saw_sentinel=True)
    mapped = log.map_ids(lambda p: p - 9)
    assert mapped.records[0].key == MessageKey(1, 1, 0)
    assert mapped.saw_sentinel


def test_producer_and_consumer_end_to_end(arun):
    async def main():
        cloud = CloudServer(CloudBroker(), port=0)
        edge = EdgeServer(EdgeBroker(), port=0)
        await cloud.start()
        await edge.start()
        cloud.broker.advertised_address = cloud.address
        cloud.broker.register_mec(RegistryEntry("m", edge.address, "cloud/m/cits"))
        # relay the edge topic into the cloud log by hand
        sub = edge.broker.subscribe("m/cits")
        cfg = ProducerConfig(1, rate_hz=50, duration_s=0.2, mec_id="m", payload_bytes=32)
        sent = await run_producer(cfg, cloud.address)
        for msg in sub.poll():
            cloud.broker.append("cloud/m/cits", msg)
        from edgebench.cits import sentinel

        cloud.broker.append("cloud/m/cits", sentinel("m/cits"))
        received = await run_consumer("m", "cits", cloud.address, poll_interval_ms=5)
        assert [r.status for r in sent.records] == ["accepted"] * 10
        assert [r.key for r in received.records] == [r.key for r in sent.records]
        assert received.saw_sentinel and not received.timed_out
        await edge.stop()
        await cloud.stop()

    arun(main())


def test_startup_errors(arun):
    async def main():
        async with CloudServer(CloudBroker(), port=0) as cloud:
            with pytest.raises(StartupError):
                await run_producer(ProducerConfig(1, duration_s=0.5), cloud.address)
            with pytest.raises(StartupError):
                await run_consumer("nope", "cits", cloud.address)
        with pytest.raises(StartupError):
            await run_producer(ProducerConfig(1, duration_s=0.5), "127.0.0.1:1", timeout=0.5)

    arun(main())


def test_consumer_idle_timeout(arun):
    async def main():
        broker = CloudBroker([RegistryEntry("m", "x:1", "cloud/m/cits")])
        async with CloudServer(broker, port=0) as cloud:
            broker.advertised_address = cloud.address
            log = await run_consumer("m", "cits", cloud.address, idle_timeout_s=0.2)
            assert log.timed_out and not log.saw_sentinel

    arun(main())
