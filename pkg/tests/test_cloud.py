import pytest

from edgebench.cits import CitsMessage
from edgebench.cloud import (
    AppendRejected,
    CloudBroker,
    CloudClient,
    CloudServer,
    MecNotFound,
    NoMecRegistered,
    OffsetOutOfRange,
    PartitionLog,
    RegistryEntry,
    TopicNotFound,
    cloud_topic_name,
    read_journal,
)


def msg(seq):
    return CitsMessage(1, seq, seq * 500, b"p" * seq, "mec-1/cits")


def test_offsets_are_contiguous():
    log = PartitionLog("t")
    assert [log.append(msg(i)) for i in range(5)] == [0, 1, 2, 3, 4]
    assert [o for o, _ in log.fetch(2, 10)] == [2, 3, 4]
    assert log.fetch(5, 10) == []
    assert log.fetch(0, 0) == []
    with pytest.raises(OffsetOutOfRange):
        log.fetch(6, 1)


def test_bounded_log_rejects():
    log = PartitionLog("t", max_records=2)
    log.append(msg(0))
    log.append(msg(1))
    with pytest.raises(AppendRejected):
        log.append(msg(2))
    assert log.rejected == 1


def test_registry_resolution():
    broker = CloudBroker()
    with pytest.raises(NoMecRegistered):
        broker.resolve_producer()
    broker.register_mec(RegistryEntry("a", "h:1", cloud_topic_name("a", "cits")))
    assert broker.resolve_producer().mec_id == "a"
    broker.register_mec(RegistryEntry("b", "h:2", cloud_topic_name("b", "cits")))
    assert {broker.resolve_producer().mec_id for _ in range(4)} == {"a", "b"}
    assert broker.resolve_producer("b").broker_address == "h:2"
    with pytest.raises(MecNotFound):
        broker.resolve_producer("zz")
    with pytest.raises(TopicNotFound):
        broker.fetch("cloud/a/cits", 0, 1)
    topic, _ = broker.resolve_consumer("a", "cits")
    assert topic == "cloud/a/cits"
    assert broker.fetch(topic, 0, 1) == []


def test_journal_replay(tmp_path):
    broker = CloudBroker(journal_dir=tmp_path)
    for i in range(4):
        broker.append("cloud/m/cits", msg(i))
    broker.close()
    (path,) = tmp_path.iterdir()
    assert list(read_journal(path)) == [msg(i) for i in range(4)]


def test_server_round_trip(arun):
    async def main():
        broker = CloudBroker(max_records=3)
        async with CloudServer(broker, port=0) as server:
            broker.advertised_address = server.address
            client = CloudClient(server.address)
            await client.register_mec(RegistryEntry("m", "edge:1", "cloud/m/cits"))
            entry = await client.resolve_producer()
            assert entry == RegistryEntry("m", "edge:1", "cloud/m/cits")
            topic, address = await client.resolve_consumer("m", "cits")
            assert address == server.address
            assert [await client.append(topic, msg(i)) for i in range(3)] == [0, 1, 2]
            with pytest.raises(AppendRejected):
                await client.append(topic, msg(3))
            got = await client.fetch(topic, 1, 10)
            assert got == [(1, msg(1)), (2, msg(2))]
            with pytest.raises(OffsetOutOfRange):
                await client.fetch(topic, 9, 1)
            with pytest.raises(MecNotFound):
                await client.resolve_consumer("zz", "cits")
            with pytest.raises(TopicNotFound):
                await client.fetch("cloud/none/cits", 0, 1)
            await client.close()

    arun(main())
