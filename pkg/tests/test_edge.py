import asyncio

import pytest
from hypothesis import given, settings, strategies as st

from edgebench.cits import CitsMessage
from edgebench.edge import BrokerShutdown, EdgeBroker, EdgeClient, EdgeServer, RemoteSubscription, TopicStats


def msg(seq, pid=1):
    return CitsMessage(pid, seq, 1000 + seq, b"x", "t")


def test_fifo_and_reject_newest():
    broker = EdgeBroker(capacity=3)
    sub = broker.subscribe("t")
    assert [broker.publish("t", msg(i)) for i in range(5)] == [True, True, True, False, False]
    assert broker.stats("t") == TopicStats(3, 2, 3)
    assert [m.sequence for m in sub.poll()] == [0, 1, 2]
    assert broker.stats("t").depth == 0
    assert broker.publish("t", msg(5))
    assert [m.sequence for m in sub] == [5]


def test_slowest_subscriber_holds_the_queue():
    broker = EdgeBroker(capacity=2)
    fast, slow = broker.subscribe("t"), broker.subscribe("t")
    broker.publish("t", msg(0))
    broker.publish("t", msg(1))
    fast.poll()
    assert not broker.publish("t", msg(2))
    assert [m.sequence for m in slow.poll(1)] == [0]
    assert broker.publish("t", msg(3))
    assert [m.sequence for m in slow.poll()] == [1, 3]
    assert [m.sequence for m in fast.poll()] == [3]
    slow.close()
    assert slow.closed


def test_unknown_topic_stats_and_external_provider():
    broker = EdgeBroker()
    assert broker.stats("nothing") == TopicStats()
    broker.register_stats("t.stage", lambda: TopicStats(4, 1, 0))
    assert broker.stats("t.stage").accepted == 4


def test_closed_broker_refuses():
    broker = EdgeBroker()
    sub = broker.subscribe("t")
    broker.close()
    assert sub.closed
    with pytest.raises(BrokerShutdown):
        broker.publish("t", msg(0))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 20), st.lists(st.sampled_from(["pub", "poll", "poll1"]), max_size=200))
def test_conservation_under_random_schedules(capacity, ops):
    broker = EdgeBroker(capacity)
    sub = broker.subscribe("t")
    published = delivered = rejected = 0
    seen = []
    for i, op in enumerate(ops):
        if op == "pub":
            published += 1
            if not broker.publish("t", msg(i)):
                rejected += 1
        else:
            got = sub.poll(1 if op == "poll1" else None)
            delivered += len(got)
            seen.extend(m.sequence for m in got)
        assert broker.stats("t").depth <= capacity
    stats = broker.stats("t")
    assert published == delivered + rejected + stats.depth
    assert stats.accepted == stats.delivered + stats.depth
    assert seen == sorted(seen)


def test_server_round_trip(arun):
    async def main():
        async with EdgeServer(EdgeBroker(capacity=2), port=0) as server:
            sub = await RemoteSubscription(server.address, "t").open()
            client = EdgeClient(server.address)
            results = [await client.publish("t", msg(i)) for i in range(3)]
            got = [await asyncio.wait_for(sub.__anext__(), 2) for _ in range(2)]
            assert [m.sequence for m in got] == [0, 1]
            assert (await client.stats("t")).accepted == sum(results)
            assert [m.sequence async for m in _take(sub, 1)] == [2]
            await client.close()
            server.broker.close()
            assert [m async for m in sub] == []
            assert sub.shutdown_notice

    arun(main())


async def _take(sub, n):
    for _ in range(n):
        yield await asyncio.wait_for(sub.__anext__(), 2)
