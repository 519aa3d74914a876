import random

import pytest

from oracles import chain_fold, dense_root
from pitslog.agent import CHAIN_START, LogEntry, LogStore, NodeAgent, ReceiptStore, log_digest
from pitslog.errors import ClockRegression, TransportError, VerificationFailed
from pitslog.notary import LocalTransport, Notary, NotaryAPI, NotaryClient
from pitslog.params import TreeParams
from pitslog.tree import verify_receipt

P = TreeParams(size_ts=8, depth_p=3, size_p=8, depth_u=2, epoch_duration=20, ticks_per_second=10)


class Clock:
    def __init__(self):
        self.t = 0

    def __call__(self):
        return self.t


class Switch(LocalTransport):
    """Local transport that can be unplugged."""

    def __init__(self, api):
        super().__init__(api)
        self.down = False

    def call(self, op, body):
        if self.down:
            raise TransportError("unplugged")
        return super().call(op, body)


@pytest.fixture
def world():
    clock = Clock()
    notary = Notary(P, clock=clock, grace_seconds=5, auto_register=True, rng=random.Random(0))
    link = Switch(NotaryAPI(notary))
    return clock, notary, NotaryClient(link), link


def agent(client, name="m", **kw):
    return NodeAgent(name, P, client, rng=random.Random(name), **kw)


def test_digest_binds_timestamp():
    assert log_digest(b"x", 1, P) != log_digest(b"x", 2, P)
    assert log_digest(b"x", 1, P) == P.hash(b"x" + (1).to_bytes(8, "big"))
    e = LogEntry.create(b"x", 25, P)
    assert e.address(P) == P.address(25)


def test_chain_follows_every_log():
    a = NodeAgent("m", P, rng=random.Random(1))
    entries = [a.log_event(f"e{i}".encode(), i) for i in range(1, 8)]
    h0 = a.segments[0].boundary.h0
    digests = [LogEntry.create(CHAIN_START, 1, P).digest] + [e.digest for e in entries]
    assert a.chain.current == chain_fold(h0, digests)
    assert a.segments[0].boundary.h_ep is None
    assert a.queue_len() == 8


def test_honest_device_epoch_matches_oracle(world):
    clock, notary, client, _ = world
    a = agent(client, flush_on_boundary=False)
    for i in range(30):
        a.log_event(b"reading %d" % i, 5 * i + 1)
    acks = a.flush()
    assert [k.status for k in acks] == ["accepted"] and not acks[0].flagged
    clock.t = 21
    a.tick(210)  # reveals the closing chain value
    notary.tick()
    expected = [e.address(P)[1:] + (e.digest,) for e in a.store.entries(P) if e.ts < 200]
    assert notary.get_root("m", 0) == dense_root(expected, P.size_ts)
    assert notary.get_inconsistencies("m") == []


def test_empty_queue_flush_is_noop(world):
    _, _, client, _ = world
    a = agent(client)
    assert a.flush() == []
    assert NodeAgent("m", P).flush() == []  # no notary configured


def test_offline_device_keeps_queue_and_catches_up(world):
    clock, notary, client, link = world
    a = agent(client)
    link.down = True
    for i in range(10):
        a.log_event(b"e%d" % i, 10 * i + 5)
    a.log_event(b"next epoch", 205)
    assert a.flush() == [] and a.queue_len() == 13
    before = a.overhead_bytes()
    assert before > 13 * (8 + 32)
    link.down = False
    acks = a.flush()
    assert all(k.status == "accepted" for k in acks) and a.queue_len() == 0
    assert a.overhead_bytes() == 32  # only the chain value is left
    clock.t = 21
    assert [s.epoch for s in notary.tick()] == [0]
    assert notary.get_inconsistencies("m") == []


def test_overhead_accounting():
    a = NodeAgent("m", P, rng=random.Random(0))
    assert a.overhead_bytes() == 0
    a.log_event(b"x", 1)
    # chain value + one segment (chain value) + seed + two queued pairs
    assert a.overhead_bytes() == 32 + 32 + 32 + 2 * 40


def test_clock_regression():
    a = NodeAgent("m", P, skew_budget=1.0)
    a.log_event(b"a", 100)
    a.log_event(b"b", 95)  # within one second of skew
    with pytest.raises(ClockRegression):
        a.log_event(b"c", 80)
    b = NodeAgent("m", P, skew_budget=100.0)
    b.log_event(b"a", 205)
    with pytest.raises(ClockRegression):
        b.log_event(b"b", 195)  # within skew, but the chain already moved on


def test_state_survives_restart(world, tmp_path):
    clock, notary, client, link = world
    state, logs = tmp_path / "state.json", tmp_path / "logs.jsonl"
    link.down = True
    a = agent(client, state_path=state, store=LogStore(logs))
    a.log_event(b"one", 3)
    a.log_event(b"two", 4)
    a.flush()
    chain = a.chain.current
    link.down = False
    b = agent(client, state_path=state, store=LogStore(logs))
    assert b.chain.current == chain and b.queue_len() == 3 and len(b.store) == 3
    b.log_event(b"three", 6)
    # the failed send sealed the first segment, so the new log travels separately
    assert [(k.seq, k.status) for k in b.flush()] == [(0, "accepted"), (1, "accepted")]
    assert notary.get_inconsistencies("m") == []


def test_segment_sequence_is_stable_across_retries(world):
    _, notary, client, link = world
    a = agent(client, flush_on_boundary=False)
    a.log_event(b"x", 1)
    a.flush()
    a.log_event(b"y", 2)
    link.down = True
    a.flush()
    a.flush()
    assert a.segments[0].seq == 1  # sealed on the first attempt
    a.log_event(b"z", 3)
    assert [s.seq for s in a.segments] == [1, None]
    link.down = False
    assert [k.seq for k in a.flush()] == [1, 2]
    assert notary.get_inconsistencies("m") == []


def test_log_store_encodings(tmp_path):
    s = LogStore(tmp_path / "l.jsonl")
    s.append(LogEntry.create(b"text", 1, P))
    s.append(LogEntry.create(b"\xff\x00", 2, P))
    assert LogStore(tmp_path / "l.jsonl").records() == [(1, b"text"), (2, b"\xff\x00")]
    s.rewrite([(1, b"text")])
    assert len(LogStore(tmp_path / "l.jsonl")) == 1
    s.snapshot(tmp_path / "snap.jsonl")
    assert LogStore(tmp_path / "snap.jsonl").records() == [(1, b"text")]


def setup_pair(world):
    clock, notary, client, _ = world
    m = agent(client, "m")
    i = agent(client, "i")
    return clock, notary, m, i


def test_bilateral_receipt_after_close(world):
    clock, notary, m, i = setup_pair(world)
    e = m.log_event(b"handshake", 12)
    m.share_event(e, i)
    m.flush()
    clock.t = 26
    notary.tick()
    got = i.obtain_receipt("m", i.inbox[("m", e.digest)])
    assert verify_receipt(got, notary.get_root("m", 0), P)
    assert i.receipts.get("m", 0, e.digest) == got and len(i.receipts) == 1


def test_partial_receipt_completed_later(world):
    clock, notary, m, i = setup_pair(world)
    e = m.log_event(b"early", 3)
    m.share_event(e, i)
    m.flush()
    clock.t = 6  # first branch closed, epoch still open
    assert i.obtain_receipt("m", e) is None and len(i.pending) == 1
    assert i.complete_pending() == []
    clock.t = 26
    notary.tick()
    [r] = i.complete_pending()
    assert not r.is_partial and verify_receipt(r, notary.get_root("m", 0), P)
    assert i.pending == {}


def test_receipt_for_different_content_is_rejected(world):
    clock, notary, m, i = setup_pair(world)
    e = m.log_event(b"genuine", 12)
    m.flush()
    clock.t = 26
    notary.tick()
    real = notary.get_receipt("m", 0, e.digest, e.address(P)[1])

    class Liar:
        def get_receipt(self, *a):
            return real

        def get_root(self, *a):
            return notary.get_root("m", 0)

    i.client = Liar()
    with pytest.raises(VerificationFailed):
        i.obtain_receipt("m", LogEntry.create(b"claimed", 12, P))
    assert len(i.receipts) == 0


def test_receipt_store_persists(tmp_path, world):
    clock, notary, m, _ = setup_pair(world)
    e = m.log_event(b"x", 12)
    m.flush()
    clock.t = 26
    notary.tick()
    r = notary.get_receipt("m", 0, e.digest, e.address(P)[1])
    ReceiptStore(tmp_path).put("m", r)
    again = ReceiptStore(tmp_path)
    assert again.get("m", 0, e.digest) == r and list(again.items()) == [("m", r)]
