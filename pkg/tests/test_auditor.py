import json
import random
from dataclasses import replace
from fractions import Fraction

import pytest

from pitslog.agent import LogEntry, NodeAgent
from pitslog.auditor import (
    CONTRADICTS,
    CORROBORATES,
    audit_device,
    load_snapshot,
    rebuild_tree,
    snapshot_epochs,
)
from pitslog.errors import NoPublishedRoot, SnapshotUnreadable
from pitslog.notary import Notary, local_client
from pitslog.params import TreeParams

# wide parity words so a single changed node is always caught in these tests
P = TreeParams(size_ts=8, depth_p=3, size_p=32, depth_u=2, epoch_duration=20, ticks_per_second=10)


class Clock:
    t = 0

    def __call__(self):
        return self.t


@pytest.fixture
def world():
    clock = Clock()
    notary = Notary(P, clock=clock, grace_seconds=5, auto_register=True, rng=random.Random(3))
    client = local_client(notary)
    m = NodeAgent("m", P, client, rng=random.Random(4))
    peer = NodeAgent("peer", P, client, rng=random.Random(5))
    shared = []
    for i in range(40):
        e = m.log_event(b"event %d" % i, 4 * i + 2)
        if i % 10 == 3:
            m.share_event(e, peer)
            shared.append(e)
    m.flush()
    m.tick(200)
    clock.t = 20
    notary.tick()
    for e in shared:
        peer.obtain_receipt("m", e)
    return notary, client, m, peer, shared


def epoch0(m):
    return [e for e in m.store.entries(P) if P.epoch_of(e.ts) == 0]


def test_clean_snapshot(world):
    _, client, m, peer, _ = world
    res = audit_device(client, "m", 0, epoch0(m), peer.receipts.items())
    assert res.clean and res.root_match and res.windows == []
    assert res.snapshot_logs == 41  # 40 events and the chain-start log
    assert [c.verdict for c in res.receipt_checks] == [CORROBORATES] * 4


def test_deleted_log_localized_to_its_window(world):
    _, client, m, peer, shared = world
    victim = shared[1]
    entries = [e for e in epoch0(m) if e != victim]
    res = audit_device(client, "m", 0, entries, peer.receipts.items())
    assert not res.root_match and not res.clean
    [w] = res.windows
    assert w.contains(Fraction(victim.ts, P.ticks_per_second))
    assert w.end - w.start == Fraction(20, 8)
    assert w.receipt_ticks == (victim.ts,)
    verdicts = {c.log_digest: c.verdict for c in res.receipt_checks}
    assert verdicts[victim.digest] == CONTRADICTS
    assert json.loads(json.dumps(res.to_json()))["windows"][0]["receipt_ticks"] == [victim.ts]


def test_modified_and_inserted_logs(world):
    _, client, m, _, _ = world
    entries = epoch0(m)
    target = entries[20]
    forged = [LogEntry.create(b"nothing happened", target.ts, P) if e == target else e for e in entries]
    forged.append(LogEntry.create(b"backdated", 195, P))
    res = audit_device(client, "m", 0, forged)
    assert {w.index for w in res.windows} == {P.subepoch_of(P.address(target.ts)[1]), 7}


def test_wiped_epoch_flags_all_occupied_windows(world):
    _, client, _, _, _ = world
    res = audit_device(client, "m", 0, [])
    # logs stop at 15.8 s, so the last window was empty and stays unflagged
    assert [w.index for w in res.windows] == list(range(7)) and res.snapshot_logs == 0


def test_forged_receipt_is_excluded(world):
    _, client, m, peer, _ = world
    [(dev, r)] = list(peer.receipts.items())[:1]
    bogus = replace(r, log_digest=bytes(32))
    res = audit_device(client, "m", 0, epoch0(m), [(dev, bogus), (dev, r)])
    assert res.invalid_receipts == 1 and len(res.receipt_checks) == 1 and res.clean


def test_receipts_for_other_devices_ignored(world):
    _, client, m, peer, _ = world
    res = audit_device(client, "m", 0, epoch0(m), [("other", r) for _, r in peer.receipts.items()])
    assert res.receipt_checks == []


def test_no_published_root(world):
    _, client, m, _, _ = world
    with pytest.raises(NoPublishedRoot):
        audit_device(client, "m", 1, [])


def test_snapshot_loading(tmp_path, world):
    _, client, m, _, _ = world
    path = tmp_path / "snap.jsonl"
    m.store.snapshot(path)
    entries = load_snapshot(path, P)
    assert snapshot_epochs(entries, P) == [0, 1]
    assert rebuild_tree(entries, P, 0).root == client.get_root("m", 0)
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    with pytest.raises(SnapshotUnreadable):
        load_snapshot(tmp_path / "bad.jsonl", P)
    with pytest.raises(SnapshotUnreadable):
        load_snapshot(tmp_path / "missing.jsonl", P)
