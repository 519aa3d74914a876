"""Adversary scenarios run end to end against an in-process notary.

Every scenario wires one or more devices and one interacting peer to a local
notary through a simulated link, replays randomly timed events over a few
epochs, lets the adversary act, and finally audits every device snapshot.
All randomness is drawn from ``random.Random(seed)``, so an outcome is a pure
function of the scenario.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from ..agent import CHAIN_START, LogEntry, NodeAgent
from ..auditor import CONTRADICTS, audit_device, rebuild_tree
from ..chain import Boundary
from ..errors import BranchNotFinal, UnknownLog
from ..notary import CHAIN_MISMATCH, TRUNCATION, LocalTransport, Notary, NotaryAPI, NotaryClient
from ..params import HARNESS_DEFAULT, TreeParams
from ..parity import compare_parity, finalize_tree
from ..tree import PitsTree
from .transport import FaultModel, SimTransport

BASE_EPOCH = 28_000_000  # roughly 2023 for one-minute epochs

POST_HOC = ("modify", "delete", "insert", "multi-subepoch-obfuscate", "wipe")
FORWARD = ("pre-submission-tamper", "truncate")
BENIGN = ("honest", "offline")
ACTIONS = BENIGN + POST_HOC + FORWARD


@dataclass
class Scenario:
    name: str
    action: str = "honest"
    devices: int = 1
    logs_per_epoch: int = 120  # mean; the count per epoch is drawn around it
    epochs: int = 2
    target_epoch: int = 0  # index into the simulated epochs
    count: int = 1  # logs (or sub-epochs for obfuscation) touched by the adversary
    batch_mean: int = 8
    share_fraction: float = 0.1
    grace_seconds: float = 10.0
    drop: float = 0.0
    duplicate: float = 0.0
    reorder: float = 0.0
    partitions: list[tuple[float, float]] = field(default_factory=list)  # seconds after start
    params: TreeParams = HARNESS_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}; expected one of {', '.join(ACTIONS)}")
        if not 0 <= self.target_epoch < self.epochs:
            raise ValueError("target_epoch outside the simulated epochs")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        d["partitions"] = [list(p) for p in self.partitions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if "params" in d:
            d["params"] = TreeParams.from_dict({**HARNESS_DEFAULT.to_dict(), **d["params"]})
        if "partitions" in d:
            d["partitions"] = [tuple(p) for p in d["partitions"]]
        return cls(**d)


PRESETS = {
    "honest": Scenario("honest"),
    "offline": Scenario(
        "offline", action="offline", drop=0.1, duplicate=0.1, reorder=0.1, partitions=[(45.0, 75.0)], grace_seconds=60
    ),
    "modify": Scenario("modify", action="modify"),
    "delete": Scenario("delete", action="delete"),
    "insert": Scenario("insert", action="insert"),
    "pre-submission-tamper": Scenario("pre-submission-tamper", action="pre-submission-tamper"),
    "truncate": Scenario("truncate", action="truncate"),
    "multi-subepoch-obfuscate": Scenario("multi-subepoch-obfuscate", action="multi-subepoch-obfuscate", count=8),
    "wipe": Scenario("wipe", action="wipe"),
}


def load_scenario(spec: str, seed: int | None = None) -> Scenario:
    """A preset name or the path of a JSON file holding Scenario fields."""
    if spec in PRESETS:
        s = PRESETS[spec]
    else:
        s = Scenario.from_dict(json.loads(Path(spec).read_text()))
    return s if seed is None else replace(s, seed=seed)


@dataclass
class ScenarioOutcome:
    name: str
    action: str
    seed: int
    detected: bool
    correct: bool
    root_mismatches: int
    localized_windows: list[tuple[str, int, int]]  # (device, epoch, sub-epoch)
    expected_windows: list[tuple[str, int, int]]
    false_windows: list[tuple[str, int, int]]
    missed_windows: list[tuple[str, int, int]]
    inconsistency_kinds: list[str]
    receipts_stored: int
    receipts_contradicting: int
    receipts_unknown: int
    logs: int
    transport: dict

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("localized_windows", "expected_windows", "false_windows", "missed_windows"):
            d[k] = [list(w) for w in d[k]]
        return d


class _Sim:
    def __init__(self, s: Scenario):
        self.s = s
        self.p = p = s.params
        self.rng = random.Random(s.seed)
        self.now = p.epoch_start(BASE_EPOCH)
        self.t0 = self.now
        tps = p.ticks_per_second
        self.notary = Notary(
            p,
            clock=lambda: Fraction(self.now, tps),
            grace_seconds=s.grace_seconds,
            rng=random.Random(self.rng.getrandbits(64)),
        )
        self.api = NotaryAPI(self.notary)
        self.client = NotaryClient(LocalTransport(self.api))  # reliable: auditor and peer
        faults = FaultModel(
            s.drop,
            s.duplicate,
            s.reorder,
            [(self.t0 + int(a * tps), self.t0 + int(b * tps)) for a, b in s.partitions],
        )
        self.links: dict[str, SimTransport] = {}
        self.agents: dict[str, NodeAgent] = {}
        for i in range(s.devices):
            name = f"dev{i}"
            self.notary.register_device(name)
            link = SimTransport(LocalTransport(self.api), random.Random(self.rng.getrandbits(64)), faults, lambda: self.now)
            self.links[name] = link
            self.agents[name] = NodeAgent(name, p, NotaryClient(link), rng=random.Random(self.rng.getrandbits(64)))
        self.peer = NodeAgent("peer", p, self.client)
        self.shared: list[tuple[str, LogEntry]] = []
        self.receipts_unknown = 0
        self.silenced: set[tuple[str, int]] = set()  # (device, epoch) the adversary stopped
        self.withhold_next_boundary = False

    # event generation

    def _events(self):
        s, p, rng = self.s, self.p, self.rng
        events = []
        for e in range(s.epochs):
            start = p.epoch_start(BASE_EPOCH + e)
            for name in self.agents:
                n = max(2, round(rng.gauss(s.logs_per_epoch, s.logs_per_epoch**0.5)))
                for _ in range(n):
                    events.append((rng.randrange(start, start + p.epoch_ticks), name))
        events.sort()
        out = []
        for i, (tick, name) in enumerate(events):
            out.append((tick, name, f"{name} event {i} v={rng.getrandbits(32):08x}".encode()))
        return out

    # adversary acting on a live device

    def _compromise(self, agent: NodeAgent) -> None:
        epoch = agent.chain.epoch
        open_entries = [(si, ei) for si, seg in enumerate(agent.segments) if seg.epoch == epoch for ei in range(len(seg.entries))]
        if self.s.action == "pre-submission-tamper":
            picks = self.rng.sample(open_entries, min(self.s.count, len(open_entries)))
            records = agent.store.records()
            digests = [LogEntry.create(c, ts, self.p).digest for ts, c in records]
            for si, ei in picks:
                offset, digest = agent.segments[si].entries[ei]
                ri = digests.index(digest)
                ts, content = records[ri]
                forged = LogEntry.create(content + b" [altered]", ts, self.p)
                records[ri] = (ts, forged.content)
                digests[ri] = forged.digest
                agent.segments[si].entries[ei] = (offset, forged.digest)
            agent.store.rewrite(records)
        else:  # truncate: suppress every unsent log of this epoch, then go quiet
            dropped = {d for si, ei in open_entries for d in [agent.segments[si].entries[ei][1]]}
            agent.segments = [seg for seg in agent.segments if seg.epoch != epoch]
            records = [(ts, c) for ts, c in agent.store.records() if LogEntry.create(c, ts, self.p).digest not in dropped]
            agent.store.rewrite(records)
            self.silenced.add((agent.device, epoch))
            self.withhold_next_boundary = self.rng.random() < 0.5

    def _after_roll(self, agent: NodeAgent) -> None:
        if self.withhold_next_boundary:
            for i, seg in enumerate(agent.segments):
                if seg.boundary is not None and seg.seq is None:
                    agent.segments[i] = replace(seg, boundary=Boundary(None, seg.boundary.h0))
            self.withhold_next_boundary = False

    # adversary acting on a stored snapshot after the fact

    def _post_hoc(self, agent: NodeAgent, epoch: int) -> None:
        s, p, rng = self.s, self.p, self.rng
        records = agent.store.records()
        in_epoch = [i for i, (ts, c) in enumerate(records) if p.epoch_of(ts) == epoch and c != CHAIN_START]
        if s.action == "modify":
            for i in rng.sample(in_epoch, min(s.count, len(in_epoch))):
                ts, c = records[i]
                records[i] = (ts, c + b" [altered]")
        elif s.action == "delete":
            drop = set(rng.sample(in_epoch, min(s.count, len(in_epoch))))
            records = [r for i, r in enumerate(records) if i not in drop]
        elif s.action == "insert":
            start = p.epoch_start(epoch)
            for k in range(s.count):
                records.append((rng.randrange(start, start + p.epoch_ticks), f"fabricated {k}".encode()))
            records.sort(key=lambda r: r[0])
        elif s.action == "multi-subepoch-obfuscate":
            by_sub: dict[int, list[int]] = {}
            for i in in_epoch:
                by_sub.setdefault(p.subepoch_of(p.address(records[i][0])[1]), []).append(i)
            for sub in rng.sample(sorted(by_sub), min(s.count, len(by_sub))):
                i = rng.choice(by_sub[sub])
                ts, c = records[i]
                records[i] = (ts, c + b" [altered]")
        elif s.action == "wipe":
            records = [r for r in records if p.epoch_of(r[0]) != epoch]
        agent.store.rewrite(records)

    # main loop

    def _peer_receipts(self, final: bool) -> None:
        for device, entry in self.shared:
            if self.peer.receipts.get(device, self.p.epoch_of(entry.ts), entry.digest) is not None:
                continue
            key = (device, self.p.epoch_of(entry.ts), entry.digest)
            if key in self.peer.pending:
                continue
            try:
                self.peer.obtain_receipt(device, entry)
            except (UnknownLog, BranchNotFinal):
                if final:
                    self.receipts_unknown += 1
        if final:
            self.peer.complete_pending()

    def _roll_all(self, tick: int) -> None:
        self.now = tick
        for agent in self.agents.values():
            if agent.chain is not None and self.p.epoch_of(tick) > agent.chain.epoch:
                agent._roll_epoch(self.p.epoch_of(tick), tick)
                if agent.device == "dev0":
                    self._after_roll(agent)
            agent.flush()
        self.notary.tick()

    def run(self) -> ScenarioOutcome:
        s, p, rng = self.s, self.p, self.rng
        events = self._events()
        target = BASE_EPOCH + s.target_epoch
        victim = "dev0"
        victim_events = [i for i, ev in enumerate(events) if ev[1] == victim and p.epoch_of(ev[0]) == target]
        strike = victim_events[rng.randrange(1, len(victim_events))] if s.action in FORWARD else None
        flush_in = {name: rng.randint(1, 2 * s.batch_mean) for name in self.agents}
        epoch_ends = [p.epoch_start(BASE_EPOCH + e + 1) for e in range(s.epochs)]
        next_end = 0

        for i, (tick, name, content) in enumerate(events):
            while next_end < len(epoch_ends) and tick >= epoch_ends[next_end]:
                self._roll_all(epoch_ends[next_end] + 1)
                self._peer_receipts(final=False)
                next_end += 1
            self.now = tick
            agent = self.agents[name]
            if (name, p.epoch_of(tick)) in self.silenced:
                continue
            entry = agent.log_event(content, tick)
            if rng.random() < s.share_fraction:
                self.peer.receive(name, entry.ts, entry.content)
                self.shared.append((name, entry))
            if i == strike:
                self._compromise(agent)
                continue
            flush_in[name] -= 1
            if flush_in[name] <= 0:
                agent.flush()
                flush_in[name] = rng.randint(1, 2 * s.batch_mean)
            if i % 16 == 0:
                self.notary.tick()

        while next_end < len(epoch_ends):
            self._roll_all(epoch_ends[next_end] + 1)
            self._peer_receipts(final=False)
            next_end += 1
        last_end = epoch_ends[-1]
        horizon = max([last_end] + [self.t0 + int(b * p.ticks_per_second) for _, b in s.partitions])
        self._roll_all(horizon + p.ticks_per_second)
        # devices keep retrying within the grace period until their queues drain
        for attempt in range(100):
            if not any(a.segments for a in self.agents.values()):
                break
            self.now += p.ticks_per_second // 10 or 1
            for a in self.agents.values():
                a.flush()
        for link in self.links.values():
            link.release()
        self.now = horizon + int((s.grace_seconds + 1) * p.ticks_per_second)
        self.notary.tick()
        self._peer_receipts(final=True)
        return self._audit()

    def _audit(self) -> ScenarioOutcome:
        s, p = self.s, self.p
        target = BASE_EPOCH + s.target_epoch
        victim = self.agents["dev0"]
        honest_entries = {name: a.store.entries(p) for name, a in self.agents.items()}
        if s.action in POST_HOC:
            self._post_hoc(victim, target)
        localized, expected, kinds = set(), set(), set()
        root_mismatches = contradicting = 0
        receipts = list(self.peer.receipts.items())
        for name, agent in self.agents.items():
            entries = agent.store.entries(p)
            for e in range(s.epochs):
                epoch = BASE_EPOCH + e
                res = audit_device(self.client, name, epoch, entries, receipts)
                root_mismatches += not res.root_match
                localized |= {(name, epoch, w.index) for w in res.windows}
                kinds |= {r.kind for r in res.inconsistencies}
                contradicting += sum(c.verdict == CONTRADICTS for c in res.receipt_checks)
                before = rebuild_tree(honest_entries[name], p, epoch).level_hashes(p.depth_p)
                after = rebuild_tree(entries, p, epoch).level_hashes(p.depth_p)
                expected |= {(name, epoch, i) for i, (a, b) in enumerate(zip(before, after)) if a != b}
        detected = bool(root_mismatches or kinds or contradicting)
        false_windows = sorted(localized - expected)
        if s.action in BENIGN:
            correct = not detected and not localized
        elif s.action in POST_HOC:
            correct = detected and not false_windows
        elif s.action == "pre-submission-tamper":
            correct = CHAIN_MISMATCH in kinds
        else:
            correct = bool({TRUNCATION, CHAIN_MISMATCH} & kinds)
        stats = {k: sum(link.stats[k] for link in self.links.values()) for k in next(iter(self.links.values())).stats}
        return ScenarioOutcome(
            name=s.name,
            action=s.action,
            seed=s.seed,
            detected=detected,
            correct=correct,
            root_mismatches=root_mismatches,
            localized_windows=sorted(localized),
            expected_windows=sorted(expected),
            false_windows=false_windows,
            missed_windows=sorted(expected - localized),
            inconsistency_kinds=sorted(kinds),
            receipts_stored=len(self.peer.receipts),
            receipts_contradicting=contradicting,
            receipts_unknown=self.receipts_unknown,
            logs=sum(len(v) for v in honest_entries.values()),
            transport=stats,
        )


def run_scenario(s: Scenario) -> ScenarioOutcome:
    return _Sim(s).run()


def sweep(s: Scenario, seeds) -> list[ScenarioOutcome]:
    return [run_scenario(replace(s, seed=seed)) for seed in seeds]


# fast Monte-Carlo of single-log tampering, without the agent and transport layers


@dataclass
class DetectionStats:
    size_p: int
    trials: int
    misses: int  # tampered sub-epoch not flagged
    false_windows: int  # flagged sub-epochs that were not tampered
    logs: int
    mode: str

    @property
    def miss_rate(self) -> float:
        return self.misses / self.trials

    @property
    def expected_rate(self) -> float:
        return 2.0**-self.size_p

    @property
    def sigma(self) -> float:
        q = self.expected_rate
        return (q * (1 - q) / self.trials) ** 0.5

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(miss_rate=self.miss_rate, expected_rate=self.expected_rate, sigma=self.sigma)
        return d


def detection_trials(
    size_p: int,
    trials: int,
    seed: int = 0,
    logs: int = 32,
    params: TreeParams = HARNESS_DEFAULT,
    mode: str = "modify",
) -> DetectionStats:
    """Tamper with one log per trial and check whether its sub-epoch is flagged.

    Each trial builds a fresh tree with a fresh parity secret, so misses are
    independent with probability ``2**-size_p``.
    """
    if mode not in ("modify", "delete"):
        raise ValueError("mode must be 'modify' or 'delete'")
    p = replace(params, size_p=size_p)
    rng = random.Random(seed)
    dsize = p.digest_size
    width = 1 << p.size_ts
    misses = false = 0
    for _ in range(trials):
        entries = [(rng.randrange(width), rng.randbytes(dsize)) for _ in range(logs)]
        tree = PitsTree(p)
        tree.add_logs(entries)
        record = finalize_tree(tree, rng)
        k = rng.randrange(len(entries))
        ts = entries[k][0]
        forged = entries[:k] + entries[k + 1 :]
        if mode == "modify":
            forged.append((ts, rng.randbytes(dsize)))
        tampered = PitsTree(p)
        tampered.add_logs(forged)
        flagged = compare_parity(record, tampered.level_hashes(p.depth_p), p)
        truth = p.subepoch_of(ts)
        misses += truth not in flagged
        false += sum(1 for i in flagged if i != truth)
    return DetectionStats(size_p, trials, misses, false, logs, mode)

