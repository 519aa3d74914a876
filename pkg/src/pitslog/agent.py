"""Client side: the monitored device and the interacting peer.

A :class:`NodeAgent` plays both roles.  As a monitored device it writes logs
to a local line-delimited store, folds every digest into the forward chain,
queues ``(offset, digest)`` pairs and flushes them to the notary in batches.
As an interacting peer it accepts full logs shared by other devices and
collects verified receipts for them.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .chain import Boundary, ChainState, LogBatch
from .errors import (
    ClockRegression,
    EpochFinalized,
    TransportError,
    UnknownEpoch,
    UpdateInconsistent,
    VerificationFailed,
)
from .notary.wire import NotaryClient, receipt_from_json, receipt_to_json
from .params import TreeParams
from .tree import Receipt, finalize_receipt, verify_receipt

log = logging.getLogger(__name__)

CHAIN_START = b"chain-start"


def log_digest(content: bytes, ts: int, params: TreeParams) -> bytes:
    """Digest of a log: ``H(content || ts as 8-byte big-endian)``."""
    return params.hash(content + ts.to_bytes(8, "big"))


@dataclass(frozen=True)
class LogEntry:
    ts: int  # absolute ticks
    content: bytes
    digest: bytes

    @classmethod
    def create(cls, content: bytes, ts: int, params: TreeParams) -> "LogEntry":
        return cls(ts, content, log_digest(content, ts, params))

    def address(self, params: TreeParams) -> tuple[int, int]:
        return params.address(self.ts)


def encode_record(ts: int, content: bytes) -> dict:
    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError:
        return {"ts": ts, "enc": "b64", "content": base64.b64encode(content).decode()}
    return {"ts": ts, "enc": "utf8", "content": text}


def decode_record(rec: dict) -> tuple[int, bytes]:
    enc = rec.get("enc", "utf8")
    if enc == "utf8":
        return int(rec["ts"]), rec["content"].encode("utf-8")
    if enc == "b64":
        return int(rec["ts"]), base64.b64decode(rec["content"])
    raise ValueError(f"unknown content encoding {enc!r}")


class LogStore:
    """Append-only local log store; one JSON record ``{ts, enc, content}`` per line.

    Without a path the store lives in memory (used by the simulator).
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._lines: list[dict] = []
        if self.path is not None and self.path.exists():
            self._lines = [json.loads(x) for x in self.path.read_text().splitlines() if x.strip()]

    def append(self, entry: LogEntry) -> None:
        rec = encode_record(entry.ts, entry.content)
        self._lines.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")

    def records(self) -> list[tuple[int, bytes]]:
        return [decode_record(r) for r in self._lines]

    def entries(self, params: TreeParams) -> list[LogEntry]:
        return [LogEntry.create(c, ts, params) for ts, c in self.records()]

    def rewrite(self, records: Iterable[tuple[int, bytes]]) -> None:
        """Replace the whole store (what an adversary with device access can do)."""
        self._lines = [encode_record(ts, c) for ts, c in records]
        if self.path is not None:
            self.path.write_text("".join(json.dumps(r) + "\n" for r in self._lines))

    def snapshot(self, path: str | os.PathLike) -> None:
        Path(path).write_text("".join(json.dumps(r) + "\n" for r in self._lines))

    def __len__(self) -> int:
        return len(self._lines)


@dataclass
class Segment:
    """Queued entries of one epoch.  ``seq`` is assigned when first sent and
    never changes afterwards, so a retry resends an identical batch."""

    epoch: int
    entries: list[tuple[int, bytes]]
    chain_value: bytes
    boundary: Boundary | None = None
    seq: int | None = None

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "entries": [[ts, d.hex()] for ts, d in self.entries],
            "chain_value": self.chain_value.hex(),
            "boundary": None
            if self.boundary is None
            else {"h_ep": self.boundary.h_ep.hex() if self.boundary.h_ep else None, "h0": self.boundary.h0.hex()},
            "seq": self.seq,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Segment":
        b = d.get("boundary")
        boundary = None
        if b is not None:
            boundary = Boundary(bytes.fromhex(b["h_ep"]) if b.get("h_ep") else None, bytes.fromhex(b["h0"]))
        return cls(
            int(d["epoch"]),
            [(int(ts), bytes.fromhex(h)) for ts, h in d["entries"]],
            bytes.fromhex(d["chain_value"]),
            boundary,
            d.get("seq"),
        )


class ReceiptStore:
    """Verified receipts keyed by (peer device, epoch, log digest)."""

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._receipts: dict[tuple[str, int, bytes], Receipt] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for p in sorted(self.directory.glob("*.json")):
                d = json.loads(p.read_text())
                r = receipt_from_json(d["receipt"])
                self._receipts[(d["device"], r.epoch, r.log_digest)] = r

    def put(self, device: str, receipt: Receipt) -> None:
        self._receipts[(device, receipt.epoch, receipt.log_digest)] = receipt
        if self.directory is not None:
            name = f"{device}-{receipt.epoch}-{receipt.log_digest.hex()[:16]}.json"
            (self.directory / name).write_text(json.dumps({"device": device, "receipt": receipt_to_json(receipt)}))

    def get(self, device: str, epoch: int, digest: bytes) -> Receipt | None:
        return self._receipts.get((device, epoch, digest))

    def items(self) -> Iterator[tuple[str, Receipt]]:
        for (device, _, _), r in sorted(self._receipts.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            yield device, r

    def __len__(self) -> int:
        return len(self._receipts)


@dataclass
class NodeAgent:
    device: str
    params: TreeParams
    client: NotaryClient | None = None
    store: LogStore = field(default_factory=LogStore)
    receipts: ReceiptStore = field(default_factory=ReceiptStore)
    state_path: Path | None = None
    skew_budget: float = 2.0  # seconds
    rng: object = None  # source of h0; must provide randbytes(n) when set
    flush_on_boundary: bool = True

    def __post_init__(self):
        self.chain: ChainState | None = None
        self.segments: list[Segment] = []
        self.next_seq: dict[int, int] = {}
        self.last_ts: int | None = None
        self.inbox: dict[tuple[str, bytes], LogEntry] = {}
        self.pending: dict[tuple[str, int, bytes], Receipt] = {}
        if self.state_path is not None:
            self.state_path = Path(self.state_path)
            if self.state_path.exists():
                self._load_state()

    # persistence of the chain value and unsent queue (written before sending)

    def _save_state(self) -> None:
        if self.state_path is None:
            return
        state = {
            "device": self.device,
            "chain": None
            if self.chain is None
            else {"epoch": self.chain.epoch, "current": self.chain.current.hex(), "counter": self.chain.counter},
            "segments": [s.to_json() for s in self.segments],
            "next_seq": {str(k): v for k, v in self.next_seq.items()},
            "last_ts": self.last_ts,
        }
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state))
        os.replace(tmp, self.state_path)

    def _load_state(self) -> None:
        state = json.loads(self.state_path.read_text())
        c = state.get("chain")
        if c is not None:
            self.chain = ChainState(int(c["epoch"]), bytes.fromhex(c["current"]), int(c["counter"]))
        self.segments = [Segment.from_json(s) for s in state.get("segments", [])]
        self.next_seq = {int(k): int(v) for k, v in state.get("next_seq", {}).items()}
        self.last_ts = state.get("last_ts")

    # monitored-device role

    def _fresh_seed(self) -> bytes:
        n = self.params.digest_size
        return self.rng.randbytes(n) if self.rng is not None else secrets.token_bytes(n)

    def _open_segment(self, epoch: int) -> Segment:
        if self.segments and self.segments[-1].epoch == epoch and self.segments[-1].seq is None:
            return self.segments[-1]
        seg = Segment(epoch, [], self.chain.current)
        self.segments.append(seg)
        return seg

    def _append(self, entry: LogEntry) -> None:
        epoch, offset = entry.address(self.params)
        self.store.append(entry)
        self.chain.extend(entry.digest, self.params.hash)
        seg = self._open_segment(epoch)
        seg.entries.append((offset, entry.digest))
        seg.chain_value = self.chain.current

    def _roll_epoch(self, epoch: int, now: int) -> None:
        h_ep = self.chain.current if self.chain is not None else None
        h0 = self._fresh_seed()
        self.chain = ChainState(epoch, h0)
        self.segments.append(Segment(epoch, [], h0, Boundary(h_ep, h0)))
        self.next_seq.setdefault(epoch, 0)
        self._append(LogEntry.create(CHAIN_START, now, self.params))

    def log_event(self, content: bytes, now: int) -> LogEntry:
        """Record an event at absolute tick ``now``."""
        skew = int(self.skew_budget * self.params.ticks_per_second)
        if self.last_ts is not None and now < self.last_ts - skew:
            raise ClockRegression(f"clock at {now} is more than {self.skew_budget}s behind {self.last_ts}")
        epoch = self.params.epoch_of(now)
        rolled = False
        if self.chain is None or epoch > self.chain.epoch:
            self._roll_epoch(epoch, now)
            rolled = True
        elif epoch < self.chain.epoch:
            raise ClockRegression(f"tick {now} falls into epoch {epoch}, chain already at {self.chain.epoch}")
        entry = LogEntry.create(content, now, self.params)
        self._append(entry)
        self.last_ts = now if self.last_ts is None else max(self.last_ts, now)
        self._save_state()
        if rolled and self.flush_on_boundary and self.client is not None:
            self.flush()
        return entry

    def tick(self, now: int) -> list:
        """Roll the chain over when ``now`` has left the current epoch, then flush.

        Without this an idle device would only reveal its closing chain value
        with its next log, possibly after the notary's grace period.
        """
        if self.chain is not None and self.params.epoch_of(now) > self.chain.epoch:
            self._roll_epoch(self.params.epoch_of(now), now)
            self.last_ts = max(self.last_ts or now, now)
            self._save_state()
        return self.flush()

    def flush(self) -> list:
        """Send queued segments in order.  Returns the acks; empty when deferred."""
        acks = []
        if self.client is None:
            return acks
        while self.segments:
            seg = self.segments[0]
            if seg.seq is None:
                seg.seq = self.next_seq.get(seg.epoch, 0)
                self.next_seq[seg.epoch] = seg.seq + 1
                self._save_state()
            batch = LogBatch(self.device, seg.epoch, seg.seq, tuple(seg.entries), seg.chain_value, seg.boundary)
            try:
                acks.append(self.client.submit_batch(batch))
            except TransportError:
                log.info("notary unreachable; %d segments stay queued", len(self.segments))
                break
            except EpochFinalized:
                log.warning("epoch %d closed before batch %d was delivered", seg.epoch, seg.seq)
            self.segments.pop(0)
            self._save_state()
        for epoch in [e for e in self.next_seq if self.chain and e < self.chain.epoch]:
            if not any(s.epoch == epoch for s in self.segments):
                del self.next_seq[epoch]
        self._save_state()
        return acks

    def queue_len(self) -> int:
        return sum(len(s.entries) for s in self.segments)

    def overhead_bytes(self) -> int:
        """Bytes held beyond the logs: the chain value plus the unsent queue."""
        dsize = self.params.digest_size
        total = dsize if self.chain is not None else 0
        for s in self.segments:
            total += len(s.entries) * (8 + dsize) + dsize
            if s.boundary is not None:
                total += dsize * (2 if s.boundary.h_ep is not None else 1)
        return total

    def share_event(self, entry: LogEntry, peer: "NodeAgent") -> None:
        peer.receive(self.device, entry.ts, entry.content)

    # interacting-peer role

    def receive(self, device: str, ts: int, content: bytes) -> LogEntry:
        """Accept a full log from ``device``; the digest is recomputed locally."""
        entry = LogEntry.create(content, ts, self.params)
        self.inbox[(device, entry.digest)] = entry
        return entry

    def obtain_receipt(self, device: str, entry: LogEntry) -> Receipt | None:
        """Fetch and verify a receipt for ``entry`` logged by ``device``.

        Returns the stored full receipt, or None when only a partial receipt
        is available yet (see :meth:`complete_pending`).
        """
        digest = log_digest(entry.content, entry.ts, self.params)
        epoch, offset = self.params.address(entry.ts)
        receipt = self.client.get_receipt(device, epoch, digest, offset)
        if receipt.log_digest != digest or receipt.ts != offset or receipt.epoch != epoch:
            raise VerificationFailed("notary answered with a receipt for a different log")
        if receipt.is_partial:
            try:
                root = self.client.get_root(device, epoch)
            except UnknownEpoch:
                self.pending[(device, epoch, digest)] = receipt
                return None
            receipt = self._finalize(device, receipt, root)
        else:
            root = self.client.get_root(device, epoch)
        return self._accept(device, receipt, root)

    def _finalize(self, device: str, partial: Receipt, root: bytes) -> Receipt:
        update = self.client.get_update(device, partial.epoch)
        try:
            return finalize_receipt(partial, update, self.params, root)
        except UpdateInconsistent:
            # the branch changed after the partial receipt was issued; ask again
            return self.client.get_receipt(device, partial.epoch, partial.log_digest, partial.ts)

    def _accept(self, device: str, receipt: Receipt, root: bytes) -> Receipt:
        if not verify_receipt(receipt, root, self.params):
            raise VerificationFailed(f"receipt for {receipt.log_digest.hex()} does not match the published root")
        self.receipts.put(device, receipt)
        return receipt

    def complete_pending(self) -> list[Receipt]:
        done = []
        for key, partial in list(self.pending.items()):
            device, epoch, _ = key
            try:
                root = self.client.get_root(device, epoch)
            except UnknownEpoch:
                continue
            done.append(self._accept(device, self._finalize(device, partial, root), root))
            del self.pending[key]
        return done
