"""The log notary: batch ingestion, epoch lifecycle, receipts and audits."""

from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from ..chain import Boundary, LogBatch, close_epoch_check, verify_batch_chain
from ..errors import (
    AlreadyFinalized,
    EpochFinalized,
    InvalidTransition,
    MalformedBatch,
    MissingBoundary,
    TreePruned,
    UnknownDevice,
    UnknownEpoch,
)
from ..params import RUNNING_EXAMPLE, TreeParams
from ..parity import ParityRecord, compare_parity, finalize_tree
from ..tree import PitsTree, Receipt, ReceiptUpdate, fold_level
from .records import RecordStore, Stage, decode_leaves, decode_record

log = logging.getLogger(__name__)

CHAIN_MISMATCH = "chain-mismatch"
TRUNCATION = "truncation"
LATE_SUBMISSION = "late-submission"


@dataclass(frozen=True)
class InconsistencyRecord:
    device: str
    epoch: int
    seq: int | None
    kind: str
    entries: tuple[tuple[int, bytes], ...]
    chain_value: bytes | None
    detected_at: int
    detail: str = ""


@dataclass(frozen=True)
class Ack:
    device: str
    epoch: int
    seq: int
    chain_value: bytes
    flagged: bool = False
    status: str = "accepted"  # accepted | duplicate | buffered


@dataclass(frozen=True)
class AuditReport:
    device: str
    epoch: int
    root_match: bool
    mismatched_subepochs: tuple[int, ...]
    inconsistencies: tuple[InconsistencyRecord, ...]
    params: TreeParams


@dataclass(frozen=True)
class FinalizeSummary:
    device: str
    epoch: int
    root: bytes
    n_logs: int
    record_bytes: int | None


@dataclass
class EpochState:
    epoch: int
    tree: PitsTree | None
    expected: bytes | None = None
    has_boundary: bool = False
    next_seq: int = 0
    pending: dict[int, LogBatch] = field(default_factory=dict)
    h0: bytes | None = None
    closing_claim: bytes | None = None
    claim_received: bool = False
    record: ParityRecord | None = None
    root: bytes | None = None
    update: ReceiptUpdate | None = None
    stage: Stage = Stage.FULL_TREE
    finalized: bool = False


@dataclass
class DeviceState:
    device: str
    params: TreeParams
    epochs: dict[int, EpochState] = field(default_factory=dict)
    inconsistencies: list[InconsistencyRecord] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock)


def parse_retention(text: str) -> dict[Stage, float]:
    """Parse ``"leaves-only=3600,parity-only=86400"`` (seconds after epoch end)."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, _, secs = part.partition("=")
        stage = Stage.parse(name)
        if stage is Stage.FULL_TREE:
            raise ValueError("full-tree is the initial stage, not a schedule target")
        out[stage] = float(secs)
    return out


class Notary:
    """In-process notary.  Wrap it in :class:`~pitslog.notary.wire.NotaryAPI` to serve it.

    ``clock`` returns the current Unix time in seconds (an int, float or
    Fraction).  ``rng`` feeds parity secrets and defaults to the OS CSPRNG;
    seeded generators are only for reproducible simulations.
    """

    def __init__(
        self,
        params: TreeParams = RUNNING_EXAMPLE,
        *,
        clock: Callable[[], float] = time.time,
        grace_seconds: float = 60,
        data_dir=None,
        rng=None,
        omit_empty_parities: bool = False,
        retention: Mapping[Stage, float] | None = None,
        auto_register: bool = False,
    ):
        self.params = params
        self.clock = clock
        self.grace_seconds = grace_seconds
        self.rng = rng
        self.omit_empty_parities = omit_empty_parities
        self.retention = dict(retention or {})
        self.auto_register = auto_register
        self.store = RecordStore(data_dir) if data_dir is not None else None
        self._devices: dict[str, DeviceState] = {}
        self._registry_lock = threading.Lock()
        if self.store is not None:
            self._load()

    # registry

    def register_device(self, device: str, params: TreeParams | None = None) -> TreeParams:
        with self._registry_lock:
            if device not in self._devices:
                p = params or self.params
                self._devices[device] = DeviceState(device, p)
                if self.store is not None:
                    self.store.write_device(device, p)
            return self._devices[device].params

    def devices(self) -> list[str]:
        return sorted(self._devices)

    def _device(self, device: str) -> DeviceState:
        dev = self._devices.get(device)
        if dev is None:
            if not self.auto_register:
                raise UnknownDevice(f"device {device!r} is not registered")
            self.register_device(device)
            dev = self._devices[device]
        return dev

    def _now_tick(self, params: TreeParams) -> int:
        return math.floor(Fraction(self.clock()) * params.ticks_per_second)

    def _epoch(self, dev: DeviceState, epoch: int) -> EpochState:
        st = dev.epochs.get(epoch)
        if st is None:
            raise UnknownEpoch(f"no state for device {dev.device!r} epoch {epoch}")
        return st

    def _record(self, dev: DeviceState, epoch: int, kind: str, *, seq=None, entries=(), chain_value=None, detail=""):
        rec = InconsistencyRecord(
            device=dev.device,
            epoch=epoch,
            seq=seq,
            kind=kind,
            entries=tuple(entries),
            chain_value=chain_value,
            detected_at=self._now_tick(dev.params),
            detail=detail,
        )
        dev.inconsistencies.append(rec)
        log.warning("inconsistency %s device=%s epoch=%s seq=%s %s", kind, dev.device, epoch, seq, detail)
        if self.store is not None:
            from .wire import inconsistency_to_json

            self.store.append_inconsistency(dev.device, inconsistency_to_json(rec))
        return rec

    # ingestion

    def _validate(self, p: TreeParams, batch: LogBatch) -> None:
        limit = 1 << p.size_ts
        dsize = p.digest_size
        if batch.epoch < 0 or batch.seq < 0:
            raise MalformedBatch("negative epoch or sequence number")
        if len(batch.chain_value) != dsize:
            raise MalformedBatch("chain value has the wrong length")
        for ts, d in batch.entries:
            if not 0 <= ts < limit or len(d) != dsize:
                raise MalformedBatch(f"bad entry at offset {ts}")
        b = batch.boundary
        if b is not None and (len(b.h0) != dsize or (b.h_ep is not None and len(b.h_ep) != dsize)):
            raise MalformedBatch("boundary digest has the wrong length")

    def _state_for(self, dev: DeviceState, epoch: int) -> EpochState:
        st = dev.epochs.get(epoch)
        if st is None:
            st = dev.epochs[epoch] = EpochState(epoch, PitsTree(dev.params, epoch))
        return st

    def submit_batch(self, batch: LogBatch) -> Ack:
        dev = self._device(batch.device)
        with dev.lock:
            self._validate(dev.params, batch)
            st = dev.epochs.get(batch.epoch)
            if st is not None and st.finalized and batch.seq < st.next_seq:
                return Ack(dev.device, batch.epoch, batch.seq, batch.chain_value, status="duplicate")
            if st is not None and st.finalized:
                self._record(
                    dev,
                    batch.epoch,
                    LATE_SUBMISSION,
                    seq=batch.seq,
                    entries=batch.entries,
                    chain_value=batch.chain_value,
                    detail="batch arrived after the epoch was finalized",
                )
                raise EpochFinalized(f"epoch {batch.epoch} of {batch.device!r} is finalized")
            st = self._state_for(dev, batch.epoch)
            if batch.seq < st.next_seq:
                return Ack(dev.device, batch.epoch, batch.seq, batch.chain_value, status="duplicate")
            st.pending[batch.seq] = batch
            flagged = self._drain(dev, st)
            if batch.seq in st.pending:
                return Ack(dev.device, batch.epoch, batch.seq, batch.chain_value, status="buffered")
            return Ack(dev.device, batch.epoch, batch.seq, batch.chain_value, flagged=batch.seq in flagged)

    def start_epoch(self, device: str, epoch: int, h_ep: bytes | None, h0: bytes) -> None:
        """Boundary-only message: seeds ``epoch``'s chain and closes the previous one."""
        dev = self._device(device)
        with dev.lock:
            dsize = dev.params.digest_size
            if len(h0) != dsize or (h_ep is not None and len(h_ep) != dsize):
                raise MalformedBatch("boundary digest has the wrong length")
            st = dev.epochs.get(epoch)
            if st is not None and st.finalized:
                raise EpochFinalized(f"epoch {epoch} of {device!r} is finalized")
            st = self._state_for(dev, epoch)
            self._apply_boundary(dev, st, Boundary(h_ep, h0))
            self._drain(dev, st)

    def _drain(self, dev: DeviceState, st: EpochState, force: bool = False) -> set[int]:
        """Apply buffered batches in sequence order; returns the flagged sequence numbers."""
        flagged = set()
        while st.pending:
            batch = st.pending.get(st.next_seq)
            if batch is None:
                if not force:
                    break
                batch = st.pending[min(st.pending)]
                self._record(
                    dev,
                    st.epoch,
                    CHAIN_MISMATCH,
                    seq=batch.seq,
                    entries=batch.entries,
                    chain_value=batch.chain_value,
                    detail=f"batches {st.next_seq}..{batch.seq - 1} never arrived",
                )
                flagged.add(batch.seq)
                st.next_seq = batch.seq
                st.has_boundary = st.has_boundary or batch.boundary is not None
                self._apply(dev, st, batch, verify=False)
                continue
            if not st.has_boundary and batch.boundary is None and not force:
                break  # wait for the start_epoch message
            if self._apply(dev, st, batch):
                flagged.add(batch.seq)
        return flagged

    def _apply(self, dev: DeviceState, st: EpochState, batch: LogBatch, verify: bool = True) -> bool:
        del st.pending[batch.seq]
        if batch.boundary is not None:
            self._apply_boundary(dev, st, batch.boundary)
        flagged = False
        if verify:
            if not st.has_boundary:
                flagged = True
                self._record(
                    dev,
                    st.epoch,
                    CHAIN_MISMATCH,
                    seq=batch.seq,
                    entries=batch.entries,
                    chain_value=batch.chain_value,
                    detail="no chain seed was received for this epoch",
                )
            elif not verify_batch_chain(st.expected, batch.digests, batch.chain_value, dev.params.hash):
                flagged = True
                self._record(
                    dev,
                    st.epoch,
                    CHAIN_MISMATCH,
                    seq=batch.seq,
                    entries=batch.entries,
                    chain_value=batch.chain_value,
                    detail="chain value does not match the submitted digests",
                )
        # flagged batches are kept in the tree for later forensic analysis
        st.tree.add_logs(batch.entries)
        st.expected = batch.chain_value
        st.next_seq = batch.seq + 1
        return flagged

    def _apply_boundary(self, dev: DeviceState, st: EpochState, boundary: Boundary) -> None:
        if st.has_boundary:
            if boundary.h0 == st.h0:
                return
            self._record(dev, st.epoch, CHAIN_MISMATCH, detail="second, conflicting chain seed for the epoch")
            return
        st.has_boundary = True
        st.expected = st.h0 = boundary.h0
        earlier = [e for e in dev.epochs if e < st.epoch]
        if not earlier:
            return
        prev = dev.epochs[max(earlier)]
        prev.closing_claim = boundary.h_ep
        prev.claim_received = True
        if prev.finalized:
            expected = prev.expected if prev.has_boundary else None
            if expected is None or boundary.h_ep != expected:
                self._record(
                    dev,
                    prev.epoch,
                    TRUNCATION,
                    chain_value=boundary.h_ep,
                    detail="late h_ep does not match the final chain value",
                )

    # lifecycle

    def _epoch_end_tick(self, p: TreeParams, epoch: int) -> int:
        return p.epoch_start(epoch + 1)

    def tick(self) -> list[FinalizeSummary]:
        """Finalize due epochs and apply the retention schedule."""
        done = []
        for dev in list(self._devices.values()):
            with dev.lock:
                p = dev.params
                now = self._now_tick(p)
                grace = math.ceil(self.grace_seconds * p.ticks_per_second)
                for epoch in sorted(dev.epochs):
                    st = dev.epochs[epoch]
                    end = self._epoch_end_tick(p, epoch)
                    if not st.finalized:
                        if now < end:
                            continue
                        closed = (
                            st.claim_received
                            and st.has_boundary
                            and not st.pending
                            and st.closing_claim == st.expected
                        )
                        if closed or now >= end + grace:
                            done.append(self._finalize(dev, st))
                        continue
                    for stage in sorted(self.retention):
                        due = end + math.ceil(self.retention[stage] * p.ticks_per_second)
                        if now >= due and stage > st.stage:
                            self._advance(dev, st, stage)
        return done

    def finalize_epoch(self, device: str, epoch: int) -> FinalizeSummary:
        dev = self._device(device)
        with dev.lock:
            st = self._epoch(dev, epoch)
            if st.finalized:
                raise AlreadyFinalized(f"epoch {epoch} of {device!r} is already finalized")
            return self._finalize(dev, st)

    def _finalize(self, dev: DeviceState, st: EpochState) -> FinalizeSummary:
        self._drain(dev, st, force=True)
        try:
            ok = close_epoch_check(st.expected if st.has_boundary else None, st.closing_claim)
        except MissingBoundary:
            self._record(dev, st.epoch, TRUNCATION, detail="epoch never received its chain seed")
        else:
            if not ok:
                detail = (
                    "h_ep does not match the final chain value"
                    if st.claim_received
                    else "no h_ep arrived before finalization"
                )
                self._record(dev, st.epoch, TRUNCATION, chain_value=st.closing_claim, detail=detail)
        record = finalize_tree(st.tree, self.rng, omit_empty=self.omit_empty_parities)
        st.record = record
        st.root = record.root
        st.update = st.tree.receipt_update()
        st.stage = Stage.FULL_TREE
        st.finalized = True
        size = None
        if self.store is not None:
            size = self.store.write_record(dev.device, st.epoch, record.root, record, dev.params, st.stage)
            self.store.write_leaves(dev.device, st.tree)
            self.store.write_update(dev.device, st.epoch, st.update.to_bytes())
        log.info("finalized device=%s epoch=%s logs=%d", dev.device, st.epoch, len(st.tree))
        return FinalizeSummary(dev.device, st.epoch, record.root, len(st.tree), size)

    def advance_retention(self, device: str, epoch: int, target: Stage) -> None:
        dev = self._device(device)
        with dev.lock:
            st = self._epoch(dev, epoch)
            if not st.finalized:
                raise InvalidTransition("only finalized epochs change retention stage")
            if target <= st.stage:
                raise InvalidTransition(f"cannot move from {st.stage.label} to {Stage(target).label}")
            self._advance(dev, st, Stage(target))

    def _advance(self, dev: DeviceState, st: EpochState, target: Stage) -> None:
        if target >= Stage.LEAVES_ONLY and st.tree is not None and st.tree.has_branches:
            st.tree.drop_branches()
        if target >= Stage.PARITY_ONLY:
            st.tree = None
            st.update = None
            if self.store is not None:
                self.store.drop(dev.device, st.epoch, "leaves")
                self.store.drop(dev.device, st.epoch, "update")
        if target >= Stage.ROOTS_ONLY:
            st.record = None
        st.stage = target
        if self.store is not None:
            self.store.write_record(dev.device, st.epoch, st.root, st.record, dev.params, target)

    # queries

    def params_for(self, device: str) -> TreeParams:
        return self._device(device).params

    def get_root(self, device: str, epoch: int) -> bytes:
        dev = self._device(device)
        with dev.lock:
            st = self._epoch(dev, epoch)
            if not st.finalized:
                raise UnknownEpoch(f"epoch {epoch} of {device!r} has no published root yet")
            return st.root

    def get_update(self, device: str, epoch: int) -> ReceiptUpdate:
        dev = self._device(device)
        with dev.lock:
            st = self._epoch(dev, epoch)
            if not st.finalized:
                raise UnknownEpoch(f"epoch {epoch} of {device!r} has no published update yet")
            if st.update is None:
                raise TreePruned(f"update for epoch {epoch} was pruned")
            return st.update

    def get_receipt(self, device: str, epoch: int, log_digest: bytes, ts: int) -> Receipt:
        """Full receipt after finalization, partial receipt before."""
        dev = self._device(device)
        with dev.lock:
            st = self._epoch(dev, epoch)
            if st.stage >= Stage.PARITY_ONLY or st.tree is None:
                raise TreePruned(f"tree for epoch {epoch} of {device!r} was pruned")
            if st.finalized:
                return st.tree.calc_receipt(log_digest, ts)
            p = dev.params
            now = self._now_tick(p)
            now_epoch, now_offset = p.address(now)
            if now_epoch > epoch:
                now_offset = 1 << p.size_ts
            elif now_epoch < epoch:
                now_offset = 0
            return st.tree.partial_receipt(log_digest, ts, now_offset)

    def audit(self, device: str, epoch: int, candidate_level) -> AuditReport:
        dev = self._device(device)
        with dev.lock:
            st = self._epoch(dev, epoch)
            if not st.finalized:
                raise UnknownEpoch(f"epoch {epoch} of {device!r} is not finalized")
            if st.record is None:
                raise TreePruned(f"parity for epoch {epoch} of {device!r} was pruned")
            p = dev.params
            mismatched = compare_parity(st.record, candidate_level, p)
            root_match = fold_level(candidate_level, p)[-1][0] == st.root
            incs = tuple(r for r in dev.inconsistencies if r.epoch == epoch)
            return AuditReport(dev.device, epoch, root_match, tuple(mismatched), incs, p)

    def get_inconsistencies(self, device: str, epoch: int | None = None) -> list[InconsistencyRecord]:
        dev = self._device(device)
        with dev.lock:
            return [r for r in dev.inconsistencies if epoch is None or r.epoch == epoch]

    def stage_of(self, device: str, epoch: int) -> Stage:
        dev = self._device(device)
        return self._epoch(dev, epoch).stage

    def tree_of(self, device: str, epoch: int) -> PitsTree | None:
        """Direct access for tests and the benchmark; not exposed over the wire."""
        return self._epoch(self._device(device), epoch).tree

    # persistence

    def _load(self) -> None:
        from .wire import inconsistency_from_json

        for device, d in self.store.devices():
            params, record_paths, incs = self.store.load_device(d)
            dev = DeviceState(device, params)
            for path in record_paths:
                decoded = decode_record(path.read_bytes(), params)
                st = EpochState(decoded.epoch, None)
                st.finalized = True
                st.stage = decoded.stage
                st.root = decoded.root
                st.record = decoded.record
                leaves = self.store.path(device, decoded.epoch, "leaves")
                if decoded.stage <= Stage.LEAVES_ONLY and leaves.exists():
                    st.tree = decode_leaves(leaves.read_bytes(), params, decoded.epoch)
                    st.tree.finalized = True
                    if decoded.stage is Stage.LEAVES_ONLY:
                        st.tree.drop_branches()
                upd = self.store.path(device, decoded.epoch, "update")
                if decoded.stage <= Stage.LEAVES_ONLY and upd.exists():
                    st.update = ReceiptUpdate.from_bytes(decoded.epoch, upd.read_bytes(), params.digest_size)
                dev.epochs[decoded.epoch] = st
            dev.inconsistencies = [inconsistency_from_json(x) for x in incs]
            self._devices[device] = dev

