"""Forensic audit of a device's log snapshot against the notary's parities.

The auditor rebuilds the epoch's tree from the logs found on the device,
sends the sub-epoch level to the notary and turns the mismatching indices
into wall-clock windows.  Receipts held by interacting peers can be
cross-checked against the same snapshot: a valid receipt for a log that the
snapshot no longer contains is direct evidence of tampering.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .agent import LogEntry, decode_record
from .errors import MalformedReceipt, NoPublishedRoot, SnapshotUnreadable, UnknownEpoch
from .notary.service import InconsistencyRecord
from .notary.wire import NotaryClient, inconsistency_to_json
from .params import TreeParams
from .tree import PitsTree, Receipt, verify_receipt

log = logging.getLogger(__name__)

CORROBORATES = "corroborates"
CONTRADICTS = "contradicts"


def load_snapshot(path: str | os.PathLike, params: TreeParams) -> list[LogEntry]:
    """Read a log store file (one ``{ts, enc, content}`` object per line)."""
    try:
        lines = Path(path).read_text().splitlines()
        return [LogEntry.create(c, ts, params) for ts, c in (decode_record(json.loads(x)) for x in lines if x.strip())]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SnapshotUnreadable(f"cannot read snapshot {path}: {exc}") from exc


def rebuild_tree(entries: Iterable[LogEntry], params: TreeParams, epoch: int) -> PitsTree:
    tree = PitsTree(params, epoch)
    pairs = []
    for e in entries:
        ep, offset = params.address(e.ts)
        if ep == epoch:
            pairs.append((offset, e.digest))
    tree.add_logs(pairs)
    return tree


def snapshot_epochs(entries: Iterable[LogEntry], params: TreeParams) -> list[int]:
    return sorted({params.epoch_of(e.ts) for e in entries})


@dataclass(frozen=True)
class Window:
    index: int
    start: Fraction  # Unix seconds, inclusive
    end: Fraction  # exclusive
    receipt_ticks: tuple[int, ...] = ()  # exact times of contradicting receipts inside the window

    def contains(self, seconds) -> bool:
        return self.start <= Fraction(seconds) < self.end

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "start": float(self.start),
            "end": float(self.end),
            "start_exact": str(self.start),
            "end_exact": str(self.end),
            "receipt_ticks": list(self.receipt_ticks),
        }


@dataclass(frozen=True)
class ReceiptCheck:
    device: str
    epoch: int
    offset: int
    tick: int
    log_digest: bytes
    verdict: str
    window: int

    def to_json(self) -> dict:
        return {
            "device": self.device,
            "epoch": self.epoch,
            "offset": self.offset,
            "tick": self.tick,
            "log_digest": self.log_digest.hex(),
            "verdict": self.verdict,
            "subepoch": self.window,
        }


@dataclass
class AuditResult:
    device: str
    epoch: int
    params: TreeParams
    root_match: bool
    windows: list[Window]
    inconsistencies: list[InconsistencyRecord]
    snapshot_logs: int
    receipt_checks: list[ReceiptCheck] = field(default_factory=list)
    invalid_receipts: int = 0

    @property
    def clean(self) -> bool:
        return (
            self.root_match
            and not self.windows
            and not self.inconsistencies
            and all(c.verdict == CORROBORATES for c in self.receipt_checks)
        )

    def to_json(self) -> dict:
        return {
            "device": self.device,
            "epoch": self.epoch,
            "params": self.params.to_dict(),
            "root_match": self.root_match,
            "clean": self.clean,
            "snapshot_logs": self.snapshot_logs,
            "windows": [w.to_json() for w in self.windows],
            "inconsistencies": [inconsistency_to_json(r) for r in self.inconsistencies],
            "receipt_checks": [c.to_json() for c in self.receipt_checks],
            "invalid_receipts": self.invalid_receipts,
        }


def windows_for(params: TreeParams, epoch: int, indices: Iterable[int]) -> list[Window]:
    return [Window(i, *params.subepoch_window(epoch, i)) for i in sorted(indices)]


def cross_check_receipts(
    receipts: Iterable[tuple[str, Receipt]],
    tree: PitsTree,
    root: bytes,
    params: TreeParams,
    device: str,
) -> tuple[list[ReceiptCheck], int]:
    """Compare peer-held receipts of ``device`` with the rebuilt tree.

    Receipts that fail verification against ``root`` prove nothing and are only
    counted.  Returns ``(checks, invalid_count)``.
    """
    checks, invalid = [], 0
    for dev, r in receipts:
        if dev != device or r.epoch != tree.epoch:
            continue
        try:
            ok = verify_receipt(r, root, params)
        except MalformedReceipt:
            ok = False
        if not ok:
            log.warning("excluding receipt for %s at offset %d: it does not verify", r.log_digest.hex(), r.ts)
            invalid += 1
            continue
        present = r.log_digest in tree.leaves.get(r.ts, ())
        checks.append(
            ReceiptCheck(
                device,
                r.epoch,
                r.ts,
                params.tick_of(r.epoch, r.ts),
                r.log_digest,
                CORROBORATES if present else CONTRADICTS,
                params.subepoch_of(r.ts),
            )
        )
    return checks, invalid


def annotate(windows: list[Window], checks: list[ReceiptCheck]) -> list[Window]:
    out = []
    for w in windows:
        ticks = tuple(sorted(c.tick for c in checks if c.verdict == CONTRADICTS and c.window == w.index))
        out.append(replace(w, receipt_ticks=ticks) if ticks else w)
    return out


def audit_device(
    client: NotaryClient,
    device: str,
    epoch: int,
    entries: list[LogEntry],
    receipts: Iterable[tuple[str, Receipt]] = (),
) -> AuditResult:
    """Rebuild the epoch from ``entries`` and compare it with the published root.

    The root comparison uses the published root only; the notary's parity audit
    is consulted just to localize a mismatch.
    """
    try:
        root, params = client.get_root_and_params(device, epoch)
    except UnknownEpoch as exc:
        raise NoPublishedRoot(str(exc)) from exc
    tree = rebuild_tree(entries, params, epoch)
    root_match = tree.root == root
    windows: list[Window] = []
    if root_match:
        incs = client.get_inconsistencies(device, epoch)
    else:
        report = client.audit(device, epoch, tree.level_hashes(params.depth_p))
        windows = windows_for(params, epoch, report.mismatched_subepochs)
        incs = list(report.inconsistencies)
    checks, invalid = cross_check_receipts(receipts, tree, root, params, device)
    return AuditResult(
        device=device,
        epoch=epoch,
        params=params,
        root_match=root_match,
        windows=annotate(windows, checks),
        inconsistencies=incs,
        snapshot_logs=len(tree),
        receipt_checks=checks,
        invalid_receipts=invalid,
    )
