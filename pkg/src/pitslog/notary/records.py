"""On-disk layout of the notary's per-(device, epoch) state.

Each finalised epoch owns one record file::

    magic "PITS" | version u8 | hash_id u8 | size_ts u8 | depth_p u8 | depth_u u8
    | size_p u16 | flags u8 | epoch u64 | device-id length u16 | device-id utf-8
    | body

All integers little-endian.  ``flags`` bit 0 marks an occupancy bitmap, bits
1-2 hold the retention stage.  The body is ``root || secret || parity
[|| occupancy]`` up to parity-only and just ``root`` once pruned to
roots-only.  While leaves are retained they live in a sibling ``.leaves``
file, and the published receipt update in ``.update``.
"""

from __future__ import annotations

import enum
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote, unquote

from ..errors import RecordCorrupt
from ..params import TreeParams
from ..parity import ParityRecord, decode_body, encode_body
from ..tree import PitsTree

MAGIC = b"PITS"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBBHBQH")
FLAG_OCCUPANCY = 0x01


class Stage(enum.IntEnum):
    FULL_TREE = 0
    LEAVES_ONLY = 1
    PARITY_ONLY = 2
    ROOTS_ONLY = 3

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> "Stage":
        try:
            return cls[text.strip().upper().replace("-", "_")]
        except KeyError:
            raise ValueError(f"unknown retention stage {text!r}") from None


def header_size(device: str) -> int:
    return _HEADER.size + len(device.encode())


def encode_record(
    device: str, epoch: int, root: bytes, record: ParityRecord | None, params: TreeParams, stage: Stage
) -> bytes:
    if record is None and stage is not Stage.ROOTS_ONLY:
        raise ValueError("a parity record is required before the roots-only stage")
    occupancy = record is not None and record.occupancy is not None
    flags = (int(stage) << 1) | (FLAG_OCCUPANCY if occupancy else 0)
    dev = device.encode()
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        params.hash_id,
        params.size_ts,
        params.depth_p,
        params.depth_u,
        params.size_p,
        flags,
        epoch,
        len(dev),
    )
    body = root if stage is Stage.ROOTS_ONLY else encode_body(record, params)
    return header + dev + body


@dataclass
class DecodedRecord:
    device: str
    stage: Stage
    params: TreeParams
    epoch: int
    root: bytes
    record: ParityRecord | None  # None once pruned to roots-only


def decode_record(data: bytes, base: TreeParams) -> DecodedRecord:
    if len(data) < _HEADER.size:
        raise RecordCorrupt("record shorter than its header")
    magic, version, hash_id, size_ts, depth_p, depth_u, size_p, flags, epoch, dlen = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise RecordCorrupt("bad magic or version")
    off = _HEADER.size
    device = data[off : off + dlen].decode()
    off += dlen
    params = TreeParams(
        size_ts=size_ts,
        depth_p=depth_p,
        size_p=size_p,
        depth_u=depth_u,
        epoch_duration=base.epoch_duration,
        ticks_per_second=base.ticks_per_second,
        hash_id=hash_id,
    )
    stage = Stage((flags >> 1) & 0x3)
    body = data[off:]
    if stage is Stage.ROOTS_ONLY:
        if len(body) != params.digest_size:
            raise RecordCorrupt("roots-only body must be exactly one digest")
        return DecodedRecord(device, stage, params, epoch, body, None)
    record = decode_body(body, params, epoch, bool(flags & FLAG_OCCUPANCY))
    return DecodedRecord(device, stage, params, epoch, record.root, record)


def encode_leaves(tree: PitsTree) -> bytes:
    out = []
    for ts in sorted(tree.leaves):
        digests = tree.leaves[ts]
        out.append(struct.pack("<QH", ts, len(digests)))
        out.extend(digests)
    return b"".join(out)


def decode_leaves(data: bytes, params: TreeParams, epoch: int) -> PitsTree:
    tree = PitsTree(params, epoch)
    dsize = params.digest_size
    entries = []
    off = 0
    while off < len(data):
        ts, count = struct.unpack_from("<QH", data, off)
        off += 10
        for _ in range(count):
            entries.append((ts, data[off : off + dsize]))
            off += dsize
    if off != len(data):
        raise RecordCorrupt("leaves file truncated")
    tree.add_logs(entries)
    return tree


class RecordStore:
    """Directory of per-device record, leaves, update and inconsistency files."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, device: str) -> Path:
        d = self.root / quote(device, safe="")
        d.mkdir(exist_ok=True)
        return d

    def path(self, device: str, epoch: int, suffix: str) -> Path:
        return self._dir(device) / f"{epoch}.{suffix}"

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)

    def write_device(self, device: str, params: TreeParams) -> None:
        self._atomic_write(self._dir(device) / "device.json", json.dumps(params.to_dict()).encode())

    def write_record(
        self, device: str, epoch: int, root: bytes, record: ParityRecord | None, params: TreeParams, stage: Stage
    ) -> int:
        data = encode_record(device, epoch, root, record, params, stage)
        self._atomic_write(self.path(device, epoch, "pits"), data)
        return len(data)

    def write_leaves(self, device: str, tree: PitsTree) -> None:
        self._atomic_write(self.path(device, tree.epoch, "leaves"), encode_leaves(tree))

    def write_update(self, device: str, epoch: int, data: bytes) -> None:
        self._atomic_write(self.path(device, epoch, "update"), data)

    def drop(self, device: str, epoch: int, suffix: str) -> None:
        self.path(device, epoch, suffix).unlink(missing_ok=True)

    def append_inconsistency(self, device: str, line: dict) -> None:
        with open(self._dir(device) / "inconsistencies.jsonl", "a") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def record_size(self, device: str, epoch: int) -> int:
        return self.path(device, epoch, "pits").stat().st_size

    def devices(self):
        for d in sorted(self.root.iterdir()):
            if d.is_dir() and (d / "device.json").exists():
                yield unquote(d.name), d

    def load_device(self, d: Path) -> tuple[TreeParams, list[Path], list[dict]]:
        params = TreeParams.from_dict(json.loads((d / "device.json").read_text()))
        records = sorted(d.glob("*.pits"), key=lambda p: int(p.stem))
        incs = []
        inc_path = d / "inconsistencies.jsonl"
        if inc_path.exists():
            incs = [json.loads(line) for line in inc_path.read_text().splitlines() if line.strip()]
        return params, records, incs
