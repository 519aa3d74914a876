"""Timestamp-addressed sparse hash tree.

A :class:`PitsTree` holds the logs of one (device, epoch).  Leaves are
addressed by the timestamp offset of the log, so the tree has a fixed height
``size_ts`` and most of it is empty.  Empty subtrees are never materialised;
their value at depth ``y`` is ``E[y]`` from :func:`build_empty_hash_table`.

Node ``(y, x)`` is the ancestor at depth ``y`` of every offset whose top ``y``
bits equal ``x``.  Inner nodes are stored per depth in plain dicts keyed by
index, which lets a finalised tree drop everything but its leaves and rebuild
branch hashes on demand.

Receipt bitmaps use bit ``k`` (least significant first) for the sibling
consumed at the ``k``-th fold step, i.e. the sibling at depth ``size_ts - k``.
"""

from __future__ import annotations

import hmac
from bisect import bisect_left, insort
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import (
    BranchNotFinal,
    DepthOutOfRange,
    DuplicateDigest,
    EpochMismatch,
    MalformedReceipt,
    TreeFinalized,
    UnknownLog,
    UpdateInconsistent,
    WrongLength,
)
from .params import TreeParams


@lru_cache(maxsize=64)
def build_empty_hash_table(params: TreeParams) -> tuple[bytes, ...]:
    """``E[y]`` for ``y = 0..size_ts``: the hash of an all-empty subtree rooted at depth ``y``."""
    table = [b""] * (params.size_ts + 1)
    table[params.size_ts] = params.hash(b"")
    for y in range(params.size_ts - 1, -1, -1):
        table[y] = params.hash(table[y + 1] + table[y + 1])
    return tuple(table)


def leaf_value(digests: Sequence[bytes], params: TreeParams) -> bytes:
    """Leaf hash for the ascending-sorted digests sharing one timestamp."""
    if len(digests) == 1:
        return digests[0]
    return params.hash(b"".join(digests))


@dataclass(frozen=True)
class Receipt:
    """Proof that ``log_digest`` sits at offset ``ts`` of an epoch's tree.

    ``co_leaf`` lists the other digests sharing the leaf (ascending) and
    ``co_position`` is where ``log_digest`` slots in among them.
    ``partial_depth`` is 0 for a full receipt and ``depth_u`` for a partial one
    whose path stops at the receipt-update level.
    """

    epoch: int
    ts: int
    log_digest: bytes
    poi: tuple[bytes, ...]
    bitmap: int
    co_leaf: tuple[bytes, ...] = ()
    co_position: int = 0
    partial_depth: int = 0

    @property
    def is_partial(self) -> bool:
        return self.partial_depth != 0


@dataclass(frozen=True)
class ReceiptUpdate:
    """All nodes at depth ``depth_u`` of a finalised tree, empty ones as ``E[depth_u]``."""

    epoch: int
    level: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        return b"".join(self.level)

    @classmethod
    def from_bytes(cls, epoch: int, data: bytes, digest_size: int) -> "ReceiptUpdate":
        if len(data) % digest_size:
            raise WrongLength("update length is not a multiple of the digest size")
        return cls(epoch, tuple(data[i : i + digest_size] for i in range(0, len(data), digest_size)))


@dataclass
class TreeStats:
    logs: int
    leaves: int
    branch_nodes: int
    digest_size: int

    @property
    def full_bytes(self) -> int:
        # every stored node is a digest plus an 8-byte (depth, index) key
        return (self.leaves + self.branch_nodes) * (self.digest_size + 8) + self._extra_log_bytes

    @property
    def leaves_only_bytes(self) -> int:
        return self.leaves * (self.digest_size + 8) + self._extra_log_bytes

    @property
    def _extra_log_bytes(self) -> int:
        # co-leaf digests beyond the first at a shared timestamp
        return (self.logs - self.leaves) * self.digest_size


class PitsTree:
    def __init__(self, params: TreeParams, epoch: int = 0):
        self.params = params
        self.epoch = epoch
        self.empty = build_empty_hash_table(params)
        self.leaves: dict[int, list[bytes]] = {}
        self.levels: list[dict[int, bytes]] = [{} for _ in range(params.size_ts + 1)]
        self.finalized = False
        self.has_branches = True
        self._root = self.empty[0]
        self._sorted_offsets: list[int] = []
        self._n_logs = 0
        size = params.size_ts
        self._steps = [
            (self.levels[y], self.levels[y - 1], self.empty[y]) for y in range(size, 0, -1)
        ]

    def __len__(self) -> int:
        return self._n_logs

    def __repr__(self):
        return f"PitsTree(epoch={self.epoch}, logs={self._n_logs}, root={self.root.hex()[:16]}…)"

    @property
    def root(self) -> bytes:
        return self._root

    # insertion

    def _check_offset(self, ts: int) -> None:
        if not 0 <= ts < (1 << self.params.size_ts):
            raise ValueError(f"offset {ts} does not fit in {self.params.size_ts} bits")

    def _put_leaf(self, ts: int, log_digest: bytes) -> bytes:
        if len(log_digest) != self.params.digest_size:
            raise ValueError("log digest has the wrong length")
        digests = self.leaves.get(ts)
        if digests is None:
            self.leaves[ts] = [log_digest]
            value = log_digest
        else:
            if log_digest in digests:
                raise DuplicateDigest(f"digest {log_digest.hex()} already stored at offset {ts}")
            insort(digests, log_digest)
            value = leaf_value(digests, self.params)
        self.levels[self.params.size_ts][ts] = value
        self._n_logs += 1
        return value

    def add_log(self, ts: int, log_digest: bytes) -> bytes:
        """Insert one log and update its path bottom-up; returns the new root."""
        if self.finalized:
            raise TreeFinalized(f"tree for epoch {self.epoch} is finalized")
        self._check_offset(ts)
        cur = self._put_leaf(ts, log_digest)
        if not self.has_branches:
            self._invalidate_leaves_only(ts)
            return self._root
        h = self.params.hash_constructor
        x = ts
        for level, parent, empty in self._steps:
            if x & 1:
                cur = h(level.get(x ^ 1, empty) + cur).digest()
            else:
                cur = h(cur + level.get(x ^ 1, empty)).digest()
            x >>= 1
            parent[x] = cur
        self._root = cur
        return cur

    def add_logs(self, entries: Iterable[tuple[int, bytes]]) -> bytes:
        """Insert many logs, recomputing each dirty ancestor once.

        Exact duplicates (same offset and digest) are skipped rather than
        raised, which is what at-least-once batch delivery needs.
        """
        if self.finalized:
            raise TreeFinalized(f"tree for epoch {self.epoch} is finalized")
        dirty = set()
        for ts, log_digest in entries:
            self._check_offset(ts)
            try:
                self._put_leaf(ts, log_digest)
            except DuplicateDigest:
                continue
            dirty.add(ts)
        if not dirty:
            return self._root
        if not self.has_branches:
            for ts in dirty:
                self._invalidate_leaves_only(ts)
            return self._root
        h = self.params.hash_constructor
        for level, parent, empty in self._steps:
            get = level.get
            parents = {x >> 1 for x in dirty}
            for p in parents:
                left = p << 1
                parent[p] = h(get(left, empty) + get(left | 1, empty)).digest()
            dirty = parents
        self._root = self.levels[0][0]
        return self._root

    def _invalidate_leaves_only(self, ts: int) -> None:
        # only reachable on an unfinalized tree that was reduced; rare, so recompute
        if ts not in self._sorted_offsets:
            insort(self._sorted_offsets, ts)
        self._root = self._subtree_hash(0, 0)

    # node access

    def _span(self, depth: int, index: int) -> tuple[int, int]:
        shift = self.params.size_ts - depth
        return index << shift, (index + 1) << shift

    def _subtree_nonempty(self, depth: int, index: int) -> bool:
        if self.has_branches:
            if depth == 0:
                return bool(self.leaves)
            return index in self.levels[depth]
        lo, hi = self._span(depth, index)
        i = bisect_left(self._sorted_offsets, lo)
        return i < len(self._sorted_offsets) and self._sorted_offsets[i] < hi

    def _subtree_hash(self, depth: int, index: int) -> bytes:
        """Hash of node (depth, index) recomputed from the sorted leaves."""
        offsets = self._sorted_offsets
        size = self.params.size_ts
        h = self.params.hash_constructor
        leaves = self.levels[size]
        empty = self.empty

        def rec(y: int, x: int, lo_i: int, hi_i: int) -> bytes:
            if lo_i == hi_i:
                return empty[y]
            if y == size:
                return leaves[x]
            mid = ((x << 1) | 1) << (size - y - 1)
            m = bisect_left(offsets, mid, lo_i, hi_i)
            return h(rec(y + 1, x << 1, lo_i, m) + rec(y + 1, (x << 1) | 1, m, hi_i)).digest()

        lo, hi = self._span(depth, index)
        return rec(depth, index, bisect_left(offsets, lo), bisect_left(offsets, hi))

    def node(self, depth: int, index: int) -> bytes:
        """Value of node ``b_index^depth`` (``E[depth]`` when its subtree is empty)."""
        if not 0 <= depth <= self.params.size_ts:
            raise DepthOutOfRange(f"depth {depth} outside 0..{self.params.size_ts}")
        if not 0 <= index < (1 << depth):
            raise ValueError(f"index {index} outside depth {depth}")
        if depth == 0:
            return self._root
        if self.has_branches or depth == self.params.size_ts:
            return self.levels[depth].get(index, self.empty[depth])
        return self._subtree_hash(depth, index)

    def level_hashes(self, depth: int) -> list[bytes]:
        """All ``2**depth`` nodes at ``depth``, empty positions filled with ``E[depth]``."""
        if not 0 <= depth <= self.params.size_ts:
            raise DepthOutOfRange(f"depth {depth} outside 0..{self.params.size_ts}")
        out = [self.empty[depth]] * (1 << depth)
        if self.has_branches:
            for x, value in self.levels[depth].items():
                out[x] = value
            return out
        # leaves-only: fold the stored leaves up to the requested depth
        h = self.params.hash_constructor
        cur = self.levels[self.params.size_ts]
        for y in range(self.params.size_ts, depth, -1):
            empty = self.empty[y]
            nxt = {}
            for p in {x >> 1 for x in cur}:
                nxt[p] = h(cur.get(p << 1, empty) + cur.get((p << 1) | 1, empty)).digest()
            cur = nxt
        for x, value in cur.items():
            out[x] = value
        return out

    # receipts

    def _path(self, log_digest: bytes, ts: int, stop_depth: int) -> Receipt:
        digests = self.leaves.get(ts)
        if not digests or log_digest not in digests:
            raise UnknownLog(f"no log {log_digest.hex()} at offset {ts} in epoch {self.epoch}")
        pos = digests.index(log_digest)
        co_leaf = tuple(digests[:pos] + digests[pos + 1 :])
        poi = []
        bitmap = 0
        x = ts
        size = self.params.size_ts
        for k in range(size - stop_depth):
            y = size - k
            sib = x ^ 1
            if self._subtree_nonempty(y, sib):
                poi.append(self.node(y, sib))
                bitmap |= 1 << k
            x >>= 1
        return Receipt(
            epoch=self.epoch,
            ts=ts,
            log_digest=log_digest,
            poi=tuple(poi),
            bitmap=bitmap,
            co_leaf=co_leaf,
            co_position=pos if co_leaf else 0,
            partial_depth=stop_depth,
        )

    def calc_receipt(self, log_digest: bytes, ts: int) -> Receipt:
        """Full receipt: non-empty siblings from the leaf up to the root."""
        return self._path(log_digest, ts, 0)

    def partial_receipt(self, log_digest: bytes, ts: int, now_offset: int | None = None) -> Receipt:
        """Receipt whose path stops at depth ``depth_u``.

        ``now_offset`` is the current time expressed as a leaf offset of this
        epoch (``2**size_ts`` or more once the epoch is over); when given, the
        depth_u branch covering ``ts`` must already be closed.
        """
        u = self.params.depth_u
        if now_offset is not None:
            width = 1 << (self.params.size_ts - u)
            branch_end = ((ts >> (self.params.size_ts - u)) + 1) * width
            if now_offset < branch_end:
                raise BranchNotFinal(f"branch {ts >> (self.params.size_ts - u)} closes at offset {branch_end}")
        return self._path(log_digest, ts, u)

    def receipt_update(self) -> ReceiptUpdate:
        return ReceiptUpdate(self.epoch, tuple(self.level_hashes(self.params.depth_u)))

    # retention

    def drop_branches(self) -> None:
        """Keep only the leaves (and the root); inner nodes are rebuilt on demand."""
        size = self.params.size_ts
        for y in range(size):
            self.levels[y].clear()
        self._sorted_offsets = sorted(self.levels[size])
        self.has_branches = False

    def stats(self) -> TreeStats:
        size = self.params.size_ts
        if self.has_branches:
            branches = sum(len(self.levels[y]) for y in range(size))
        else:
            branches = 0
        return TreeStats(self._n_logs, len(self.leaves), branches, self.params.digest_size)

    def branch_count_if_full(self) -> int:
        """Number of non-empty inner nodes, whether or not they are currently stored."""
        size = self.params.size_ts
        cur = set(self.leaves)
        total = 0
        for _ in range(size):
            cur = {x >> 1 for x in cur}
            total += len(cur)
        return total


# verification (no tree needed)


def _fold(receipt: Receipt, params: TreeParams, stop_depth: int) -> bytes | None:
    """Recompute the node at ``stop_depth`` on the receipt's path.

    Returns None for receipts that are well-formed but cannot be valid
    (offset out of range, unsorted co-leaf list).
    """
    size = params.size_ts
    steps = size - stop_depth
    if receipt.bitmap < 0 or receipt.bitmap >> steps:
        raise MalformedReceipt("bitmap has bits outside the receipt path")
    if receipt.bitmap.bit_count() != len(receipt.poi):
        raise MalformedReceipt(
            f"bitmap marks {receipt.bitmap.bit_count()} siblings but poi holds {len(receipt.poi)}"
        )
    dsize = params.digest_size
    if len(receipt.log_digest) != dsize or any(len(d) != dsize for d in receipt.poi):
        raise MalformedReceipt("digest with wrong length")
    if any(len(d) != dsize for d in receipt.co_leaf):
        raise MalformedReceipt("co-leaf digest with wrong length")
    if not 0 <= receipt.ts < (1 << size):
        return None

    if receipt.co_leaf:
        pos = receipt.co_position
        if not 0 <= pos <= len(receipt.co_leaf):
            return None
        digests = list(receipt.co_leaf[:pos]) + [receipt.log_digest] + list(receipt.co_leaf[pos:])
        if any(a >= b for a, b in zip(digests, digests[1:])):
            return None
        cur = leaf_value(digests, params)
    else:
        if receipt.co_position:
            return None
        cur = receipt.log_digest

    empty = build_empty_hash_table(params)
    h = params.hash_constructor
    poi = iter(receipt.poi)
    x = receipt.ts
    for k in range(steps):
        sib = next(poi) if (receipt.bitmap >> k) & 1 else empty[size - k]
        cur = h(sib + cur).digest() if x & 1 else h(cur + sib).digest()
        x >>= 1
    return cur


def verify_receipt(receipt: Receipt, root: bytes, params: TreeParams) -> bool:
    """True iff the full receipt folds up to ``root``."""
    if receipt.partial_depth != 0:
        raise MalformedReceipt("partial receipt; finalize it against a receipt update first")
    node = _fold(receipt, params, 0)
    return node is not None and hmac.compare_digest(node, root)


def fold_level(level: Sequence[bytes], params: TreeParams) -> list[list[bytes]]:
    """Pairwise-fold a full level up to the root; returns ``[level, ..., [root]]``."""
    h = params.hash_constructor
    out = [list(level)]
    cur = out[0]
    while len(cur) > 1:
        cur = [h(cur[i] + cur[i + 1]).digest() for i in range(0, len(cur), 2)]
        out.append(cur)
    return out


def verify_update(update: ReceiptUpdate, root: bytes, params: TreeParams) -> bool:
    if len(update.level) != 1 << params.depth_u:
        raise WrongLength(f"update holds {len(update.level)} nodes, expected {1 << params.depth_u}")
    return hmac.compare_digest(fold_level(update.level, params)[-1][0], root)


def finalize_receipt(
    partial: Receipt,
    update: ReceiptUpdate,
    params: TreeParams,
    root: bytes | None = None,
) -> Receipt:
    """Complete a partial receipt with the sibling hashes derived from ``update``.

    When ``root`` is given the update is checked against it first.
    """
    u = params.depth_u
    size = params.size_ts
    if partial.partial_depth != u:
        raise MalformedReceipt(f"receipt stops at depth {partial.partial_depth}, update is at depth {u}")
    if update.epoch != partial.epoch:
        raise EpochMismatch(f"update for epoch {update.epoch}, receipt for epoch {partial.epoch}")
    if len(update.level) != 1 << u:
        raise WrongLength(f"update holds {len(update.level)} nodes, expected {1 << u}")
    folded = fold_level(update.level, params)
    if root is not None and not hmac.compare_digest(folded[-1][0], root):
        raise UpdateInconsistent("update does not fold to the trusted root")
    node = _fold(partial, params, u)
    branch = partial.ts >> (size - u)
    if node is None or not hmac.compare_digest(node, update.level[branch]):
        raise UpdateInconsistent(f"partial receipt does not reproduce update node {branch}")

    empty = build_empty_hash_table(params)
    poi = list(partial.poi)
    bitmap = partial.bitmap
    # folded[j] is the level at depth u - j
    for k in range(size - u, size):
        y = size - k
        sib = folded[u - y][(partial.ts >> (size - y)) ^ 1]
        if sib != empty[y]:
            poi.append(sib)
            bitmap |= 1 << k
    return replace(partial, poi=tuple(poi), bitmap=bitmap, partial_depth=0)
