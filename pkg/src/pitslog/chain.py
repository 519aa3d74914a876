"""Forward-integrity hash chain between a monitored device and the notary.

The device starts every epoch from a random seed ``h0`` and folds each log
digest into a single overwritten value ``h_i = H(h_{i-1} || digest_i)``.
Batches carry the value after their last entry; the first batch of an epoch
also carries the boundary pair ``(h_ep, h0)`` where ``h_ep`` is the final
value of the device's previous epoch.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Callable, Iterable

from .errors import MissingBoundary

HashFn = Callable[[bytes], bytes]


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def chain_extend(prev: bytes, log_digest: bytes, hash_fn: HashFn = _sha256) -> bytes:
    return hash_fn(prev + log_digest)


def fold_chain(start: bytes, digests: Iterable[bytes], hash_fn: HashFn = _sha256) -> bytes:
    cur = start
    for d in digests:
        cur = hash_fn(cur + d)
    return cur


def verify_batch_chain(known: bytes, digests: Iterable[bytes], claimed: bytes, hash_fn: HashFn = _sha256) -> bool:
    """True iff folding ``digests`` onto ``known`` yields ``claimed``."""
    return hmac.compare_digest(fold_chain(known, digests, hash_fn), claimed)


def close_epoch_check(expected_final: bytes | None, claimed_h_ep: bytes | None) -> bool:
    """Compare the notary's final chain value for an epoch with the device's ``h_ep``.

    ``expected_final`` is None when the epoch never received its boundary
    seed, in which case there is nothing to compare against.
    """
    if expected_final is None:
        raise MissingBoundary("epoch never received its (h_ep, h0) boundary")
    if claimed_h_ep is None:
        return False
    return hmac.compare_digest(expected_final, claimed_h_ep)


@dataclass
class ChainState:
    """Device-side chain: the only chain value ever retained is ``current``."""

    epoch: int
    current: bytes
    counter: int = 0

    def extend(self, log_digest: bytes, hash_fn: HashFn = _sha256) -> bytes:
        self.current = hash_fn(self.current + log_digest)
        self.counter += 1
        return self.current


@dataclass(frozen=True)
class Boundary:
    h_ep: bytes | None  # None for the first epoch a device ever reports
    h0: bytes


@dataclass(frozen=True)
class LogBatch:
    """Entries in submission (chain) order, never spanning an epoch boundary."""

    device: str
    epoch: int
    seq: int
    entries: tuple[tuple[int, bytes], ...]
    chain_value: bytes
    boundary: Boundary | None = None

    @property
    def digests(self) -> list[bytes]:
        return [d for _, d in self.entries]
