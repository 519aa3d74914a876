"""Tree parameters and the mapping between wall-clock ticks and tree addresses.

Absolute time is an integer count of *ticks* (``ticks_per_second`` per
second, milliseconds by default) since the Unix epoch.  Within an epoch a tick
``r`` is mapped to the leaf address ``floor(r * 2**size_ts / epoch_ticks)``.
Because ``2**size_ts >= epoch_ticks`` this mapping is injective, and since
floors nest, the top ``y`` bits of the address equal
``floor(r * 2**y / epoch_ticks)``: every node at depth ``y`` covers exactly
``epoch_duration / 2**y`` seconds of wall-clock time.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import cached_property

from .errors import InvalidParams

HASH_FUNCTIONS = {
    1: "sha256",
    2: "sha512",
    3: "sha3_256",
    4: "blake2s",
}
HASH_IDS = {name: hid for hid, name in HASH_FUNCTIONS.items()}


@dataclass(frozen=True)
class TreeParams:
    size_ts: int = 22
    depth_p: int = 12
    size_p: int = 16
    depth_u: int = 10
    epoch_duration: int = 3600
    ticks_per_second: int = 1000
    hash_id: int = 1

    def __post_init__(self):
        if self.hash_id not in HASH_FUNCTIONS:
            raise InvalidParams(f"unknown hash_id {self.hash_id}")
        if not 1 <= self.size_ts <= 63:
            raise InvalidParams("size_ts must be in [1, 63]")
        if not 1 <= self.depth_p <= self.size_ts:
            raise InvalidParams("need 1 <= depth_p <= size_ts")
        if not 1 <= self.depth_u <= self.size_ts:
            raise InvalidParams("need 1 <= depth_u <= size_ts")
        if not 1 <= self.size_p <= self.digest_bits:
            raise InvalidParams("need 1 <= size_p <= digest bit-length")
        if self.epoch_duration < 1 or self.ticks_per_second < 1:
            raise InvalidParams("epoch_duration and ticks_per_second must be positive")
        if (1 << self.size_ts) < self.epoch_ticks:
            raise InvalidParams(
                f"2**size_ts={1 << self.size_ts} cannot address {self.epoch_ticks} ticks per epoch"
            )

    # hashing

    @property
    def hash_name(self) -> str:
        return HASH_FUNCTIONS[self.hash_id]

    @cached_property
    def hash_constructor(self):
        return getattr(hashlib, self.hash_name)

    @cached_property
    def digest_size(self) -> int:
        return hashlib.new(self.hash_name).digest_size

    @property
    def digest_bits(self) -> int:
        return 8 * self.digest_size

    def hash(self, data: bytes) -> bytes:
        return self.hash_constructor(data).digest()

    # time mapping

    @property
    def epoch_ticks(self) -> int:
        return self.epoch_duration * self.ticks_per_second

    @property
    def n_subepochs(self) -> int:
        return 1 << self.depth_p

    def epoch_of(self, tick: int) -> int:
        return tick // self.epoch_ticks

    def epoch_start(self, epoch: int) -> int:
        return epoch * self.epoch_ticks

    def address(self, tick: int) -> tuple[int, int]:
        """Return ``(epoch, leaf offset)`` for an absolute tick."""
        epoch, r = divmod(tick, self.epoch_ticks)
        return epoch, (r << self.size_ts) // self.epoch_ticks

    def tick_of(self, epoch: int, offset: int) -> int:
        """Smallest absolute tick whose address is ``offset`` (exact inverse on the image)."""
        r = -((-offset * self.epoch_ticks) >> self.size_ts)
        return self.epoch_start(epoch) + r

    def node_index(self, offset: int, depth: int) -> int:
        return offset >> (self.size_ts - depth)

    def subepoch_of(self, offset: int) -> int:
        return offset >> (self.size_ts - self.depth_p)

    def subepoch_window(self, epoch: int, index: int) -> tuple[Fraction, Fraction]:
        """Half-open ``[start, end)`` interval of sub-epoch ``index`` in Unix seconds."""
        width = Fraction(self.epoch_duration, self.n_subepochs)
        start = self.epoch_duration * epoch + index * width
        return start, start + width

    def branch_final_at(self, epoch: int, offset: int) -> int:
        """First absolute tick at which the depth_u branch covering ``offset`` is closed."""
        i = offset >> (self.size_ts - self.depth_u)
        r = -((-(i + 1) * self.epoch_ticks) >> self.depth_u)
        return self.epoch_start(epoch) + r

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TreeParams":
        return cls(**{k: int(v) for k, v in d.items() if k in cls.__dataclass_fields__})


RUNNING_EXAMPLE = TreeParams()
# small parameters used by the harness and tests: 60 s epochs at 100 ms resolution
HARNESS_DEFAULT = TreeParams(
    size_ts=10, depth_p=5, size_p=4, depth_u=3, epoch_duration=60, ticks_per_second=10
)
