"""Secret-indexed parity over the depth_p level of a finalised tree.

A parity secret is a list of distinct digest bit positions.  For each node on
the parity level the bits at those positions form one parity word; the notary
keeps the words and the secret private and later compares them with words
extracted from a validator's recomputed level.

Bit position ``b`` of a digest is bit ``7 - b % 8`` of byte ``b // 8``
(MSB-first).  Bit ``j`` of a parity word (LSB = 0) is the digest bit at
``positions[j]``.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Sequence

from .errors import AlreadyFinalized, InvalidParams, RecordCorrupt, WrongLength
from .params import TreeParams
from .tree import PitsTree, build_empty_hash_table


@dataclass(frozen=True)
class ParitySecret:
    positions: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.positions)) != len(self.positions):
            raise InvalidParams("parity secret positions must be distinct")


@dataclass(frozen=True)
class ParityRecord:
    """Per-epoch private state: root, parity words, secret and optional occupancy.

    With ``occupancy`` set, only sub-epochs marked occupied carry a parity word.
    """

    epoch: int
    root: bytes
    parity: tuple[int, ...]
    secret: ParitySecret
    occupancy: tuple[bool, ...] | None = None

    @property
    def n_subepochs(self) -> int:
        return len(self.occupancy) if self.occupancy is not None else len(self.parity)

    def public(self) -> dict:
        """The only part of the record that may leave the notary."""
        return {"epoch": self.epoch, "root": self.root.hex()}


def gen_secret(size_p: int, digest_bits: int, rng=None) -> ParitySecret:
    """Draw ``size_p`` distinct bit positions in ``[0, digest_bits)``.

    ``rng`` must provide ``sample``; it defaults to the OS CSPRNG.  Seeded
    generators are for reproducible simulations only.
    """
    if not 1 <= size_p <= digest_bits:
        raise InvalidParams(f"cannot draw {size_p} distinct positions from {digest_bits} bits")
    rng = rng or secrets.SystemRandom()
    return ParitySecret(tuple(rng.sample(range(digest_bits), size_p)))


def extract_parity(level: Sequence[bytes], secret: ParitySecret) -> list[int]:
    n = len(level)
    if n == 0 or n & (n - 1):
        raise WrongLength(f"parity level must hold a power of two nodes, got {n}")
    nbits = 8 * len(level[0])
    shifts = [(nbits - 1 - pos, j) for j, pos in enumerate(secret.positions)]
    words = []
    for digest in level:
        value = int.from_bytes(digest, "big")
        word = 0
        for shift, j in shifts:
            word |= ((value >> shift) & 1) << j
        words.append(word)
    return words


def finalize_tree(tree: PitsTree, rng=None, omit_empty: bool = False) -> ParityRecord:
    """Close the tree and compute its parity record.

    ``omit_empty`` drops the words of sub-epochs whose node is the empty hash
    and records which ones remain in ``occupancy``.
    """
    if tree.finalized:
        raise AlreadyFinalized(f"tree for epoch {tree.epoch} is already finalized")
    params = tree.params
    secret = gen_secret(params.size_p, params.digest_bits, rng)
    level = tree.level_hashes(params.depth_p)
    words = extract_parity(level, secret)
    occupancy = None
    if omit_empty:
        empty = tree.empty[params.depth_p]
        occupancy = tuple(node != empty for node in level)
        words = [w for w, occ in zip(words, occupancy) if occ]
    tree.finalized = True
    return ParityRecord(tree.epoch, tree.root, tuple(words), secret, occupancy)


def compare_parity(stored: ParityRecord, candidate_level: Sequence[bytes], params: TreeParams) -> list[int]:
    """Ascending sub-epoch indices whose recomputed parity differs from ``stored``."""
    n = stored.n_subepochs
    if len(candidate_level) != n:
        raise WrongLength(f"candidate level holds {len(candidate_level)} nodes, expected {n}")
    words = extract_parity(candidate_level, stored.secret)
    if stored.occupancy is None:
        return [i for i, (a, b) in enumerate(zip(words, stored.parity)) if a != b]

    empty = build_empty_hash_table(params)[params.depth_p]
    out = []
    it = iter(stored.parity)
    for i, occupied in enumerate(stored.occupancy):
        candidate_empty = candidate_level[i] == empty
        if occupied:
            if candidate_empty or words[i] != next(it):
                out.append(i)
        elif not candidate_empty:
            out.append(i)
    return out


# binary layout: root || secret || parity [|| occupancy], each section byte-aligned


def _position_bits(params: TreeParams) -> int:
    bits = params.digest_bits.bit_length() - 1
    if 1 << bits != params.digest_bits:
        raise InvalidParams("digest bit-length must be a power of two")
    return bits


def _pack(values: Sequence[int], width: int) -> bytes:
    acc = 0
    for v in values:
        acc = (acc << width) | v
    total = width * len(values)
    pad = -total % 8
    return (acc << pad).to_bytes((total + pad) // 8, "big")


def _unpack(data: bytes, width: int, count: int) -> list[int]:
    total = width * count
    acc = int.from_bytes(data, "big") >> (8 * len(data) - total)
    mask = (1 << width) - 1
    return [(acc >> (width * (count - 1 - i))) & mask for i in range(count)]


def _packed_len(width: int, count: int) -> int:
    return (width * count + 7) // 8


def body_size(params: TreeParams, n_words: int | None = None, occupancy: bool = False) -> int:
    """Serialized size of a parity record body (root + secret + parity [+ occupancy])."""
    if n_words is None:
        n_words = params.n_subepochs
    size = params.digest_size
    size += _packed_len(_position_bits(params), params.size_p)
    size += _packed_len(params.size_p, n_words)
    if occupancy:
        size += _packed_len(1, params.n_subepochs)
    return size


def encode_body(record: ParityRecord, params: TreeParams) -> bytes:
    out = [record.root, _pack(record.secret.positions, _position_bits(params)), _pack(record.parity, params.size_p)]
    if record.occupancy is not None:
        out.append(_pack([int(o) for o in record.occupancy], 1))
    return b"".join(out)


def decode_body(data: bytes, params: TreeParams, epoch: int, occupancy: bool = False) -> ParityRecord:
    dsize = params.digest_size
    pbits = _position_bits(params)
    root = data[:dsize]
    off = dsize
    slen = _packed_len(pbits, params.size_p)
    positions = _unpack(data[off : off + slen], pbits, params.size_p)
    off += slen
    occ = None
    n_words = params.n_subepochs
    if occupancy:
        olen = _packed_len(1, params.n_subepochs)
        if len(data) < off + olen:
            raise RecordCorrupt("parity record body truncated")
        occ = tuple(bool(b) for b in _unpack(data[len(data) - olen :], 1, params.n_subepochs))
        n_words = sum(occ)
    plen = _packed_len(params.size_p, n_words)
    expected = off + plen + (_packed_len(1, params.n_subepochs) if occupancy else 0)
    if len(data) != expected or len(root) != dsize:
        raise RecordCorrupt(f"parity record body is {len(data)} bytes, expected {expected}")
    words = _unpack(data[off : off + plen], params.size_p, n_words) if n_words else []
    try:
        secret = ParitySecret(tuple(positions))
    except InvalidParams as exc:
        raise RecordCorrupt(str(exc)) from exc
    return ParityRecord(epoch, root, tuple(words), secret, occ)
