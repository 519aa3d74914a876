import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import parity_words, storage_bytes
from pitslog.errors import AlreadyFinalized, InvalidParams, RecordCorrupt, WrongLength
from pitslog.params import RUNNING_EXAMPLE, TreeParams
from pitslog.parity import (
    ParityRecord,
    ParitySecret,
    body_size,
    compare_parity,
    decode_body,
    encode_body,
    extract_parity,
    finalize_tree,
    gen_secret,
)
from pitslog.tree import PitsTree, build_empty_hash_table

SMALL = TreeParams(size_ts=8, depth_p=3, size_p=6, depth_u=2, epoch_duration=25, ticks_per_second=10)


def tree_with(p, entries):
    t = PitsTree(p)
    t.add_logs(entries)
    return t


def random_tree(p, n, seed):
    rng = random.Random(seed)
    return tree_with(p, [(rng.randrange(1 << p.size_ts), rng.randbytes(p.digest_size)) for _ in range(n)])


@given(
    st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=16).filter(lambda l: len(l) & (len(l) - 1) == 0),
    st.lists(st.integers(0, 255), min_size=1, max_size=24, unique=True),
)
@settings(max_examples=200, deadline=None)
def test_extract_parity_matches_bit_oracle(level, positions):
    assert extract_parity(level, ParitySecret(tuple(positions))) == parity_words(level, positions)


def test_extract_parity_rejects_non_power_of_two():
    with pytest.raises(WrongLength):
        extract_parity([bytes(32)] * 3, ParitySecret((0,)))


def test_secret_positions_are_distinct_and_in_range():
    s = gen_secret(16, 256, random.Random(1))
    assert len(set(s.positions)) == 16 and all(0 <= b < 256 for b in s.positions)
    with pytest.raises(InvalidParams):
        ParitySecret((1, 1))
    with pytest.raises(InvalidParams):
        gen_secret(257, 256)
    assert len(gen_secret(4, 256).positions) == 4  # OS randomness path


def test_finalize_marks_tree_and_rejects_second_call():
    t = random_tree(SMALL, 20, 1)
    rec = finalize_tree(t, random.Random(2))
    assert t.finalized and rec.root == t.root
    assert len(rec.parity) == SMALL.n_subepochs
    assert list(rec.parity) == parity_words(t.level_hashes(SMALL.depth_p), rec.secret.positions)
    with pytest.raises(AlreadyFinalized):
        finalize_tree(t)


def test_untampered_level_has_no_mismatch():
    t = random_tree(SMALL, 50, 3)
    rec = finalize_tree(t, random.Random(4))
    assert compare_parity(rec, t.level_hashes(SMALL.depth_p), SMALL) == []


def test_changed_node_flagged_when_selected_bits_differ():
    t = random_tree(SMALL, 50, 5)
    level = t.level_hashes(SMALL.depth_p)
    # choose the secret so that it reads a bit where the nodes differ
    forged = bytearray(level[2])
    forged[0] ^= 0x80
    secret = ParitySecret((0, 9, 17))
    rec = ParityRecord(0, t.root, tuple(extract_parity(level, secret)), secret)
    candidate = list(level)
    candidate[2] = bytes(forged)
    assert compare_parity(rec, candidate, SMALL) == [2]
    # a change outside the selected bits is invisible to this secret
    forged = bytearray(level[2])
    forged[31] ^= 1
    candidate[2] = bytes(forged)
    assert compare_parity(rec, candidate, SMALL) == []


def test_compare_wrong_length():
    t = random_tree(SMALL, 5, 6)
    rec = finalize_tree(t, random.Random(0))
    with pytest.raises(WrongLength):
        compare_parity(rec, [bytes(32)] * 4, SMALL)


def test_omitted_empty_subepochs():
    t = tree_with(SMALL, [(0, b"\1" * 32), (200, b"\2" * 32)])
    rec = finalize_tree(t, random.Random(7), omit_empty=True)
    assert rec.occupancy == (True, False, False, False, False, False, True, False)
    assert len(rec.parity) == 2
    level = t.level_hashes(SMALL.depth_p)
    assert compare_parity(rec, level, SMALL) == []
    # a log inserted into an empty sub-epoch is always flagged
    forged = tree_with(SMALL, [(0, b"\1" * 32), (200, b"\2" * 32), (100, b"\3" * 32)])
    assert compare_parity(rec, forged.level_hashes(SMALL.depth_p), SMALL) == [3]
    # wiping an occupied sub-epoch is always flagged
    wiped = list(level)
    wiped[6] = build_empty_hash_table(SMALL)[SMALL.depth_p]
    assert compare_parity(rec, wiped, SMALL) == [6]


@pytest.mark.parametrize(
    "params",
    [
        RUNNING_EXAMPLE,
        replace(RUNNING_EXAMPLE, size_p=10),
        replace(RUNNING_EXAMPLE, depth_p=11),
        replace(RUNNING_EXAMPLE, hash_id=2),
        SMALL,
    ],
)
def test_body_size_matches_storage_formula(params):
    assert body_size(params) == storage_bytes(params.digest_bits, params.size_p, params.depth_p)


@pytest.mark.parametrize("omit", [False, True])
def test_body_roundtrip(omit):
    t = random_tree(SMALL, 12, 8)
    rec = finalize_tree(t, random.Random(9), omit_empty=omit)
    data = encode_body(rec, SMALL)
    assert len(data) == body_size(SMALL, len(rec.parity), occupancy=omit)
    assert decode_body(data, SMALL, 0, occupancy=omit) == rec


def test_decode_rejects_truncated_and_duplicate_positions():
    t = random_tree(SMALL, 12, 10)
    rec = finalize_tree(t, random.Random(11))
    data = encode_body(rec, SMALL)
    with pytest.raises(RecordCorrupt):
        decode_body(data[:-1], SMALL, 0)
    bad = replace(rec, secret=ParitySecret.__new__(ParitySecret))
    object.__setattr__(bad.secret, "positions", (3, 3, 4, 5, 6, 7))
    with pytest.raises(RecordCorrupt):
        decode_body(encode_body(bad, SMALL), SMALL, 0)


def test_public_view_hides_secret_and_parity():
    t = random_tree(SMALL, 3, 12)
    rec = finalize_tree(t, random.Random(13))
    assert set(rec.public()) == {"epoch", "root"}
