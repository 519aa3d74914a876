"""The oracles themselves, checked on cases small enough to do by hand."""

import hashlib

from oracles import H, chain_fold, dense_level, dense_root, digest_bit, parity_words, proof_length, storage_bytes


def sha(b):
    return hashlib.sha256(b).digest()


def test_dense_root_of_empty_two_level_tree():
    e2 = sha(b"")
    e1 = sha(e2 + e2)
    assert dense_root([], 2) == sha(e1 + e1)


def test_dense_root_single_leaf_by_hand():
    d = sha(b"log")
    e2 = sha(b"")
    # size_ts=2, log at offset 2: root = H(E1 || H(d || E2))
    assert dense_root([(2, d)], 2) == sha(sha(e2 + e2) + sha(d + e2))


def test_shared_leaf_sorts_before_hashing():
    a, b = sha(b"a"), sha(b"b")
    lo, hi = sorted([a, b])
    assert dense_level([(0, b), (0, a)], 1, 1)[0] == sha(lo + hi)


def test_digest_bit_msb_first():
    d = bytes([0b1000_0001, 0b0100_0000])
    assert [digest_bit(d, i) for i in (0, 1, 7, 8, 9)] == [1, 0, 1, 0, 1]


def test_parity_word_bit_order():
    d = bytes([0b1010_0000])
    assert parity_words([d], [0, 1, 2]) == [0b101]
    assert parity_words([d], [2, 1]) == [0b01]


def test_chain_fold_by_hand():
    h0, d1, d2 = b"\0" * 32, sha(b"1"), sha(b"2")
    assert chain_fold(h0, [d1, d2]) == sha(sha(h0 + d1) + d2)


def test_storage_formula_reference_points():
    assert storage_bytes(256, 16, 12) == 8240
    assert storage_bytes(256, 10, 12) == 5162
    assert storage_bytes(256, 16, 11) == 4144


def test_proof_length_counts_nonempty_siblings():
    # size_ts=3, logs at 0 and 1: the only non-empty sibling of 0 is 1
    assert proof_length([(0, b""), (1, b"")], 0, 3) == 1
    assert proof_length([(0, b""), (7, b"")], 0, 3) == 1
    assert proof_length([(0, b""), (2, b""), (4, b"")], 0, 3) == 2


def test_H_defaults_to_sha256():
    assert H(b"x") == sha(b"x")
