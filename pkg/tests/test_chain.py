import hashlib
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import chain_fold
from pitslog.chain import ChainState, chain_extend, close_epoch_check, fold_chain, verify_batch_chain
from pitslog.errors import MissingBoundary

digest_lists = st.lists(st.binary(min_size=32, max_size=32), max_size=30)


@given(st.binary(min_size=32, max_size=32), digest_lists)
def test_fold_matches_oracle(h0, ds):
    assert fold_chain(h0, ds) == chain_fold(h0, ds)
    state = ChainState(0, h0)
    for d in ds:
        state.extend(d)
    assert state.current == chain_fold(h0, ds) and state.counter == len(ds)


@given(st.binary(min_size=32, max_size=32), digest_lists, st.integers(0, 29))
def test_batch_split_anywhere_verifies(h0, ds, cut):
    cut = min(cut, len(ds))
    mid = fold_chain(h0, ds[:cut])
    assert verify_batch_chain(mid, ds[cut:], chain_fold(h0, ds))


def test_any_change_breaks_the_chain():
    rng = random.Random(0)
    h0 = rng.randbytes(32)
    ds = [rng.randbytes(32) for _ in range(10)]
    final = fold_chain(h0, ds)
    assert not verify_batch_chain(h0, ds[:-1], final)  # truncated
    assert not verify_batch_chain(h0, ds[1:], final)  # head dropped
    assert not verify_batch_chain(h0, ds[:3] + [bytes(32)] + ds[4:], final)  # altered
    assert not verify_batch_chain(h0, [ds[1], ds[0]] + ds[2:], final)  # reordered


def test_extend_uses_given_hash():
    h = lambda b: hashlib.sha512(b).digest()
    assert chain_extend(b"a", b"b", h) == hashlib.sha512(b"ab").digest()


def test_close_epoch_check():
    assert close_epoch_check(b"x" * 32, b"x" * 32)
    assert not close_epoch_check(b"x" * 32, b"y" * 32)
    assert not close_epoch_check(b"x" * 32, None)
    with pytest.raises(MissingBoundary):
        close_epoch_check(None, b"x" * 32)
