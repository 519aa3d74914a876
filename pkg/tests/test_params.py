from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pitslog.errors import InvalidParams
from pitslog.params import HARNESS_DEFAULT, RUNNING_EXAMPLE, TreeParams


def test_running_example_defaults():
    p = RUNNING_EXAMPLE
    assert (p.size_ts, p.depth_p, p.size_p, p.depth_u, p.epoch_duration) == (22, 12, 16, 10, 3600)
    assert p.digest_size == 32 and p.hash_name == "sha256"
    assert p.epoch_ticks == 3_600_000 < 1 << 22


def test_subepoch_window_width():
    start, end = RUNNING_EXAMPLE.subepoch_window(0, 0)
    assert end - start == Fraction(3600, 4096)  # about 0.879 s
    start, end = HARNESS_DEFAULT.subepoch_window(5, 31)
    assert end == 6 * 60 and end - start == Fraction(60, 32)


@given(st.integers(0, 10**13))
def test_address_is_consistent_with_windows(tick):
    p = RUNNING_EXAMPLE
    epoch, offset = p.address(tick)
    assert epoch == p.epoch_of(tick) and 0 <= offset < 1 << p.size_ts
    start, end = p.subepoch_window(epoch, p.subepoch_of(offset))
    assert start <= Fraction(tick, p.ticks_per_second) < end


@given(st.integers(0, 10**9))
def test_tick_of_inverts_address(tick):
    p = HARNESS_DEFAULT
    epoch, offset = p.address(tick)
    back = p.tick_of(epoch, offset)
    assert back == tick  # injective: each tick owns its offset
    assert p.address(back) == (epoch, offset)


def test_address_is_monotone_and_injective_over_an_epoch():
    p = TreeParams(size_ts=7, depth_p=2, size_p=2, depth_u=2, epoch_duration=10, ticks_per_second=10)
    offsets = [p.address(t)[1] for t in range(p.epoch_ticks)]
    assert offsets == sorted(set(offsets))


def test_branch_final_at():
    p = RUNNING_EXAMPLE
    # depth_u=10 over an hour: a branch closes every 3600/1024 s
    assert p.branch_final_at(0, 0) == 3516  # ceil(3515.625 ms)
    last = (1 << p.size_ts) - 1
    assert p.branch_final_at(2, last) == p.epoch_start(3)


@pytest.mark.parametrize(
    "kw",
    [
        {"size_ts": 0},
        {"depth_p": 23},
        {"depth_u": 0},
        {"size_p": 257},
        {"hash_id": 99},
        {"size_ts": 21},  # 2**21 < 3.6e6 ticks per epoch
        {"epoch_duration": 0},
    ],
)
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        TreeParams(**kw)


def test_dict_roundtrip_and_hash_variants():
    for hid, size in ((1, 32), (2, 64), (3, 32), (4, 32)):
        p = TreeParams(hash_id=hid)
        assert p.digest_size == size
        assert TreeParams.from_dict(p.to_dict()) == p
