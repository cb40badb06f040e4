import pytest

from darsim.core import LogEntry, MembershipChange, Payload
from darsim.sleepyab import EpochAbInstance, RejectedInput, Unavailable


def test_inputs_decided_after_latency():
    ab = EpochAbInstance(1, {0, 1, 2}, epoch_len=5, latency=2, history=(LogEntry(Payload(b"old"), 0),))
    ab.set_awake({0, 1})
    ab.submit(0, b"a", 5)
    ab.advance(6)
    assert ab.decided_log(0, 6) == (LogEntry(Payload(b"old"), 0),)
    ab.advance(7)
    assert ab.decided_log(1, 7)[-1] == LogEntry(Payload(b"a"), 1)
    with pytest.raises(Unavailable):
        ab.decided_log(2, 7)


def test_window_closes_before_epoch_end():
    ab = EpochAbInstance(0, {0, 1}, epoch_len=4, latency=2)
    assert ab.window_open(1) and not ab.window_open(2)
    with pytest.raises(RejectedInput):
        ab.submit(0, b"late", 2)
    ab.submit(0, b"ok", 1)
    ab.advance(3)
    assert ab.final_log() == (LogEntry(Payload(b"ok"), 0),)


def test_membership_proposals():
    ab = EpochAbInstance(0, {0, 1}, epoch_len=4, latency=1)
    with pytest.raises(RejectedInput):
        ab.submit(0, MembershipChange({2, 3}), 0)
    with pytest.raises(RejectedInput):
        ab.submit(None, MembershipChange({2}), 0, adversary=True)
    ab.submit(None, MembershipChange({2, 3}), 0, adversary=True)
    ab.advance(3)
    assert ab.epoch_handoff() == {2, 3}


def test_bad_latency():
    with pytest.raises(ValueError):
        EpochAbInstance(0, {0}, epoch_len=2, latency=2)
    with pytest.raises(TypeError):
        EpochAbInstance(0, {0}, epoch_len=4).submit(0, 5, 0)
