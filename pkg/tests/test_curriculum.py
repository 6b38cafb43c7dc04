"""Curriculum schedule: rolling-window advancement and its edge cases."""

import numpy as np

from boulderpick.curriculum import Curriculum


def feed(cur, wins, losses=0, order="wins_first"):
    seq = [True] * wins + [False] * losses
    if order == "losses_first":
        seq = [False] * losses + [True] * wins
    cur.record(np.array(seq, dtype=bool))
    return cur


def test_advances_just_above_threshold():
    cur = Curriculum(n_levels=3, window=1000, threshold=0.8)
    feed(cur, wins=801, losses=199)
    assert cur.level == 1
    # the new stage starts with a cleared record
    assert cur.success_rate == 0.0


def test_exact_threshold_does_not_advance():
    cur = Curriculum(n_levels=3, window=1000, threshold=0.8)
    feed(cur, wins=800, losses=200)
    assert cur.level == 0
    assert cur.success_rate == 0.8


def test_no_advance_before_window_fills():
    cur = Curriculum(n_levels=3, window=1000, threshold=0.8)
    feed(cur, wins=999)
    assert cur.level == 0
    assert cur.success_rate == 1.0


def test_rolling_window_forgets_old_losses():
    # 500 losses then successes: the 1000-episode window first fills with a
    # 50/50 mix, then the losses age out one per episode. 801 of the last
    # 1000 are wins after episode 1301.
    cur = Curriculum(n_levels=2, window=1000, threshold=0.8)
    feed(cur, wins=0, losses=500)
    for k in range(501, 1302):
        cur.record([True])
        if k < 1301:
            assert cur.level == 0, f"advanced early at episode {k}"
    assert cur.level == 1


def test_batch_record_matches_sequential():
    seq = (np.arange(2500) % 5) != 0  # 80% wins, scattered
    a = Curriculum(n_levels=4, window=1000, threshold=0.8)
    b = Curriculum(n_levels=4, window=1000, threshold=0.8)
    a.record(seq)
    for s in seq:
        b.record([s])
    assert a.level == b.level
    assert a.success_rate == b.success_rate


def test_stops_at_top_level():
    cur = Curriculum(n_levels=3, window=100, threshold=0.8)
    feed(cur, wins=100)
    assert cur.level == 1
    feed(cur, wins=100)
    assert cur.level == 2
    feed(cur, wins=500)
    assert cur.level == 2


def test_single_level_never_moves():
    cur = Curriculum(n_levels=1, window=100, threshold=0.8)
    feed(cur, wins=400)
    assert cur.level == 0


def test_never_moves_down():
    cur = Curriculum(n_levels=2, window=100, threshold=0.8)
    feed(cur, wins=100)
    assert cur.level == 1
    feed(cur, wins=0, losses=1000)
    assert cur.level == 1


def test_mid_batch_advance_records_tail_in_new_window():
    cur = Curriculum(n_levels=2, window=100, threshold=0.8)
    cur.record(np.ones(130, dtype=bool))
    assert cur.level == 1
    # 100 wins triggered the advance; the remaining 30 land in the new window
    assert cur.success_rate == 1.0
    assert cur.state_dict()["count"] == 30


def test_state_dict_roundtrip_preserves_behavior():
    rng = np.random.default_rng(7)
    tail = rng.random(600) < 0.85
    a = Curriculum(n_levels=4, window=200, threshold=0.8)
    a.record(rng.random(350) < 0.7)
    snap = a.state_dict()
    b = Curriculum(n_levels=4, window=200, threshold=0.8)
    b.load_state_dict(snap)
    assert b.level == a.level
    assert b.success_rate == a.success_rate
    a.record(tail)
    b.record(tail)
    assert b.level == a.level
    assert b.success_rate == a.success_rate
