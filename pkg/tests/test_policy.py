import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ContextBanditEnv
from qact.config import PolicyConfig
from qact.policy import (
    ALL_STATES, QTable, QueryPolicy, Shape, StateKey, UncertaintyHistogram, action_values, build_histogram,
    classify_shape, featurize_state, init_qtable, learning_rate, q_update, reward, select_action_bge,
    select_action_greedy, train_policy, uncertainty, write_training_log,
)

unit = st.floats(0, 1, allow_nan=False)
S0 = StateKey(0, 0, Shape.CERTAIN_SKEWED)
S1 = StateKey(9, 0, Shape.UNCERTAIN_SKEWED)


def hist_at(us, n=100, counts=None):
    bins = np.zeros(n, np.int64)
    for j, u in enumerate(us):
        bins[min(int(u * n), n - 1)] += 1 if counts is None else counts[j]
    return UncertaintyHistogram(bins)


def test_uncertainty_examples():
    assert uncertainty(0.5) == 1.0
    assert uncertainty(1.0) == 0.0
    assert uncertainty(0.75) == 0.5


@given(st.integers(0, 2**20))
def test_uncertainty_symmetric(k):
    d = k / 2**21  # dyadic, so 0.5 +- d is exact
    assert uncertainty(0.5 + d) == uncertainty(0.5 - d)


def test_histogram_examples():
    assert build_histogram([0.5] * 7).bins[-1] == 7
    assert build_histogram([0.0, 1.0, 1.0]).bins[0] == 3
    assert build_histogram([0, 0.25, 0.75, 1], n_bins=4).bins.tolist() == [2, 0, 2, 0]
    with pytest.raises(ValueError):
        build_histogram([])


@given(st.lists(unit, min_size=1, max_size=300))
def test_histogram_keeps_every_sample(scores):
    assert build_histogram(scores).total == len(scores)


@given(st.lists(unit, min_size=1, max_size=100))
def test_state_invariant_under_duplication(scores):
    assert featurize_state(build_histogram(scores)) == featurize_state(build_histogram(scores * 2))


def test_featurize_examples():
    assert featurize_state(hist_at([0.0])) == StateKey(0, 0, Shape.CERTAIN_SKEWED)
    assert featurize_state(hist_at([1.0])) == StateKey(9, 0, Shape.UNCERTAIN_SKEWED)
    assert featurize_state(hist_at([0.0, 1.0])) == StateKey(5, 4, Shape.BIMODAL)


def test_shape_examples():
    assert classify_shape(hist_at([0.05])) == Shape.CERTAIN_SKEWED
    assert classify_shape(hist_at([0.1, 0.9])) == Shape.BIMODAL
    assert classify_shape(UncertaintyHistogram(np.ones(100, np.int64))) == Shape.FLAT
    # one dominant peak with a small far bump below the 5% floor stays skewed
    assert classify_shape(hist_at([0.0, 0.9], counts=[97, 3])) == Shape.CERTAIN_SKEWED


def test_action_set():
    d = action_values(25)
    assert d[0] == 0.0 and d[-1] == 0.5
    assert np.allclose(np.diff(d), 1 / 48)


@pytest.mark.parametrize("iou,streak,expected", [
    (0.95, 1, 2.85), (0.7, 1, 0.7), (0.4, 2, 0.0), (0.4, 5, -3.0), (0.5, 3, 0.5), (0.9, 1, 0.9),
])
def test_reward_examples(iou, streak, expected):
    assert reward(iou, streak) == pytest.approx(expected, abs=1e-12)


def test_flat_reward_mode():
    assert reward(0.95, 1, mode="flat") == 3.0
    assert reward(0.7, 1, mode="flat") == 0.7


def test_q_update_examples():
    t = init_qtable(0)
    t.row(S0)[3] = 0.0
    assert q_update(t, S0, 3, 1.0, None, True, 1.0) == 1.0
    assert t.row(S0)[3] == 1.0 and t.counts[S0][3] == 1
    t.row(S1)[:] = 0.0
    t.row(S1)[5] = 2.0
    q_update(t, S0, 4, 1.0, S1, False, 1.0)
    assert t.row(S0)[4] == pytest.approx(2.98)
    before = t.row(S0).copy()
    q_update(t, S0, 7, 5.0, S1, False, 0.0)
    assert np.array_equal(t.row(S0), before)


def test_sarsa_target_uses_next_action():
    t = init_qtable(0)
    t.row(S1)[:] = 0.0
    t.row(S1)[2] = 4.0
    assert q_update(t, S0, 0, 1.0, S1, False, 1.0, next_action=1) == 1.0
    assert q_update(t, S0, 0, 1.0, S1, False, 1.0) == pytest.approx(1.0 + 0.99 * 4.0)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1), st.floats(-5, 5))
def test_q_update_contraction(q0, r, lr, nxt):
    t = init_qtable(1)
    t.row(S0)[0] = q0
    t.row(S1)[:] = nxt
    target = q_update(t, S0, 0, r, S1, False, lr)
    assert abs(t.row(S0)[0] - target) <= (1 - lr) * abs(q0 - target) + 1e-9


def test_bge_zero_scale_is_greedy():
    t = init_qtable(2)
    rng = np.random.default_rng(0)
    assert all(select_action_bge(t, S0, 0.0, rng) == int(np.argmax(t.row(S0))) for _ in range(20))


def test_bge_uniform_when_tied():
    t = init_qtable(0)
    t.row(S0)[:] = 0.0
    rng = np.random.default_rng(11)
    n = 100_000
    picks = np.bincount([select_action_bge(t, S0, 0.5, rng) for _ in range(n)], minlength=25) / n
    assert np.all(np.abs(picks - 1 / 25) <= 0.02)
    # and much tighter than that: within five binomial standard deviations
    assert np.all(np.abs(picks - 1 / 25) <= 5 * np.sqrt(0.04 * 0.96 / n))


def test_bge_anneals_to_greedy():
    t = init_qtable(3)
    t.counts[S0] = t.visits(S0) + 10**12
    rng = np.random.default_rng(0)
    assert all(select_action_bge(t, S0, 0.5, rng) == int(np.argmax(t.row(S0))) for _ in range(50))


def test_greedy_rules():
    t = init_qtable(0)
    assert select_action_greedy(t, S0) == 12  # unseen
    t.row(S0)[:] = 0.0
    t.row(S0)[1] = 1.0
    t.row(S0)[2] = 0.5
    t.counts[S0][1] = 1
    assert select_action_greedy(t, S0) == 1
    t.row(S1)[:] = 2.0
    t.counts[S1][0] = 3
    assert select_action_greedy(t, S1) == 12  # flat row


@given(st.lists(st.floats(-100, 100), min_size=25, max_size=25), st.floats(-50, 50))
def test_greedy_shift_invariant(row, c):
    t = init_qtable(0)
    t.row(S0)[:] = row
    t.counts[S0][0] = 1
    a = select_action_greedy(t, S0)
    t.row(S0)[:] = np.array(row) + c
    if len(set(np.array(row) + c)) == len(set(row)):  # shifting must not merge values by rounding
        assert select_action_greedy(t, S0) == a


def test_initial_rows():
    t = init_qtable(5)
    rows = np.array([t.initial_row(s) for s in ALL_STATES])
    assert np.all(rows > 0) and np.all(rows < 0.1)
    assert np.array_equal(init_qtable(5).initial_row(S1), t.initial_row(S1))
    assert len(set(ALL_STATES)) == 200


def test_qtable_json_round_trip(tmp_path):
    t, _ = train_policy(ContextBanditEnv(seed=1), 30, PolicyConfig(), seed=4)
    t.save(tmp_path / "q.json")
    back = QTable.load(tmp_path / "q.json")
    assert back == t
    back.save(tmp_path / "q2.json")
    assert (tmp_path / "q.json").read_bytes() == (tmp_path / "q2.json").read_bytes()


def test_zero_episodes_is_fresh_table():
    t, log = train_policy(ContextBanditEnv(), 0, PolicyConfig(), seed=3)
    assert t == init_qtable(3) and log == []


def test_training_log_and_exhaustion(tmp_path):
    t, log = train_policy(ContextBanditEnv(limit=5), 5, PolicyConfig(), seed=0)
    assert len(log) == 5 and [r.episode for r in log] == list(range(5))
    write_training_log(log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,total_reward,mean_iou,queried_fraction" and len(lines) == 6
    with pytest.raises(RuntimeError, match="exhausted"):
        train_policy(ContextBanditEnv(limit=3), 5, PolicyConfig())


def test_resume_matches_one_long_run():
    cfg = PolicyConfig()
    full, _ = train_policy(ContextBanditEnv(seed=2), 40, cfg, seed=6)
    half, _ = train_policy(ContextBanditEnv(seed=2), 20, cfg, seed=6)
    visits_before = {s: half.counts[s].copy() for s in half.counts}
    resumed, _ = train_policy(ContextBanditEnv(seed=2, start=20), 20, cfg, table=half, seed=6)
    assert resumed == full
    assert all(np.all(resumed.counts[s] >= v) for s, v in visits_before.items())


@settings(max_examples=5)
@given(st.integers(0, 1000))
def test_learning_rate_decays(n):
    assert learning_rate(0) == 1.0
    assert learning_rate(n + 1) < learning_rate(n)


def test_query_policy_maps_actions_to_margins():
    t = init_qtable(0)
    t.row(S0)[:] = 0.0
    t.row(S0)[24] = 1.0
    t.counts[S0][24] = 1
    assert QueryPolicy(t).select(hist_at([0.0] * 5)) == (0.5, 24)
    assert QueryPolicy(t).select(hist_at([1.0] * 5)) == (0.25, 12)
