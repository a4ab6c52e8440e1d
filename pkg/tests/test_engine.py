import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from spatialpop import geometry
from spatialpop.engine import (FixedPairs, GroundTruth, PairStream, Protocol, QueryModel,
                               StopRule, TrialAborted, evaluate_query, run_trial, schedule_pair,
                               trial_rngs, verify_silence)


# ----------------------------------------------------------------------------
# toy protocols
# ----------------------------------------------------------------------------


class MaxSpread(Protocol):
    """Both agents take the larger value; converges when all equal."""

    name = "max"

    def transition(self, u, v, datum):
        m = max(u, v)
        return m, m

    def converged(self, config, gt):
        return len(set(config)) == 1

    def bound(self, n):
        return math.log(n)


class Exploding(MaxSpread):
    """Raises a geometry error on the first interaction touching agent 0."""

    def transition(self, u, v, datum):
        if u == -1 or v == -1:
            raise geometry.InconsistentAnchorsError("boom")
        return super().transition(u, v, datum)


def line_gt(n):
    return GroundTruth(np.arange(n, dtype=float).reshape(n, 1))


# ----------------------------------------------------------------------------
# ground truth and queries
# ----------------------------------------------------------------------------


def test_ground_truth_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        GroundTruth(np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]))


def test_ground_truth_rejects_bad_leader():
    with pytest.raises(ValueError):
        GroundTruth(np.array([[0.0], [1.0]]), leader_index=3)


def test_general_position_reports_indices():
    gt = GroundTruth(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 1.0]]))
    gt.check_general_position([0, 1, 3])
    with pytest.raises(geometry.DegenerateGeometryError) as exc:
        gt.check_general_position([0, 1, 2])
    assert tuple(exc.value.indices) == (0, 1, 2)


def test_queries_symmetric_and_antisymmetric():
    gt = GroundTruth(np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert evaluate_query(gt, 0, 1, QueryModel.SYMMETRIC_DISTANCE) == 5.0
    assert evaluate_query(gt, 1, 0, QueryModel.SYMMETRIC_DISTANCE) == 5.0
    assert evaluate_query(gt, 0, 1, QueryModel.INITIATOR_VECTOR) == (3.0, 4.0)
    assert evaluate_query(gt, 1, 0, QueryModel.INITIATOR_VECTOR) == (-3.0, -4.0)
    with pytest.raises(ValueError):
        evaluate_query(gt, 1, 1, QueryModel.SYMMETRIC_DISTANCE)


# ----------------------------------------------------------------------------
# scheduler
# ----------------------------------------------------------------------------


def test_pairs_uniform_over_ordered_pairs():
    n, m = 5, 200_000
    init, resp = PairStream(np.random.default_rng(7), n).take(m)
    counts = np.zeros((n, n), int)
    np.add.at(counts, (init, resp), 1)
    assert np.all(np.diag(counts) == 0)
    observed = counts[~np.eye(n, dtype=bool)]
    assert stats.chisquare(observed).pvalue > 1e-4


@given(st.integers(2, 50), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_pairs_distinct_and_in_range(n, seed):
    init, resp = PairStream(np.random.default_rng(seed), n, block=64).take(300)
    assert np.all(init != resp)
    assert init.min() >= 0 and resp.min() >= 0
    assert init.max() < n and resp.max() < n


def test_schedule_pair_matches_stream():
    n = 9
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    single = [schedule_pair(a, n) for _ in range(20)]
    i, r = PairStream(b, n, block=1).take(20)
    assert single == list(zip(i.tolist(), r.tolist()))


@given(st.lists(st.integers(1, 300), min_size=1, max_size=12))
@settings(max_examples=30, deadline=None)
def test_stream_independent_of_slicing(sizes):
    total = sum(sizes)
    whole = PairStream(np.random.default_rng(11), 17, block=128).take(total)
    s = PairStream(np.random.default_rng(11), 17, block=128)
    parts = [s.take(m) for m in sizes]
    assert np.array_equal(whole[0], np.concatenate([p[0] for p in parts]))
    assert np.array_equal(whole[1], np.concatenate([p[1] for p in parts]))


def test_trial_rngs_deterministic_and_distinct():
    a = [g.integers(0, 2**62) for g in trial_rngs(5, 100, 3)]
    b = [g.integers(0, 2**62) for g in trial_rngs(5, 100, 3)]
    c = [g.integers(0, 2**62) for g in trial_rngs(5, 100, 4)]
    d = [g.integers(0, 2**62) for g in trial_rngs(5, 200, 3)]
    assert a == b
    assert a != c and a != d
    assert len(set(a)) == 3


# ----------------------------------------------------------------------------
# trials
# ----------------------------------------------------------------------------


def test_last_change_is_exact():
    gt = line_gt(4)
    pairs = [(0, 1), (2, 3), (1, 2), (0, 1), (2, 3), (0, 3), (1, 2)]
    # values: agent 3 holds the max; changes at 2 (2,3), 3 (1,2), 4 (0,1)
    res = run_trial(MaxSpread(), gt, [0, 1, 2, 3], FixedPairs(pairs),
                    StopRule(check_interval=100))
    assert res.converged
    assert res.last_change_interaction == 4
    assert res.parallel_time == 1.0
    assert res.interactions == len(pairs)


def test_already_converged_runs_nothing():
    res = run_trial(MaxSpread(), line_gt(3), [5, 5, 5], np.random.default_rng(0), StopRule())
    assert res.converged and res.interactions == 0 and res.last_change_interaction == 0


def test_budget_exhaustion():
    gt = line_gt(10)
    stop = StopRule(max_parallel_time=0.55)
    res = run_trial(MaxSpread(), gt, list(range(10)), np.random.default_rng(1), stop)
    assert res.interactions == 6
    assert not res.converged


def test_abort_reports_interaction_and_agents():
    gt = line_gt(4)
    pairs = [(1, 2), (2, 3), (0, 3), (1, 0)]
    with pytest.raises(TrialAborted) as exc:
        run_trial(Exploding(), gt, [-1, 1, 2, 3], FixedPairs(pairs), StopRule(check_interval=2))
    assert exc.value.interaction == 3
    assert exc.value.agents == (0, 3)


def test_verify_silence_toy():
    gt = line_gt(3)
    assert verify_silence(MaxSpread(), [2, 2, 2], gt)
    assert not verify_silence(MaxSpread(), [2, 1, 2], gt)


def test_silence_recorded_when_requested():
    res = run_trial(MaxSpread(), line_gt(6), list(range(6)), np.random.default_rng(2),
                    StopRule(verify_silence=True))
    assert res.converged and res.silence_verified
