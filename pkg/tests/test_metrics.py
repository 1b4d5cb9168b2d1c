import logging
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safecrl.metrics import (VisitLog, aggregate_seeds, final_task_reward, fmt_mean_std,
                             forget_percentage, format_table, group_visits, task_metrics,
                             total_cost)


def V(rewards=(), costs=(), visit=0, task="nominal", workers=None):
    return VisitLog(task, visit, list(rewards), list(workers or []), list(costs))


def test_total_cost_examples():
    assert total_cost([V(costs=[1, 2]), V(costs=[3, 4], visit=1)]) == 5.0
    assert total_cost([V(costs=[0, 0, 0])]) == 0.0


def test_total_cost_empty_series_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert total_cost([V()]) == 0.0
    assert "empty cost series" in caplog.text


def test_total_cost_resummation():
    r = np.random.default_rng(0)
    visits = [V(costs=list(r.integers(0, 40, r.integers(1, 30)).astype(float)), visit=i)
              for i in range(4)]
    want = sum(sum(v.costs) for v in visits) / 4
    assert total_cost(visits) == want


def test_forget_percentage_examples():
    assert forget_percentage([V([100.0]), V([50.0], visit=1)]) == 50.0
    assert forget_percentage([V([100.0]), V([150.0], visit=1)]) == -50.0
    assert forget_percentage([V([3.0, 80.0]), V([80.0, 90.0], visit=1)]) == 0.0


def test_forget_percentage_averages_pairs():
    vs = [V([10.0, 100.0]), V([50.0, 200.0], visit=1), V([300.0], visit=2)]
    # pairs: (100 -> 50) = 50%, (200 -> 300) = -50%
    assert forget_percentage(vs) == 0.0


def test_forget_percentage_excludes_zero_final(caplog):
    vs = [V([5.0, 0.0]), V([7.0, 40.0], visit=1), V([20.0], visit=2)]
    with caplog.at_level(logging.WARNING):
        assert forget_percentage(vs) == 50.0
    assert "excluding" in caplog.text
    assert forget_percentage([V([0.0]), V([1.0], visit=1)]) is None
    assert forget_percentage([V([1.0])]) is None


def test_immediate_and_final_per_worker():
    v = V([10.0, 20.0, 30.0, 40.0], workers=[0, 1, 0, 1])
    assert v.immediate == 15.0 and v.final == 35.0
    assert V().immediate is None


def test_final_task_reward():
    assert final_task_reward([V([1.0, 2.0, 3.0])]) == 3.0
    assert final_task_reward([V([9.0]), V([5.0, 4.0], visit=1)]) == 4.0


def test_final_task_reward_reextraction():
    r = np.random.default_rng(1)
    visits = [V(list(r.standard_normal(r.integers(1, 6))), visit=i) for i in range(5)]
    assert final_task_reward(visits) == visits[-1].episode_rewards[-1]


def test_final_task_reward_missing(caplog):
    with caplog.at_level(logging.WARNING):
        assert final_task_reward([V([1.0]), V(visit=1)]) is None


def test_aggregate_seeds():
    mean, std = aggregate_seeds([2.0, 4.0])
    assert mean == 3.0 and std == math.sqrt(2)
    assert aggregate_seeds([7.0, 7.0, 7.0]) == (7.0, 0.0)
    assert aggregate_seeds([5.0]) == (5.0, None)
    vals = list(np.random.default_rng(2).standard_normal(5))
    mean, std = aggregate_seeds(vals)
    assert abs(mean - statistics.fmean(vals)) < 1e-12 and abs(std - statistics.stdev(vals)) < 1e-12


def test_table_two_sign_convention():
    # a negative forget percentage is printed like the table entry "-402.2 ± 174"
    assert fmt_mean_std(-402.2, 174.0) == "-402.2 ± 174.0"
    assert fmt_mean_std(1.0, None) == "1.0" and fmt_mean_std(None, None) == "n/a"
    assert fmt_mean_std(-0.01, 0.02) == "0.0 ± 0.0"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=20), st.integers(1, 4))
def test_total_cost_linear(costs, n):
    vs = [V(costs=costs, visit=i) for i in range(n)]
    doubled = [V(costs=[2 * c for c in costs], visit=i) for i in range(n)]
    assert total_cost(doubled) == pytest.approx(2 * total_cost(vs), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1, 100), min_size=4, max_size=8), st.floats(0.01, 100))
def test_forget_scale_invariant(rewards, k):
    vs = [V(rewards[i:i + 2], visit=i // 2) for i in range(0, len(rewards) - 1, 2)]
    scaled = [V([k * r for r in v.episode_rewards], visit=v.visit) for v in vs]
    base = forget_percentage(vs)
    assert forget_percentage(scaled) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_task_metrics_and_table():
    visits = [V([1.0, 2.0], [1.0]), V([4.0], [0.0], task="back"), V([1.5], [2.0], visit=1)]
    assert list(group_visits(visits)["nominal"]) == [visits[0], visits[2]]
    m = task_metrics(visits)
    assert m["nominal"] == {"total_cost": 1.5, "forget_percentage": 25.0, "final_task_reward": 1.5}
    assert m["back"]["forget_percentage"] is None
    table = format_table({"cpo": {t: {k: (v, None) for k, v in d.items()} for t, d in m.items()}},
                         ["nominal", "back"])
    assert "Task Forget Percentage" in table and "25.0" in table and "n/a" in table


def test_visit_requires_worker_ids():
    with pytest.raises(ValueError):
        VisitLog("nominal", 0, [1.0, 2.0], [0], [])
