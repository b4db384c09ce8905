import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.domain.models.clustering import MetricSeries
from src.services import tsc
from src.services.synth import planted_cluster_series
from src.shared.errors import DataValidationError, InsufficientDataError

short_series = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=6)


def exhaustive_dtw(x, y):
    """Minimum over every monotone alignment path, by plain recursion."""
    def best(i, j):
        cost = (x[i] - y[j]) ** 2
        if i == 0 and j == 0:
            return cost
        options = []
        if i > 0:
            options.append(best(i - 1, j))
        if j > 0:
            options.append(best(i, j - 1))
        if i > 0 and j > 0:
            options.append(best(i - 1, j - 1))
        return cost + min(options)
    return math.sqrt(best(len(x) - 1, len(y) - 1))


def test_dtw_of_constant_sequences():
    assert tsc.dtw_distance([0, 0, 0], [1, 1]) == pytest.approx(math.sqrt(3))


def test_dtw_absorbs_time_shift():
    assert tsc.dtw_distance([0, 1, 2, 3], [0, 0, 1, 2, 3]) == 0.0


@settings(max_examples=500, deadline=None)
@given(short_series, short_series)
def test_dtw_matches_exhaustive_search(x, y):
    assert tsc.dtw_distance(x, y) == pytest.approx(exhaustive_dtw(x, y), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(short_series, short_series)
def test_dtw_is_symmetric_and_non_negative(x, y):
    forward = tsc.dtw_distance(x, y)
    assert forward >= 0.0
    assert forward == pytest.approx(tsc.dtw_distance(y, x), abs=1e-12)
    assert tsc.dtw_distance(x, x) == 0.0


def test_dtw_path_spans_both_sequences():
    distance, path = tsc.dtw_distance([1, 2, 3], [1, 3], return_path=True)
    assert path[0] == (0, 0)
    assert path[-1] == (2, 1)
    assert distance == pytest.approx(1.0)
    steps = {(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:])}
    assert steps <= {(1, 0), (0, 1), (1, 1)}


def test_band_too_narrow_for_length_difference():
    with pytest.raises(DataValidationError, match="band"):
        tsc.dtw_distance([1, 2, 3, 4], [1], band=1)


def test_band_never_lowers_distance():
    x, y = [0, 0, 1, 2, 3], [0, 1, 2, 3, 3]
    assert tsc.dtw_distance(x, y, band=0) >= tsc.dtw_distance(x, y, band=1) >= tsc.dtw_distance(x, y)
    assert tsc.dtw_distance(x, y, band=10) == tsc.dtw_distance(x, y)


def test_empty_series_rejected():
    with pytest.raises(DataValidationError):
        tsc.dtw_distance([], [1.0])


def test_dba_of_identical_members_is_the_member():
    member = [0.0, 1.0, 2.0, 1.0]
    barycenter = tsc.dba_centroid([member, member, member])
    assert barycenter.inertia == 0.0
    assert barycenter.values == tuple(member)


def test_dba_improves_on_its_starting_point():
    rng = np.random.default_rng(3)
    members = [np.sin(np.linspace(0, 3, int(n))) + 0.1 * rng.standard_normal(int(n)) for n in rng.integers(6, 12, 8)]
    length = tsc.barycenter_length(members)
    start = members[2]
    barycenter = tsc.dba_centroid(members, init=start)
    resampled = np.interp(np.linspace(0, len(start) - 1, length), np.arange(len(start)), start)
    start_inertia = sum(tsc.dtw_distance(resampled, member) ** 2 for member in members)
    assert barycenter.inertia <= start_inertia + 1e-9
    assert len(barycenter.values) == length
    assert barycenter.inertia == pytest.approx(
        sum(tsc.dtw_distance(barycenter.values, member) ** 2 for member in members)
    )


def test_barycenter_length_is_lower_median():
    assert tsc.barycenter_length([[0] * 3, [0] * 7, [0] * 5, [0] * 9]) == 5


def test_zscore_normalization_pools_the_corpus():
    series = [
        MetricSeries(participant_id="a", metric="m", values=(1.0, 2.0)),
        MetricSeries(participant_id="b", metric="m", values=(3.0, 4.0, 5.0)),
    ]
    scaled, stats = tsc.normalize_corpus(series)
    pooled = np.concatenate([s.values for s in scaled])
    assert stats.count == 5
    assert stats.mean == pytest.approx(3.0)
    assert pooled.mean() == pytest.approx(0.0)
    assert pooled.std() == pytest.approx(1.0)
    assert all(s.scaling == "zscore" for s in scaled)


def test_minmax_normalization():
    series = [MetricSeries(participant_id="a", metric="m", values=(2.0, 4.0, 6.0))]
    (scaled,), _ = tsc.normalize_corpus(series, "minmax")
    assert scaled.values == (0.0, 0.5, 1.0)


def test_flat_metric_passes_through():
    series = [MetricSeries(participant_id=p, metric="m", values=(3.0, 3.0)) for p in "ab"]
    scaled, stats = tsc.normalize_corpus(series)
    assert stats.flat
    assert [s.values for s in scaled] == [(3.0, 3.0), (3.0, 3.0)]
    assert all(s.scaling == "passthrough" for s in scaled)


def test_kmeans_recovers_planted_clusters():
    series, truth = planted_cluster_series([0.0, 10.0], per_level=10, noise_sd=0.1, seed=11)
    result = tsc.kmeans_dtw(series, k=2, restarts=3, seed=5)
    assert result.assignments == truth
    assert result.silhouette > 0.9
    assert np.mean(result.centroids[0]) < np.mean(result.centroids[1])


def test_kmeans_inertia_never_increases():
    series, _ = planted_cluster_series([0.0, 1.0, 2.0], per_level=6, noise_sd=0.6, seed=2)
    result = tsc.kmeans_dtw(series, k=3, restarts=1, seed=9)
    history = result.inertia_history
    assert all(later <= earlier + 1e-9 for earlier, later in zip(history, history[1:]))
    assert result.inertia == history[-1]


def test_kmeans_is_deterministic_and_order_independent():
    series, _ = planted_cluster_series([0.0, 3.0], per_level=6, noise_sd=0.8, seed=4)
    first = tsc.kmeans_dtw(series, k=2, restarts=4, seed=21)
    shuffled = list(series)
    random.Random(1).shuffle(shuffled)
    second = tsc.kmeans_dtw(shuffled, k=2, restarts=4, seed=21)
    assert first == second


def test_select_k_prefers_planted_k():
    series, truth = planted_cluster_series([0.0, 5.0, 10.0], per_level=6, noise_sd=0.1, seed=8)
    result = tsc.select_k(series, candidates=[2, 3], restarts=3, seed=1)
    assert result.k == 3
    assert not result.low_confidence
    assert result.assignments == truth


@pytest.mark.slow
@pytest.mark.parametrize("levels", [[0.0, 6.0], [0.0, 6.0, 12.0]])
def test_select_k_recovers_planted_levels_across_seeds(levels):
    recovered = 0
    for seed in range(100):
        series, truth = planted_cluster_series(levels, per_level=6, length_range=(5, 10), noise_sd=1.0, seed=seed)
        result = tsc.select_k(series, candidates=[2, 3], restarts=2, seed=seed, dba_max_iter=10)
        recovered += result.k == len(levels) and result.assignments == truth
    assert recovered >= 95


def test_select_k_flags_structureless_data_as_low_confidence():
    rng = np.random.default_rng(0)
    series = [
        MetricSeries(participant_id=f"p{i}", metric="m", values=tuple(rng.standard_normal(6).tolist()))
        for i in range(10)
    ]
    result = tsc.select_k(series, candidates=[2, 3], restarts=2, seed=3, min_silhouette=0.9)
    assert result.low_confidence


def test_identical_series_are_degenerate():
    series = [MetricSeries(participant_id=f"p{i}", metric="m", values=(1.0, 2.0, 3.0)) for i in range(4)]
    result = tsc.select_k(series, candidates=[2], restarts=2, seed=0)
    assert result.degenerate
    assert result.low_confidence
    assert result.silhouette == 0.0
    assert sorted(set(result.assignments.values())) == [0, 1]


def test_short_series_are_left_unclustered():
    series, _ = planted_cluster_series([0.0, 10.0], per_level=3, seed=1)
    series.append(MetricSeries(participant_id="Z", metric="planted", values=(4.0,)))
    result = tsc.kmeans_dtw(series, k=2, restarts=2, seed=0)
    assert result.unclustered == ["Z"]
    assert "Z" not in result.assignments


def test_too_few_participants_for_k():
    series, _ = planted_cluster_series([0.0], per_level=2, seed=1)
    with pytest.raises(InsufficientDataError):
        tsc.kmeans_dtw(series, k=3)
    with pytest.raises(InsufficientDataError):
        tsc.select_k(series, candidates=[3, 4])


def test_series_by_participant_orders_trials():
    series = tsc.series_by_participant({"b": [(1, 2.0), (0, 1.0)], "a": [(0, 5.0)]}, "m")
    assert [(s.participant_id, s.values) for s in series] == [("a", (5.0,)), ("b", (1.0, 2.0))]
