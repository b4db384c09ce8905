"""DTW distance, DBA barycenters and DTW k-means over per-participant metric trajectories."""
import logging
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import silhouette_samples

from src.domain.models.clustering import Barycenter, ClusteringResult, MetricSeries, NormalizationStats
from src.shared.errors import DataValidationError, InsufficientDataError

logger = logging.getLogger(__name__)

Path = List[Tuple[int, int]]


def pooled_stats(series: Sequence[MetricSeries], mode: Literal["zscore", "minmax"] = "zscore") -> NormalizationStats:
    """Corpus-wide statistics of one metric, pooled over every participant's trials."""
    if not series:
        raise InsufficientDataError("Cannot pool statistics over an empty corpus")
    values = np.concatenate([np.asarray(s.values, dtype=float) for s in series])
    if values.size == 0:
        raise InsufficientDataError(f"No values for metric {series[0].metric}")
    return NormalizationStats(
        metric=series[0].metric,
        mode=mode,
        count=int(values.size),
        mean=float(values.mean()),
        sd=float(values.std()),
        minimum=float(values.min()),
        maximum=float(values.max()),
    )


def znormalize(series: MetricSeries, stats: NormalizationStats) -> MetricSeries:
    """Rescale with corpus statistics; a flat metric passes through unchanged."""
    if stats.flat:
        return series.model_copy(update={"scaling": "passthrough"})
    values = np.asarray(series.values, dtype=float)
    if stats.mode == "zscore":
        scaled = (values - stats.mean) / stats.sd
    else:
        scaled = (values - stats.minimum) / (stats.maximum - stats.minimum)
    return series.model_copy(update={"values": tuple(scaled.tolist()), "scaling": stats.mode})


def normalize_corpus(
    series: Sequence[MetricSeries], mode: Literal["zscore", "minmax"] = "zscore"
) -> Tuple[List[MetricSeries], NormalizationStats]:
    stats = pooled_stats(series, mode)
    if stats.flat:
        logger.warning(f"Metric {stats.metric} is constant across the corpus; series left unscaled")
    return [znormalize(s, stats) for s in series], stats


def _accumulated_cost(x: np.ndarray, y: np.ndarray, band: Optional[int]) -> np.ndarray:
    """Accumulated-cost matrix of shape (n+1, m+1), filled one anti-diagonal at a time."""
    n, m = len(x), len(y)
    cost = (x[:, None] - y[None, :]) ** 2
    if band is not None:
        rows, cols = np.indices(cost.shape)
        cost[np.abs(rows - cols) > band] = np.inf
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for d in range(2, n + m + 1):
        i = np.arange(max(1, d - m), min(n, d - 1) + 1)
        j = d - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return acc


def _backtrack(acc: np.ndarray) -> Path:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        candidates = [(acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1)]
        _, i, j = min(candidates, key=lambda item: item[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def dtw_distance(
    x: Sequence[float], y: Sequence[float], band: Optional[int] = None, return_path: bool = False
):
    """DTW distance: square root of the minimal summed squared pointwise cost.

    Steps are (1,0), (0,1) and (1,1); `band` restricts alignments to
    |i - j| <= band (Sakoe-Chiba). With return_path the optimal alignment is
    returned as a list of 0-based index pairs.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise DataValidationError("DTW needs two non-empty sequences")
    if band is not None and band < abs(x.size - y.size):
        raise DataValidationError(
            f"Sakoe-Chiba band {band} cannot align sequences of lengths {x.size} and {y.size}"
        )
    acc = _accumulated_cost(x, y, band)
    distance = math.sqrt(float(acc[x.size, y.size]))
    if return_path:
        return distance, _backtrack(acc)
    return distance


def pairwise_distances(values: Sequence[np.ndarray], band: Optional[int] = None) -> np.ndarray:
    n = len(values)
    distances = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            distances[i, j] = distances[j, i] = dtw_distance(values[i], values[j], band)
    return distances


def _resample(values: np.ndarray, length: int) -> np.ndarray:
    if len(values) == length:
        return np.array(values, dtype=float)
    if len(values) == 1:
        return np.full(length, float(values[0]))
    positions = np.linspace(0.0, len(values) - 1, length)
    return np.interp(positions, np.arange(len(values)), values)


def _medoid(members: Sequence[np.ndarray], band: Optional[int]) -> int:
    distances = pairwise_distances(members, band)
    return int(np.argmin((distances ** 2).sum(axis=1)))


def barycenter_length(members: Sequence[np.ndarray]) -> int:
    """Lower median of the member lengths."""
    lengths = sorted(len(member) for member in members)
    return lengths[(len(lengths) - 1) // 2]


def _effective_band(band: Optional[int], length: int, members: Sequence[np.ndarray]) -> Optional[int]:
    if band is None:
        return None
    return max(band, max(abs(len(member) - length) for member in members))


def _align_and_average(
    centroid: np.ndarray, members: Sequence[np.ndarray], band: Optional[int]
) -> Tuple[float, np.ndarray]:
    """Summed squared DTW distance to the members and the per-position mean of aligned points."""
    sums = np.zeros(len(centroid))
    counts = np.zeros(len(centroid))
    total = 0.0
    for member in members:
        distance, path = dtw_distance(centroid, member, band, return_path=True)
        total += distance ** 2
        for i, j in path:
            sums[i] += member[j]
            counts[i] += 1
    return total, sums / counts


def dba_centroid(
    members: Sequence[Sequence[float]],
    length: Optional[int] = None,
    max_iter: int = 30,
    tol: float = 1e-6,
    init: Optional[Sequence[float]] = None,
    band: Optional[int] = None,
) -> Barycenter:
    """DTW barycenter averaging.

    Starts from `init` (resampled to `length`) or the medoid, then
    repeatedly aligns every member and averages the aligned points per
    centroid position. Stops when the summed squared DTW distance improves
    by less than tol; the total never increases.
    """
    arrays = [np.asarray(member, dtype=float) for member in members]
    if not arrays or any(array.size == 0 for array in arrays):
        raise InsufficientDataError("DBA needs at least one non-empty member")
    length = length or barycenter_length(arrays)
    band = _effective_band(band, length, arrays)
    if init is not None:
        start = np.asarray(init, dtype=float)
    else:
        spread = max(len(a) for a in arrays) - min(len(a) for a in arrays)
        start = arrays[_medoid(arrays, None if band is None else max(band, spread))]
    centroid = _resample(start, length)

    inertia, average = _align_and_average(centroid, arrays, band)
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        candidate_inertia, candidate_average = _align_and_average(average, arrays, band)
        if candidate_inertia > inertia:
            break
        improvement = inertia - candidate_inertia
        centroid, inertia, average = average, candidate_inertia, candidate_average
        if improvement < tol:
            break

    return Barycenter(values=tuple(centroid.tolist()), inertia=float(max(inertia, 0.0)), iterations=iterations)


def _kmeanspp(distances: np.ndarray, k: int, rng: np.random.Generator) -> List[int]:
    n = distances.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        nearest = (distances[:, chosen] ** 2).min(axis=1)
        total = nearest.sum()
        if total <= 0.0:
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(int(rng.choice(remaining)))
        else:
            chosen.append(int(rng.choice(n, p=nearest / total)))
    return chosen


def _assign(to_centroids: np.ndarray, previous: Optional[np.ndarray]) -> np.ndarray:
    """Nearest centroid; a point tied with its current cluster stays put."""
    labels = np.argmin(to_centroids, axis=1)
    if previous is not None:
        rows = np.arange(len(labels))
        keep = to_centroids[rows, previous] <= to_centroids[rows, labels]
        labels = np.where(keep, previous, labels)
    return labels


def _fill_empty_clusters(
    labels: np.ndarray, to_centroids: np.ndarray, values: Sequence[np.ndarray], centroids: List[np.ndarray], k: int
) -> None:
    for cluster in range(k):
        if (labels == cluster).any():
            continue
        own = to_centroids[np.arange(len(labels)), labels]
        sizes = np.bincount(labels, minlength=k)
        donors = np.where(sizes[labels] > 1, own, -np.inf)
        point = int(np.argmax(donors))
        logger.debug(f"Cluster {cluster} empty; reseeding with series {point}")
        labels[point] = cluster
        centroids[cluster] = np.array(values[point], dtype=float)
        to_centroids[point, cluster] = 0.0


def _single_run(
    values: Sequence[np.ndarray],
    distances: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int,
    band: Optional[int],
    dba_max_iter: int,
    dba_tol: float,
) -> Tuple[np.ndarray, List[np.ndarray], List[float], int]:
    centroids = [np.array(values[i], dtype=float) for i in _kmeanspp(distances, k, rng)]
    labels: Optional[np.ndarray] = None
    history: List[float] = []
    rows = np.arange(len(values))

    def distances_to_centroids() -> np.ndarray:
        return np.array([
            [dtw_distance(series, centroid, _effective_band(band, len(centroid), [series])) for centroid in centroids]
            for series in values
        ])

    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        to_centroids = distances_to_centroids()
        new_labels = _assign(to_centroids, labels)
        _fill_empty_clusters(new_labels, to_centroids, values, centroids, k)
        history.append(float((to_centroids[rows, new_labels] ** 2).sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        for cluster in range(k):
            members = [values[i] for i in np.flatnonzero(labels == cluster)]
            barycenter = dba_centroid(
                members, barycenter_length(members), dba_max_iter, dba_tol, centroids[cluster], band
            )
            previous = float((to_centroids[labels == cluster, cluster] ** 2).sum())
            if barycenter.inertia <= previous:
                centroids[cluster] = np.asarray(barycenter.values)

    if not converged:
        to_centroids = distances_to_centroids()
        labels = _assign(to_centroids, labels)
        _fill_empty_clusters(labels, to_centroids, values, centroids, k)
        history.append(float((to_centroids[rows, labels] ** 2).sum()))
        logger.debug(f"k-means stopped at max_iter={max_iter} without stable assignments")
    return labels, centroids, history, iterations


def _canonical_order(labels: np.ndarray, centroids: List[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Relabel clusters by ascending centroid mean, ties by first member."""
    k = len(centroids)
    first_member = [int(np.flatnonzero(labels == c)[0]) for c in range(k)]
    order = sorted(range(k), key=lambda c: (float(np.mean(centroids[c])), first_member[c]))
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return remap[labels], [centroids[c] for c in order]


def _silhouettes(distances: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n_labels = len(np.unique(labels))
    if n_labels < 2 or n_labels >= len(labels):
        return np.zeros(len(labels))
    return np.nan_to_num(silhouette_samples(distances, labels, metric="precomputed"))


def kmeans_dtw(
    series: Sequence[MetricSeries],
    k: int,
    restarts: int = 10,
    max_iter: int = 50,
    seed: int = 0,
    band: Optional[int] = None,
    dba_max_iter: int = 30,
    dba_tol: float = 1e-6,
) -> ClusteringResult:
    """Cluster participants' metric series with DTW k-means and DBA centroids.

    Series are processed in participant-id order so the result does not
    depend on input order. Each restart draws k-means++ seeds from its own
    child of the seed sequence; the lowest-inertia restart wins.
    """
    if k < 2:
        raise DataValidationError(f"k must be at least 2, got {k}")
    if restarts < 1:
        raise DataValidationError(f"restarts must be at least 1, got {restarts}")
    ordered = sorted(series, key=lambda s: s.participant_id)
    metric = ordered[0].metric if ordered else "unknown"
    eligible = [s for s in ordered if s.eligible]
    unclustered = [s.participant_id for s in ordered if not s.eligible]
    if len(eligible) < k:
        raise InsufficientDataError(
            f"Metric {metric}: {len(eligible)} participants with at least two trials, need {k} for k={k}"
        )
    if band is not None:
        longest = max(len(s.values) for s in eligible)
        shortest = min(len(s.values) for s in eligible)
        if band < longest - shortest:
            raise DataValidationError(
                f"Sakoe-Chiba band {band} cannot align series of lengths {shortest} and {longest}"
            )

    values = [np.asarray(s.values, dtype=float) for s in eligible]
    distances = pairwise_distances(values, band)
    degenerate = bool(distances.max() == 0.0)
    if degenerate:
        logger.warning(f"Metric {metric}: all series are identical under DTW")

    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        run = _single_run(values, distances, k, np.random.default_rng(child), max_iter, band, dba_max_iter, dba_tol)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    labels, centroids, history, iterations = best
    labels, centroids = _canonical_order(labels, centroids)
    samples = _silhouettes(distances, labels)

    return ClusteringResult(
        metric=metric,
        k=k,
        assignments={s.participant_id: int(label) for s, label in zip(eligible, labels)},
        centroids=[tuple(c.tolist()) for c in centroids],
        inertia=history[-1],
        inertia_history=history,
        silhouette=float(np.clip(samples.mean(), -1.0, 1.0)),
        silhouette_samples={s.participant_id: float(v) for s, v in zip(eligible, samples)},
        seed=seed,
        restarts=restarts,
        iterations=iterations,
        degenerate=degenerate,
        unclustered=unclustered,
    )


def select_k(
    series: Sequence[MetricSeries],
    candidates: Sequence[int] = (2, 3),
    min_silhouette: float = 0.5,
    **kmeans_options,
) -> ClusteringResult:
    """Run k-means for each candidate k and keep the highest mean silhouette (ties: smaller k)."""
    eligible = sum(1 for s in series if s.eligible)
    best: Optional[ClusteringResult] = None
    for k in sorted(set(candidates)):
        if eligible < k:
            logger.info(f"Skipping k={k}: only {eligible} eligible participants")
            continue
        result = kmeans_dtw(series, k, **kmeans_options)
        logger.debug(f"Metric {result.metric}: k={k} silhouette={result.silhouette:.4f}")
        if best is None or result.silhouette > best.silhouette:
            best = result
    if best is None:
        raise InsufficientDataError(
            f"No candidate k in {sorted(set(candidates))} is feasible with {eligible} eligible participants"
        )
    low_confidence = best.silhouette < min_silhouette or best.degenerate
    if low_confidence:
        logger.warning(
            f"Metric {best.metric}: best silhouette {best.silhouette:.3f} at k={best.k} "
            f"is below {min_silhouette}; clustering is low-confidence"
        )
    return best.model_copy(update={"low_confidence": low_confidence})


def series_by_participant(trial_values: Dict[str, List[Tuple[int, float]]], metric: str) -> List[MetricSeries]:
    """Build series from (ordered_index, value) pairs per participant."""
    return [
        MetricSeries(
            participant_id=participant_id,
            metric=metric,
            values=tuple(value for _, value in sorted(pairs)),
        )
        for participant_id, pairs in sorted(trial_values.items())
    ]
