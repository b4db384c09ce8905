import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.stats import entropy

from src.domain.models.clustering import MetricSeries
from src.domain.models.fixations import FixationRecord, TrialOutcome
from src.domain.models.synth import ScanpathGenerator, SyntheticCohort, TruthRow
from src.infrastructure.config import SynthSettings
from src.shared.errors import DataValidationError

logger = logging.getLogger(__name__)

Schedule = Union[str, Sequence[float]]


def markov_scanpath(generator: ScanpathGenerator) -> List[str]:
    """Sample `steps` AOIs from the generator's chain; identical seeds give identical paths."""
    rng = np.random.default_rng(generator.seed)
    matrix = generator.matrix
    n = len(generator.aois)
    cumulative = np.cumsum(matrix, axis=1)
    cumulative[:, -1] = 1.0
    initial = np.full(n, 1.0 / n) if generator.initial is None else np.asarray(generator.initial, dtype=float)
    start_cdf = np.cumsum(initial)
    start_cdf[-1] = 1.0

    draws = rng.random(generator.steps)
    state = int(np.searchsorted(start_cdf, draws[0], side="right"))
    states = [state]
    for draw in draws[1:]:
        state = int(np.searchsorted(cumulative[state], draw, side="right"))
        states.append(state)
    return [generator.aois[s] for s in states]


def stationary_distribution(matrix: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible row-stochastic matrix."""
    n = matrix.shape[0]
    system = np.vstack([matrix.T - np.eye(n), np.ones((1, n))])
    target = np.zeros(n + 1)
    target[-1] = 1.0
    pi, *_ = linalg.lstsq(system, target)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def analytic_transition_entropy(matrix: np.ndarray, collapse: bool = True) -> float:
    """Expected transition entropy (nats) of the chain's scanpaths.

    With collapse, repeated fixations on the same AOI are merged, so each row
    is conditioned on leaving its AOI; rows that never leave contribute 0.
    Rows are weighted by the stationary fixation distribution.
    """
    matrix = np.asarray(matrix, dtype=float)
    pi = stationary_distribution(matrix)
    total = 0.0
    for i, row in enumerate(matrix):
        if collapse:
            leave = 1.0 - row[i]
            if leave <= 1e-15:
                continue
            row = np.where(np.arange(len(row)) == i, 0.0, row) / leave
        total += pi[i] * entropy(row)
    return float(total)


def uniform_chain(n: int) -> np.ndarray:
    """Novice chain: every AOI equally likely after every AOI."""
    return np.full((n, n), 1.0 / n)


def cycle_chain(n: int, fidelity: float = 0.9) -> np.ndarray:
    """Expert chain: a fixed tour i -> i+1 with probability `fidelity`, the rest spread evenly."""
    if n < 2:
        raise DataValidationError("A cycle chain needs at least two AOIs")
    matrix = np.full((n, n), (1.0 - fidelity) / (n - 2) if n > 2 else 0.0)
    matrix[np.arange(n), np.arange(n)] = 0.0
    matrix[np.arange(n), (np.arange(n) + 1) % n] = fidelity
    matrix /= matrix.sum(axis=1, keepdims=True)
    return matrix


def blend_chains(novice: np.ndarray, expert: np.ndarray, expertise: float) -> np.ndarray:
    blended = (1.0 - expertise) * novice + expertise * expert
    return blended / blended.sum(axis=1, keepdims=True)


def _schedule_values(schedule: Schedule, trials: int) -> np.ndarray:
    if isinstance(schedule, str):
        positions = np.arange(trials) / max(trials - 1, 1)
        if schedule == "linear":
            return positions
        if schedule == "fast":
            return np.sqrt(positions)
        if schedule == "slow":
            return 0.5 * positions
        raise DataValidationError(f"Unknown expertise schedule '{schedule}'")
    values = np.asarray(schedule, dtype=float)
    if values.shape != (trials,) or (values < 0).any() or (values > 1).any():
        raise DataValidationError(f"Schedule must hold {trials} values in [0, 1]")
    return values


def _aoi_labels(n: int, prefix: str = "AOI") -> Tuple[str, ...]:
    return tuple(f"{prefix}{index}" for index in range(n))


def expertise_trajectory(
    novice: np.ndarray,
    expert: np.ndarray,
    trials: int,
    schedule: Schedule = "linear",
    steps: int = 100,
    seed: int = 0,
    aois: Optional[Sequence[str]] = None,
) -> List[List[str]]:
    """Scanpaths drifting from the novice chain towards the expert chain over `trials` trials."""
    novice = np.asarray(novice, dtype=float)
    expert = np.asarray(expert, dtype=float)
    if novice.shape != expert.shape or novice.shape[0] != novice.shape[1]:
        raise DataValidationError(f"Chains must share one AOI set: {novice.shape} vs {expert.shape}")
    aois = tuple(aois) if aois is not None else _aoi_labels(novice.shape[0])
    levels = _schedule_values(schedule, trials)
    seeds = np.random.SeedSequence(seed).generate_state(trials)
    paths = []
    for level, trial_seed in zip(levels, seeds):
        blended = blend_chains(novice, expert, float(level))
        generator = ScanpathGenerator(
            aois=aois,
            transitions=tuple(map(tuple, blended.tolist())),
            steps=steps,
            seed=int(trial_seed),
        )
        paths.append(markov_scanpath(generator))
    return paths


def planted_cluster_series(
    levels: Sequence[float],
    per_level: int,
    length_range: Tuple[int, int] = (5, 15),
    noise_sd: float = 0.1,
    seed: int = 0,
    metric: str = "planted",
) -> Tuple[List[MetricSeries], Dict[str, int]]:
    """Noisy constant series around each level; returns the series and the planted label per participant."""
    rng = np.random.default_rng(seed)
    series, truth = [], {}
    for label, level in enumerate(levels):
        for member in range(per_level):
            participant_id = f"L{label}P{member:03d}"
            length = int(rng.integers(length_range[0], length_range[1] + 1))
            values = level + noise_sd * rng.standard_normal(length)
            series.append(MetricSeries(participant_id=participant_id, metric=metric, values=tuple(values.tolist())))
            truth[participant_id] = label
    return series, truth


def synthesize_cohort(settings: SynthSettings, seed: int) -> SyntheticCohort:
    """Generate a cohort of fixation logs, outcomes and the generating parameters.

    Participants are split into a fast and a slow learner group; each X-ray
    (OPT) has its own AOI count, and the score of a trial rises with the
    participant's current expertise.
    """
    rng = np.random.default_rng(seed)
    opts = settings.opts_per_session
    aoi_counts = rng.integers(settings.aoi_range[0], settings.aoi_range[1] + 1, size=opts)
    chains = {
        int(n): (uniform_chain(int(n)), cycle_chain(int(n), settings.expert_fidelity))
        for n in sorted(set(aoi_counts.tolist()))
    }
    trial_ids = [
        (semester, session, opt)
        for semester in sorted(settings.semesters)
        for session in range(settings.sessions_per_semester)
        for opt in range(opts)
    ]
    fast_count = int(round(settings.fast_fraction * settings.participants))

    fixations: List[FixationRecord] = []
    outcomes: List[TrialOutcome] = []
    truth: List[TruthRow] = []
    for index in range(settings.participants):
        participant_id = f"P{index:03d}"
        group = "fast" if index < fast_count else "slow"
        levels = _schedule_values(group, len(trial_ids))
        for ordered_index, ((semester, session, opt), level) in enumerate(zip(trial_ids, levels)):
            n = int(aoi_counts[opt])
            novice, expert = chains[n]
            blended = blend_chains(novice, expert, float(level))
            aois = _aoi_labels(n, prefix=f"X{opt}_A")
            steps = int(rng.integers(settings.steps_range[0], settings.steps_range[1] + 1))
            generator = ScanpathGenerator(
                aois=aois,
                transitions=tuple(map(tuple, blended.tolist())),
                steps=steps,
                seed=int(rng.integers(0, 2**32)),
            )
            path = markov_scanpath(generator)
            durations = (60 + rng.gamma(2.0, 120.0, size=steps)).astype(int)
            starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
            for fixation_index, (aoi, start, duration) in enumerate(zip(path, starts, durations)):
                fixations.append(FixationRecord(
                    participant_id=participant_id,
                    semester=semester,
                    session_index=session,
                    opt_index=opt,
                    fixation_index=fixation_index,
                    aoi_id=aoi,
                    start_ms=int(start),
                    duration_ms=int(duration),
                ))

            expected = float(np.clip(0.25 + 0.5 * level, 0.0, 1.0))
            probability = float(np.clip(expected + settings.score_noise_sd * rng.standard_normal(), 0.02, 0.98))
            found = int(rng.binomial(n, probability))
            if rng.random() >= settings.missing_outcome_rate:
                outcomes.append(TrialOutcome(
                    participant_id=participant_id,
                    semester=semester,
                    session_index=session,
                    opt_index=opt,
                    anomalies_found=found,
                    anomalies_total=n,
                    bfd_normalized=found / n,
                ))
            truth.append(TruthRow(
                participant_id=participant_id,
                semester=semester,
                session_index=session,
                opt_index=opt,
                ordered_index=ordered_index,
                group=group,
                expertise=float(level),
                aoi_count=n,
                analytic_transition_entropy=analytic_transition_entropy(blended),
                expected_bfd=expected,
            ))
    logger.info(
        f"Synthesized {settings.participants} participants, {len(truth)} trials, {len(fixations)} fixations"
    )
    return SyntheticCohort(fixations=fixations, outcomes=outcomes, truth=truth)
