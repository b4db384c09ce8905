import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import spearmanr

from src.domain.models.synth import ScanpathGenerator
from src.infrastructure.config import SynthSettings
from src.services import synth
from src.services.graph import build_network, transition_model
from src.services.metrics import transition_entropy


def _generator(matrix, steps, seed=0):
    n = len(matrix)
    return ScanpathGenerator(
        aois=tuple(f"A{i}" for i in range(n)),
        transitions=tuple(map(tuple, np.asarray(matrix).tolist())),
        steps=steps,
        seed=seed,
    )


def test_uniform_chain_transition_entropy():
    path = synth.markov_scanpath(_generator(synth.uniform_chain(4), steps=100000, seed=3))
    model = transition_model(build_network(path))
    assert transition_entropy(model) == pytest.approx(math.log(3), abs=0.005)
    assert synth.analytic_transition_entropy(synth.uniform_chain(4)) == pytest.approx(math.log(3))


def test_empirical_transition_frequencies_match_the_chain():
    matrix = np.array([
        [0.1, 0.6, 0.2, 0.1],
        [0.3, 0.1, 0.3, 0.3],
        [0.25, 0.25, 0.25, 0.25],
        [0.7, 0.1, 0.1, 0.1],
    ])
    path = synth.markov_scanpath(_generator(matrix, steps=200000, seed=17))
    index = {f"A{i}": i for i in range(4)}
    counts = np.zeros((4, 4))
    for source, target in zip(path, path[1:]):
        counts[index[source], index[target]] += 1
    empirical = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(empirical - matrix).sum(axis=1).max() < 0.02


def test_scanpaths_are_reproducible():
    chain = synth.cycle_chain(5, 0.8)
    first = synth.markov_scanpath(_generator(chain, steps=50, seed=9))
    second = synth.markov_scanpath(_generator(chain, steps=50, seed=9))
    other = synth.markov_scanpath(_generator(chain, steps=50, seed=10))
    assert first == second
    assert first != other
    assert len(first) == 50


def test_generator_rejects_non_stochastic_rows():
    with pytest.raises(ValidationError):
        _generator([[0.5, 0.4], [0.5, 0.5]], steps=5)
    with pytest.raises(ValidationError):
        _generator([[1.2, -0.2], [0.5, 0.5]], steps=5)


def test_cycle_chain_structure():
    chain = synth.cycle_chain(4, fidelity=0.9)
    np.testing.assert_allclose(chain.sum(axis=1), 1.0)
    np.testing.assert_array_equal(np.diag(chain), 0.0)
    assert chain[3, 0] == pytest.approx(0.9)
    assert synth.analytic_transition_entropy(chain) < synth.analytic_transition_entropy(synth.uniform_chain(4))


def test_stationary_distribution_of_uniform_chain():
    np.testing.assert_allclose(synth.stationary_distribution(synth.uniform_chain(5)), 0.2)


def test_planted_series_labels():
    series, truth = synth.planted_cluster_series([0.0, 4.0], per_level=3, length_range=(4, 6), seed=2)
    assert len(series) == 6
    assert sorted(set(truth.values())) == [0, 1]
    assert all(4 <= len(s.values) <= 6 for s in series)


def test_cohort_layout_and_determinism():
    settings = SynthSettings(
        participants=4, semesters=[6, 7], sessions_per_semester=1, opts_per_session=2, steps_range=(10, 15)
    )
    cohort = synth.synthesize_cohort(settings, seed=5)
    again = synth.synthesize_cohort(settings, seed=5)
    assert cohort == again
    assert len(cohort.truth) == 4 * 2 * 2
    assert len(cohort.outcomes) == len(cohort.truth)
    assert all(o.anomalies_found <= o.anomalies_total for o in cohort.outcomes)
    groups = {row.participant_id: row.group for row in cohort.truth}
    assert sorted(groups.values()) == ["fast", "fast", "slow", "slow"]
    first = [row for row in cohort.truth if row.participant_id == "P000"]
    assert [row.ordered_index for row in first] == [0, 1, 2, 3]
    assert first[0].expertise == 0.0 and first[-1].expertise == pytest.approx(1.0)


def test_missing_outcomes_are_dropped_at_the_configured_rate():
    settings = SynthSettings(participants=10, opts_per_session=5, steps_range=(5, 6), missing_outcome_rate=0.5)
    cohort = synth.synthesize_cohort(settings, seed=1)
    assert 0 < len(cohort.outcomes) < len(cohort.truth)


@pytest.mark.slow
def test_expertise_drift_lowers_transition_entropy():
    strong = 0
    for seed in range(50):
        paths = synth.expertise_trajectory(
            synth.uniform_chain(6), synth.cycle_chain(6, 0.95), trials=20, steps=1000, seed=seed
        )
        entropies = [transition_entropy(transition_model(build_network(path))) for path in paths]
        rho, _ = spearmanr(np.arange(len(entropies)), entropies)
        strong += rho < -0.9
    assert strong >= 48
