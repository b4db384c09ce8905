import logging
from typing import Dict, List, Literal, Optional

import networkx as nx
import numpy as np
from scipy.stats import entropy

from src.domain.models.fixations import Trial
from src.domain.models.metrics import MetricVector, TrialMetrics
from src.domain.models.network import GazeNetwork, PiSource, TransitionModel
from src.infrastructure.config import GraphSettings, MetricSettings
from src.services.graph import build_trial_network, multiplicity_matrix, simple_digraph, transition_model
from src.shared.errors import ConvergenceError, GazeNetError

logger = logging.getLogger(__name__)


def n_nodes(network: GazeNetwork) -> int:
    return network.node_count


def n_edges(network: GazeNetwork) -> int:
    """Transition count including multiplicity."""
    return network.transition_count


def avg_degree_centrality(network: GazeNetwork) -> float:
    if network.node_count < 2:
        return 0.0
    return float(np.mean(list(nx.degree_centrality(simple_digraph(network)).values())))


def avg_betweenness_centrality(network: GazeNetwork) -> float:
    if network.node_count < 3:
        return 0.0
    scores = nx.betweenness_centrality(simple_digraph(network), normalized=True)
    return float(np.mean(list(scores.values())))


def avg_closeness_centrality(network: GazeNetwork) -> float:
    """Mean incoming-distance closeness with the Wasserman-Faust reachability correction."""
    if network.node_count < 2:
        return 0.0
    scores = nx.closeness_centrality(simple_digraph(network), wf_improved=True)
    return float(np.mean(list(scores.values())))


def pagerank_scores(
    network: GazeNetwork, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200
) -> Dict[str, float]:
    """Power-iteration PageRank on the multiplicity-weighted transition matrix.

    Teleportation and dangling mass are spread uniformly. Iteration stops when
    successive iterates differ by less than tol in L1.
    """
    aois, matrix = multiplicity_matrix(network)
    n = len(aois)
    out_weight = matrix.sum(axis=1)
    dangling = out_weight == 0
    transitions = np.divide(matrix, out_weight[:, None], out=np.zeros_like(matrix), where=~dangling[:, None])

    scores = np.full(n, 1.0 / n)
    for iteration in range(1, max_iter + 1):
        previous = scores
        scores = damping * (previous @ transitions + previous[dangling].sum() / n) + (1.0 - damping) / n
        scores /= scores.sum()
        if np.abs(scores - previous).sum() < tol:
            logger.debug(f"PageRank converged after {iteration} iterations")
            return dict(zip(aois, scores.tolist()))
    raise ConvergenceError(
        f"PageRank did not converge within {max_iter} iterations (tol={tol})",
        last_iterate=scores,
        iterations=max_iter,
    )


def avg_pagerank(network: GazeNetwork, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Mean PageRank; always 1/n for a converged run since scores sum to one."""
    return float(np.mean(list(pagerank_scores(network, damping, tol, max_iter).values())))


def eigenvector_scores(network: GazeNetwork, tol: float = 1e-10, max_iter: int = 1000) -> Dict[str, float]:
    """L2-normalized eigenvector centrality over incoming weighted edges.

    Uses power iteration on (A^T + I); the shift keeps bipartite-like
    structures from oscillating without moving the dominant eigenvector.
    An acyclic network has no dominant eigenvector, so it raises
    ConvergenceError at once with the uniform vector as last iterate.
    """
    aois, matrix = multiplicity_matrix(network)
    n = len(aois)
    scores = np.full(n, 1.0 / np.sqrt(n))
    if not matrix.any():
        return dict(zip(aois, scores.tolist()))
    if not np.linalg.matrix_power((matrix > 0).astype(float), n).any():
        raise ConvergenceError(
            "Eigenvector centrality is undefined on an acyclic network (spectral radius 0)",
            last_iterate=scores,
            iterations=0,
        )
    shifted = matrix.T + np.eye(n)
    for iteration in range(1, max_iter + 1):
        previous = scores
        scores = shifted @ previous
        scores /= np.linalg.norm(scores)
        if np.abs(scores - previous).sum() < n * tol:
            logger.debug(f"Eigenvector centrality converged after {iteration} iterations")
            return dict(zip(aois, scores.tolist()))
    raise ConvergenceError(
        f"Eigenvector centrality did not converge within {max_iter} iterations; "
        f"the network may be periodic, consider the unconverged fallback",
        last_iterate=scores,
        iterations=max_iter,
    )


def avg_eigenvector_centrality(network: GazeNetwork, tol: float = 1e-10, max_iter: int = 1000) -> float:
    return float(np.mean(list(eigenvector_scores(network, tol, max_iter).values())))


def density(network: GazeNetwork) -> float:
    if network.node_count < 2:
        return 0.0
    return float(nx.density(simple_digraph(network)))


def reciprocity(network: GazeNetwork) -> float:
    """Fraction of distinct directed pairs whose reverse also occurs; 0 without edges."""
    graph = simple_digraph(network)
    if graph.number_of_edges() == 0:
        return 0.0
    return float(nx.overall_reciprocity(graph))


def node_connectivity(network: GazeNetwork, mode: Literal["undirected", "directed"] = "undirected") -> int:
    if network.node_count < 2:
        return 0
    graph = simple_digraph(network)
    if mode == "undirected":
        graph = graph.to_undirected()
    return int(nx.node_connectivity(graph))


def stationary_entropy(model: TransitionModel) -> float:
    """Shannon entropy (nats) of the stationary distribution."""
    return max(0.0, float(entropy(model.pi)))


def transition_entropy(model: TransitionModel) -> float:
    """Stationary-weighted conditional entropy (nats) of the transition rows; sink rows contribute 0."""
    total = 0.0
    for weight, row, sink in zip(model.pi, model.transitions, model.sinks):
        if not sink:
            total += weight * entropy(row)
    return max(0.0, float(total))


def _degenerate_flags(network: GazeNetwork, model: TransitionModel) -> List[str]:
    flags = []
    n = network.node_count
    if n < 2:
        flags += ["avg_degree", "avg_closeness", "density", "node_connectivity"]
    if n < 3:
        flags.append("avg_betweenness")
    if not network.distinct_pairs:
        flags.append("reciprocity")
    if all(model.sinks):
        flags.append("transition_entropy")
    if not network.edges:
        flags.append("avg_eigenvector")
    return sorted(flags)


def compute_all(
    network: GazeNetwork,
    settings: Optional[MetricSettings] = None,
    pi_source: PiSource = PiSource.COUNTS,
) -> MetricVector:
    """Evaluate the full metric suite on one network."""
    settings = settings or MetricSettings()
    model = transition_model(network, pi_source)
    flags = _degenerate_flags(network, model)

    try:
        pagerank = avg_pagerank(
            network, settings.pagerank_damping, settings.pagerank_tol, settings.pagerank_max_iter
        )
    except GazeNetError as exc:
        exc.add_note("while computing avg_pagerank")
        raise
    if abs(pagerank - 1.0 / network.node_count) > 1e-8:
        logger.debug(f"avg_pagerank {pagerank} deviates from 1/n for {network.node_count} nodes")

    try:
        eigenvector = avg_eigenvector_centrality(network, settings.eigenvector_tol, settings.eigenvector_max_iter)
    except ConvergenceError as exc:
        if not settings.eigenvector_fallback or exc.last_iterate is None:
            exc.add_note("while computing avg_eigenvector")
            raise
        eigenvector = float(np.mean(np.abs(exc.last_iterate)))
        flags.append("avg_eigenvector:unconverged")
        label = network.trial.label if network.trial else "network"
        logger.warning(f"Eigenvector centrality unconverged for {label}; using last iterate")

    return MetricVector(
        trial=network.trial,
        n_nodes=n_nodes(network),
        n_edges=n_edges(network),
        avg_degree=avg_degree_centrality(network),
        avg_betweenness=avg_betweenness_centrality(network),
        avg_closeness=avg_closeness_centrality(network),
        avg_pagerank=pagerank,
        avg_eigenvector=eigenvector,
        density=density(network),
        reciprocity=reciprocity(network),
        node_connectivity=node_connectivity(network, settings.connectivity),
        stationary_entropy=stationary_entropy(model),
        transition_entropy=transition_entropy(model),
        degenerate=tuple(flags),
    )


def compute_trial_metrics(
    trial: Trial,
    graph_settings: GraphSettings,
    metric_settings: MetricSettings,
) -> TrialMetrics:
    """Build the trial's network and evaluate every metric; picklable for worker pools."""
    network = build_trial_network(trial, keep_self_loops=graph_settings.keep_self_loops)
    try:
        vector = compute_all(network, metric_settings, graph_settings.pi_source)
    except GazeNetError as exc:
        exc.add_note(f"trial {trial.key.label}")
        raise
    return TrialMetrics(key=trial.key, metrics=vector, bfd=trial.bfd)
