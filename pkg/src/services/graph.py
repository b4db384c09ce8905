import itertools
import logging
from collections import Counter
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.domain.models.fixations import Trial, TrialKey
from src.domain.models.network import (
    CollapsePolicy,
    GazeNetwork,
    NodeLinkDocument,
    NodeLinkLink,
    NodeLinkNode,
    NodeWeight,
    PiSource,
    TransitionModel,
)
from src.shared.errors import DataValidationError, EmptyTrialError

logger = logging.getLogger(__name__)


def collapse_consecutive(aois: Sequence[str]) -> List[str]:
    """Merge runs of the same AOI into one visit."""
    return [aoi for aoi, _ in itertools.groupby(aois)]


def build_network(
    aois: Sequence[str],
    *,
    keep_self_loops: bool = False,
    durations_ms: Optional[Sequence[int]] = None,
    trial: Optional[TrialKey] = None,
) -> GazeNetwork:
    """Build the AOI transition multigraph of one scanpath.

    Node weights count fixations of the original sequence. Edges count
    transitions of the collapsed sequence, or of the raw sequence (self-loops
    included) when keep_self_loops is set.
    """
    if not aois:
        raise EmptyTrialError(f"empty trial{f' {trial.label}' if trial else ''}")
    if durations_ms is not None and len(durations_ms) != len(aois):
        raise DataValidationError(f"{len(aois)} AOIs but {len(durations_ms)} durations")

    counts = Counter(aois)
    totals: Counter = Counter()
    if durations_ms is not None:
        for aoi, duration in zip(aois, durations_ms):
            totals[aoi] += int(duration)
    nodes = {
        aoi: NodeWeight(fixation_count=counts[aoi], duration_ms=totals[aoi])
        for aoi in sorted(counts)
    }

    walk = list(aois) if keep_self_loops else collapse_consecutive(aois)
    transitions = Counter(zip(walk, walk[1:]))
    edges = {edge: transitions[edge] for edge in sorted(transitions)}

    return GazeNetwork(
        nodes=nodes,
        edges=edges,
        trial=trial,
        collapse_policy=CollapsePolicy.KEEP if keep_self_loops else CollapsePolicy.MERGE,
    )


def build_trial_network(trial: Trial, keep_self_loops: bool = False) -> GazeNetwork:
    return build_network(
        trial.aois,
        keep_self_loops=keep_self_loops,
        durations_ms=trial.durations_ms,
        trial=trial.key,
    )


def multiplicity_matrix(network: GazeNetwork) -> Tuple[List[str], np.ndarray]:
    """Sorted AOIs and the dense matrix of transition multiplicities (row = source)."""
    aois = network.aois
    position = {aoi: index for index, aoi in enumerate(aois)}
    matrix = np.zeros((len(aois), len(aois)))
    for (source, target), multiplicity in network.edges.items():
        matrix[position[source], position[target]] = multiplicity
    return aois, matrix


def simple_digraph(network: GazeNetwork) -> nx.DiGraph:
    """Distinct-pair directed graph: one edge per ordered AOI pair, self-loops dropped."""
    graph = nx.DiGraph()
    graph.add_nodes_from(network.aois)
    graph.add_edges_from(network.distinct_pairs)
    return graph


def transition_model(network: GazeNetwork, pi_source: PiSource = PiSource.COUNTS) -> TransitionModel:
    """Row-normalized transition matrix with the empirical stationary distribution."""
    aois, matrix = multiplicity_matrix(network)
    out_weight = matrix.sum(axis=1)
    sinks = out_weight == 0
    transitions = np.divide(
        matrix, out_weight[:, None], out=np.zeros_like(matrix), where=~sinks[:, None]
    )

    if pi_source == PiSource.DURATIONS:
        weights = np.array([network.nodes[aoi].duration_ms for aoi in aois], dtype=float)
        if weights.sum() <= 0:
            raise DataValidationError("Duration-weighted stationary distribution requested but no durations recorded")
    else:
        weights = np.array([network.nodes[aoi].fixation_count for aoi in aois], dtype=float)
    pi = weights / weights.sum()

    return TransitionModel(aois=tuple(aois), transitions=transitions, pi=pi, sinks=tuple(bool(s) for s in sinks))


def to_node_link(network: GazeNetwork) -> str:
    """Canonical node-link JSON; equal networks serialize to identical bytes."""
    document = NodeLinkDocument(
        collapse_policy=network.collapse_policy,
        trial=network.trial,
        nodes=[
            NodeLinkNode(id=aoi, fixation_count=weight.fixation_count, duration_ms=weight.duration_ms)
            for aoi, weight in sorted(network.nodes.items())
        ],
        links=[
            NodeLinkLink(source=source, target=target, count=multiplicity)
            for (source, target), multiplicity in sorted(network.edges.items())
        ],
    )
    return document.model_dump_json(indent=2) + "\n"


def from_node_link(text: str) -> GazeNetwork:
    document = NodeLinkDocument.model_validate_json(text)
    return GazeNetwork(
        nodes={
            node.id: NodeWeight(fixation_count=node.fixation_count, duration_ms=node.duration_ms)
            for node in document.nodes
        },
        edges={(link.source, link.target): link.count for link in document.links},
        trial=document.trial,
        collapse_policy=document.collapse_policy,
    )
