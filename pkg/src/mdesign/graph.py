"""Per-task gain graphs: architectures as nodes, one-hop moves as signed edges.

A gain graph is a read view over one task's records in the knowledge store.
Every measured pair of adjacent architectures contributes one undirected edge
whose two directions carry exactly opposite gains, so any directed cycle sums
to zero by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .space import DesignTuple, Modification
from .store import KnowledgeStore, StoreError

__all__ = [
    "GraphError",
    "EdgeSample",
    "GainGraph",
    "build_graph",
    "edge_samples",
    "local_gains",
    "edge_list_text",
]


class GraphError(ValueError):
    """Invalid graph construction or query."""


@dataclass(frozen=True)
class EdgeSample:
    """One directed measured move: ``from_design -> to_design`` with its gain."""

    from_design: DesignTuple
    to_design: DesignTuple
    gain: float


class GainGraph:
    """Signed-edge view of one task's measured architectures."""

    def __init__(self, store: KnowledgeStore, task_id: str):
        if task_id not in store.tasks:
            raise GraphError(f"unknown task {task_id!r}")
        self.store = store
        self.task_id = task_id
        self._perfs = store.performances(task_id)
        # adjacency: arch id -> list of (neighbor arch id, gain to neighbor)
        adjacency: dict[int, list[tuple[int, float]]] = {a: [] for a in sorted(self._perfs)}
        edge_count = 0
        for rec in store.derive_gains(task_id):
            adjacency[rec.arch_from].append((rec.arch_to, rec.gain))
            adjacency[rec.arch_to].append((rec.arch_from, -rec.gain))
            edge_count += 1
        self.adjacency = adjacency
        self.edge_count = edge_count

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    def node_performance(self, arch_id: int) -> float:
        try:
            return self._perfs[arch_id]
        except KeyError:
            raise GraphError(f"architecture {arch_id} not in graph for task {self.task_id!r}") from None

    def gain_between(self, from_design: DesignTuple, to_design: DesignTuple) -> float | None:
        """Signed gain of the move, or None when either endpoint is unmeasured.

        Raises for designs that are not exactly one modification apart.
        """
        if len(from_design) != len(to_design) or sum(
            a != b for a, b in zip(from_design, to_design)
        ) != 1:
            raise GraphError("gain_between requires designs one modification apart")
        a = self.store.arch_id_of(from_design)
        b = self.store.arch_id_of(to_design)
        if a is None or b is None:
            return None
        if a not in self._perfs or b not in self._perfs:
            return None
        return self._perfs[b] - self._perfs[a]


def build_graph(store: KnowledgeStore, task_id: str) -> GainGraph:
    """Materialize the gain graph of one task."""
    return GainGraph(store, task_id)


def edge_samples(graph: GainGraph, directionized: bool = False) -> list[EdgeSample]:
    """Measured edges as training samples, in deterministic canonical order.

    With ``directionized=True`` each undirected edge yields both directions
    (reverse immediately after forward), doubling the sample count.
    """
    out: list[EdgeSample] = []
    for rec in graph.store.derive_gains(graph.task_id):
        a = graph.store.arch_tuple(rec.arch_from)
        b = graph.store.arch_tuple(rec.arch_to)
        out.append(EdgeSample(a, b, rec.gain))
        if directionized:
            out.append(EdgeSample(b, a, -rec.gain))
    return out


def local_gains(graph: GainGraph, design: DesignTuple) -> dict[Modification, float | None]:
    """Gains of every one-hop move out of ``design`` on this task.

    Keys cover the full neighbor set of the design in canonical neighbor
    order; moves whose endpoint (or the design itself) was never measured map
    to None rather than being dropped.
    """
    graph.store.space.validate(design)
    out: dict[Modification, float | None] = {}
    a = graph.store.arch_id_of(design)
    here = graph._perfs.get(a) if a is not None else None
    for mod, nbr in graph.store.space.neighbors(design):
        if here is None:
            out[mod] = None
            continue
        b = graph.store.arch_id_of(nbr)
        there = graph._perfs.get(b) if b is not None else None
        out[mod] = None if there is None else there - here
    return out


def edge_list_text(graph: GainGraph) -> str:
    """Plain-text export: one canonical edge per line.

    Format: ``<from labels> -> <to labels> : <gain>`` using ``|`` to join the
    per-dimension candidate labels.  Deterministic for a given store.
    """
    space = graph.store.space
    lines = [f"# task {graph.task_id}: {graph.node_count} nodes, {graph.edge_count} edges"]
    for rec in graph.store.derive_gains(graph.task_id):
        a = "|".join(space.labels_of(graph.store.arch_tuple(rec.arch_from)))
        b = "|".join(space.labels_of(graph.store.arch_tuple(rec.arch_to)))
        lines.append(f"{a} -> {b} : {rec.gain!r}")
    return "\n".join(lines) + "\n"
