"""Comparison policies: conflict-aware whole-flow matching and a local lane rule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InfeasibleError
from .topology import Path, Policy, Topology


@dataclass(frozen=True)
class ConflictGraph:
    flows: tuple[str, ...]
    paths: tuple[str, ...]
    flow_path_edges: frozenset[tuple[str, str]]
    conflict_edges: frozenset[frozenset[str]]

    def conflicts(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.conflict_edges

    def neighbours(self, path_id: str) -> set[str]:
        return {next(iter(e - {path_id})) for e in self.conflict_edges if path_id in e}


def build_conflict_graph(topology: Topology, paths: Iterable[Path] | None = None) -> ConflictGraph:
    """Flows and paths as vertices; a path joins its flow, and two paths
    sharing at least one real (non-sink) queue are in conflict."""
    paths = list(paths if paths is not None else topology.paths)
    qb = topology.queue_by_id
    real = {w.id: {q for q in w.queues if not qb[q].is_sink} for w in paths}
    conflicts = set()
    for i, a in enumerate(paths):
        for b in paths[i + 1:]:
            if real[a.id] & real[b.id]:
                conflicts.add(frozenset((a.id, b.id)))
    return ConflictGraph(tuple(f.id for f in topology.flows), tuple(w.id for w in paths),
                         frozenset((w.flow, w.id) for w in paths), frozenset(conflicts))


def bipartite_matching_policy(topology: Topology) -> Policy:
    """Greedy conflict-aware assignment of every flow to one path.

    Flows are taken in decreasing rate order.  Each goes wholly to the
    stable path with the lowest mean M/M/1 travel time given the load
    already placed, plus a penalty for every conflicting path already in
    use: the mean-sojourn increase its new traffic causes on the shared
    queues.
    """
    graph = build_conflict_graph(topology)
    qb = topology.queue_by_id
    load = {q.id: 0.0 for q in topology.queues}
    mu = {q.id: q.mu_max for q in topology.queues}
    used: dict[str, str] = {}
    probs = {w.id: 0.0 for w in topology.paths}
    for f in sorted(topology.flows, key=lambda f: (-f.rate, f.id)):
        best, best_cost = None, float("inf")
        for w in topology.paths_of(f.id):
            real = [q for q in w.queues if not qb[q].is_sink]
            g = [qb[q].batch_pmf.mean if qb[q].batch_pmf is not None else 1.0 for q in real]
            if any((load[q] + f.rate) * gq >= mu[q] for q, gq in zip(real, g)):
                continue
            cost = sum(1.0 / (mu[q] - load[q] - f.rate) for q in real)
            for other in used.values():
                if graph.conflicts(w.id, other):
                    shared = set(real) & set(topology.path_by_id[other].queues)
                    cost += sum(1.0 / (mu[q] - load[q] - f.rate) - 1.0 / (mu[q] - load[q])
                                for q in shared)
            if cost < best_cost - 1e-12:
                best, best_cost = w, cost
        if best is None:
            raise InfeasibleError(f"flow {f.id} has no path that stays stable when assigned whole")
        used[f.id] = best.id
        probs[best.id] = 1.0
        for q in best.queues:
            load[q] += f.rate
    return Policy(probs, mu)


def distributed_rule(occupancy: Mapping[str, int], current_lane: int | None = None,
                     lanes: Mapping[str, int | None] | None = None) -> str:
    """Pick the successor with the fewest vehicles.

    Ties go to a candidate in ``current_lane`` when there is one, otherwise
    to the lowest id.
    """
    if not occupancy:
        raise ValueError("no candidate successors")
    low = min(occupancy.values())
    tied = sorted(q for q, n in occupancy.items() if n == low)
    if current_lane is not None and lanes:
        same = [q for q in tied if lanes.get(q) == current_lane]
        if same:
            return same[0]
    return tied[0]
