"""Queue-network topology, flows, paths and routing.

A road network is a set of single-lane segments (queues) connected by
junctions.  Vehicles of a flow enter at one queue and leave at another;
each vehicle is assigned a full path at entry.  The decision variables
live in :class:`Policy`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path as FsPath
from typing import Iterable, Mapping

import numpy as np

from .errors import (CycleError, InconsistentAlphasError, PolicyError, TopologyError,
                     UnreachableFlowError)
from .queue_models import BatchPmf

PROB_TOL = 1e-9


class ServiceModel(str, Enum):
    MARKOVIAN = "mm1"
    DETERMINISTIC = "md1"
    SINK = "sink"


@dataclass(frozen=True)
class QueueSpec:
    id: str
    mu_max: float
    service_model: ServiceModel = ServiceModel.MARKOVIAN
    batch_pmf: BatchPmf | None = None
    lane: int | None = None  # only used by the distributed lane-keeping tie rule

    def __post_init__(self):
        object.__setattr__(self, "service_model", ServiceModel(self.service_model))
        if not self.mu_max > 0:
            raise TopologyError(f"mu_max must be > 0, got {self.mu_max}", f"queues[{self.id}].mu_max")

    @property
    def is_sink(self) -> bool:
        return self.service_model is ServiceModel.SINK


@dataclass(frozen=True)
class FlowSpec:
    id: str
    ingress: str
    egress: str
    rate: float
    omega: float

    def __post_init__(self):
        if not self.rate > 0:
            raise TopologyError(f"rate must be > 0, got {self.rate}", f"flows[{self.id}].rate")
        if not self.omega > 0:
            raise TopologyError(f"omega must be > 0, got {self.omega}", f"flows[{self.id}].omega")


@dataclass(frozen=True)
class Path:
    id: str
    queues: tuple[str, ...]
    flow: str

    def __post_init__(self):
        object.__setattr__(self, "queues", tuple(self.queues))
        if not self.queues:
            raise TopologyError("path has no queues", f"paths[{self.id}]")
        if len(set(self.queues)) != len(self.queues):
            raise TopologyError("path visits a queue twice", f"paths[{self.id}]")

    def edges(self) -> list[tuple[str, str]]:
        return list(zip(self.queues[:-1], self.queues[1:]))


@dataclass(frozen=True)
class Policy:
    """Per-path probabilities (keyed by path id) and per-queue service rates."""

    path_probs: Mapping[str, float]
    service_rates: Mapping[str, float]

    def p(self, path_id: str) -> float:
        return float(self.path_probs.get(path_id, 0.0))

    def to_dict(self) -> dict:
        return {"path_probs": {k: float(v) for k, v in self.path_probs.items()},
                "service_rates": {k: float(v) for k, v in self.service_rates.items()}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Policy":
        return cls(dict(data["path_probs"]), dict(data["service_rates"]))


@dataclass(frozen=True)
class ArrivalRates:
    lam: Mapping[str, float]

    def __getitem__(self, qid: str) -> float:
        return self.lam[qid]


@dataclass(frozen=True)
class RoutingMatrix:
    alphas: Mapping[tuple[str, str], float]
    residual: float = 0.0


@dataclass(frozen=True)
class StabilityReport:
    rho: Mapping[str, float]
    stable: bool
    violating: tuple[str, ...]


@dataclass(frozen=True)
class Topology:
    queues: tuple[QueueSpec, ...]
    junctions: Mapping[str, tuple[str, ...]]
    flows: tuple[FlowSpec, ...]
    fixed_alphas: Mapping[tuple[str, str], float] = field(default_factory=dict)
    explicit_paths: tuple[Path, ...] | None = None

    def __post_init__(self):
        queues = tuple(sorted(self.queues, key=lambda q: q.id))
        flows = tuple(sorted(self.flows, key=lambda f: f.id))
        object.__setattr__(self, "queues", queues)
        object.__setattr__(self, "flows", flows)
        ids = [q.id for q in queues]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate queue id", "queues")
        known = set(ids)
        adj = {q: tuple(sorted(set(self.junctions.get(q, ())))) for q in ids}
        for src, dsts in self.junctions.items():
            if src not in known:
                raise TopologyError(f"unknown queue {src!r}", "junctions.from")
            for d in dsts:
                if d not in known:
                    raise TopologyError(f"unknown queue {d!r}", "junctions.to")
        object.__setattr__(self, "junctions", adj)
        for q in queues:
            if q.is_sink and adj[q.id]:
                raise TopologyError("sink queue cannot have successors", f"queues[{q.id}]")
        fids = [f.id for f in flows]
        if len(set(fids)) != len(fids):
            raise TopologyError("duplicate flow id", "flows")
        for f in flows:
            if f.ingress not in known:
                raise TopologyError(f"unknown ingress {f.ingress!r}", f"flows[{f.id}].ingress")
            if f.egress not in known:
                raise TopologyError(f"unknown egress {f.egress!r}", f"flows[{f.id}].egress")
        cycle = _find_cycle(adj)
        if cycle:
            raise CycleError(cycle)

    # ---- lookups -------------------------------------------------------
    @cached_property
    def queue_by_id(self) -> dict[str, QueueSpec]:
        return {q.id: q for q in self.queues}

    @cached_property
    def flow_by_id(self) -> dict[str, FlowSpec]:
        return {f.id: f for f in self.flows}

    @cached_property
    def paths(self) -> tuple[Path, ...]:
        if self.explicit_paths is not None:
            return tuple(sorted(self.explicit_paths, key=lambda w: w.id))
        return tuple(enumerate_paths(self))

    @cached_property
    def path_by_id(self) -> dict[str, Path]:
        return {w.id: w for w in self.paths}

    def paths_of(self, flow_id: str) -> list[Path]:
        return [w for w in self.paths if w.flow == flow_id]

    @property
    def junction_count(self) -> int:
        """Number of queues with more than one successor."""
        return sum(1 for v in self.junctions.values() if len(v) > 1)

    @cached_property
    def index(self) -> "NetworkIndex":
        return NetworkIndex(self)

    def uniform_policy(self) -> Policy:
        probs = {}
        for f in self.flows:
            ws = self.paths_of(f.id)
            for w in ws:
                probs[w.id] = 1.0 / len(ws)
        return Policy(probs, {q.id: q.mu_max for q in self.queues})

    def content_hash(self) -> str:
        blob = json.dumps(topology_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class NetworkIndex:
    """Dense array view of a topology used by the numeric code paths."""

    def __init__(self, topo: Topology):
        self.queue_ids = [q.id for q in topo.queues]
        self.qpos = {q: i for i, q in enumerate(self.queue_ids)}
        self.flow_ids = [f.id for f in topo.flows]
        self.fpos = {f: i for i, f in enumerate(self.flow_ids)}
        self.paths = list(topo.paths)
        self.path_ids = [w.id for w in self.paths]
        self.ppos = {w: i for i, w in enumerate(self.path_ids)}
        nq, nw = len(self.queue_ids), len(self.paths)
        self.gbar = np.array([q.batch_pmf.mean if q.batch_pmf is not None else 1.0
                              for q in topo.queues])
        # a flow's rate counts batches at its ingress; each queue counts arrivals in
        # units of its own batch size, so vehicles are conserved along the path
        ingress_gbar = {f.id: self.gbar[self.qpos[f.ingress]] for f in topo.flows}
        self.incidence = np.zeros((nw, nq))
        for r, w in enumerate(self.paths):
            for q in w.queues:
                i = self.qpos[q]
                self.incidence[r, i] = ingress_gbar[w.flow] / self.gbar[i]
        self.path_flow = np.array([self.fpos[w.flow] for w in self.paths], dtype=np.int64)
        self.rates = np.array([f.rate for f in topo.flows])
        self.omegas = np.array([f.omega for f in topo.flows])
        self.mu_max = np.array([q.mu_max for q in topo.queues])
        self.is_sink = np.array([q.is_sink for q in topo.queues])
        # queue indices each path accounts travel time over (sinks excluded)
        self.travel = [np.array([self.qpos[q] for q in w.queues if not self.is_sink[self.qpos[q]]],
                                dtype=np.int64) for w in self.paths]
        self.flow_paths = [np.flatnonzero(self.path_flow == k) for k in range(len(self.flow_ids))]

    def p_vector(self, policy: Policy) -> np.ndarray:
        return np.array([policy.p(w) for w in self.path_ids])

    def mu_vector(self, policy: Policy) -> np.ndarray:
        return np.array([policy.service_rates.get(q, mx) for q, mx in zip(self.queue_ids, self.mu_max)])

    def policy_from(self, p: np.ndarray, mu: np.ndarray) -> Policy:
        return Policy({w: float(x) for w, x in zip(self.path_ids, p)},
                      {q: float(m) for q, m in zip(self.queue_ids, mu)})

    def lam_vector(self, p: np.ndarray) -> np.ndarray:
        return (self.rates[self.path_flow] * p) @ self.incidence


def _find_cycle(adj: Mapping[str, Iterable[str]]) -> list[str] | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {q: WHITE for q in adj}
    stack_path: list[str] = []

    def visit(u):
        color[u] = GREY
        stack_path.append(u)
        for v in adj.get(u, ()):
            if color[v] == GREY:
                return stack_path[stack_path.index(v):] + [v]
            if color[v] == WHITE:
                found = visit(v)
                if found:
                    return found
        stack_path.pop()
        color[u] = BLACK
        return None

    for q in sorted(adj):
        if color[q] == WHITE:
            found = visit(q)
            if found:
                return found
    return None


# ---------------------------------------------------------------------------
# operations

def enumerate_paths(topology: Topology) -> list[Path]:
    """All simple ingress-to-egress queue sequences, per flow.

    Paths are sorted per flow by their queue-id sequence and named
    ``"<flow>:<n>"``.
    """
    adj = topology.junctions
    out: list[Path] = []
    for f in topology.flows:
        seqs: list[tuple[str, ...]] = []
        stack = [(f.ingress, (f.ingress,))]
        while stack:
            node, seq = stack.pop()
            if node == f.egress:
                seqs.append(seq)
                continue
            for nxt in adj[node]:
                if nxt not in seq:
                    stack.append((nxt, seq + (nxt,)))
        if not seqs:
            raise UnreachableFlowError(f"egress {f.egress!r} unreachable from {f.ingress!r}",
                                       f"flows[{f.id}]")
        for n, seq in enumerate(sorted(seqs)):
            out.append(Path(f"{f.id}:{n}", seq, f.id))
    return out


def validate_policy(topology: Topology, policy: Policy, tol: float = PROB_TOL) -> None:
    for f in topology.flows:
        ws = topology.paths_of(f.id)
        total = 0.0
        for w in ws:
            p = policy.p(w.id)
            if p < -tol or p > 1 + tol:
                raise PolicyError(f"p[{w.id}] = {p} outside [0, 1]")
            total += p
        if abs(total - 1.0) > tol:
            raise PolicyError(f"path probabilities of flow {f.id} sum to {total}, not 1")
    for q in topology.queues:
        mu = policy.service_rates.get(q.id, q.mu_max)
        if not (0 < mu <= q.mu_max * (1 + 1e-12)):
            raise PolicyError(f"service rate of {q.id} = {mu} outside (0, mu_max]")


def compute_arrival_rates(topology: Topology, policy: Policy) -> ArrivalRates:
    """Per-queue arrival rates: flow rates summed over the paths through each queue.

    Rates are batch rates.  Downstream of a batch ingress, a queue without a
    pmf of its own sees individual vehicles at ``rate * gbar_ingress``.
    """
    idx = topology.index
    lam = idx.lam_vector(idx.p_vector(policy))
    return ArrivalRates({q: float(x) for q, x in zip(idx.queue_ids, lam)})


def check_stability(topology: Topology, policy: Policy) -> StabilityReport:
    lam = compute_arrival_rates(topology, policy)
    rho: dict[str, float] = {}
    bad = []
    for q in topology.queues:
        if q.is_sink:
            continue
        mu = policy.service_rates.get(q.id, q.mu_max)
        gbar = q.batch_pmf.mean if q.batch_pmf is not None else 1.0
        rho[q.id] = lam[q.id] * gbar / mu
        if not rho[q.id] < 1.0:
            bad.append(q.id)
    return StabilityReport(rho, not bad, tuple(bad))


def path_probs_from_alphas(paths: Iterable[Path], alphas: Mapping[tuple[str, str], float]) -> dict[str, float]:
    """Forward map: a path's probability is the product of its edge transition probabilities."""
    return {w.id: float(np.prod([alphas.get(e, 0.0) for e in w.edges()])) for w in paths}


def reconstruct_alphas(paths: Iterable[Path], policy: Policy, topology: Topology,
                       tol: float = 1e-6) -> RoutingMatrix:
    """Recover junction transition probabilities from path probabilities.

    Each edge gets the share of the probability mass leaving its tail that
    continues along it, which is exact whenever the path probabilities come
    from a routing matrix.  The result is pushed forward again; a residual
    above ``tol`` means no routing matrix reproduces ``policy``.  Edges used
    only by zero-probability paths get probability zero.
    """
    paths = list(paths)
    fixed = dict(topology.fixed_alphas)
    all_edges = {e for w in paths for e in w.edges()}
    edge_mass: dict[tuple[str, str], float] = {}
    node_mass: dict[str, float] = {}
    for w in paths:
        p = policy.p(w.id)
        if p <= 0:
            continue
        for a, b in w.edges():
            edge_mass[(a, b)] = edge_mass.get((a, b), 0.0) + p
            node_mass[a] = node_mass.get(a, 0.0) + p

    alphas: dict[tuple[str, str], float] = {e: 0.0 for e in all_edges}
    succ: dict[str, list[str]] = {}
    for a, b in sorted(all_edges):
        succ.setdefault(a, []).append(b)
    for a, outs in succ.items():
        es = [(a, b) for b in outs]
        pinned = sum(fixed[e] for e in es if e in fixed)
        free = [e for e in es if e not in fixed]
        mass = sum(edge_mass.get(e, 0.0) for e in free)
        for e in es:
            if e in fixed:
                alphas[e] = float(fixed[e])
            elif mass > 0:
                alphas[e] = (1.0 - pinned) * edge_mass.get(e, 0.0) / mass
            elif len(free) == 1 and node_mass.get(a, 0.0) == 0.0:
                alphas[e] = 1.0 - pinned

    fwd = path_probs_from_alphas(paths, alphas)
    residual = max((abs(fwd[w.id] - policy.p(w.id)) for w in paths), default=0.0)
    if residual > tol:
        raise InconsistentAlphasError(residual)
    return RoutingMatrix(alphas, residual)


# ---------------------------------------------------------------------------
# scenario files

def _req(obj: Mapping, key: str, where: str):
    if not isinstance(obj, Mapping) or key not in obj:
        raise TopologyError(f"missing required key {key!r}", where)
    return obj[key]


def topology_from_dict(data: Mapping) -> Topology:
    """Build a topology from the scenario JSON schema, validating as it goes."""
    if not isinstance(data, Mapping):
        raise TopologyError("scenario must be a JSON object", "$")
    queues = []
    for i, q in enumerate(_req(data, "queues", "$")):
        where = f"queues[{i}]"
        pmf = None
        if q.get("batch_pmf"):
            try:
                entries = [(int(e["n"]), float(e["prob"])) for e in q["batch_pmf"]]
                pmf = BatchPmf.from_pairs(entries)
            except (KeyError, TypeError, ValueError) as exc:
                raise TopologyError(f"invalid batch_pmf ({exc})", f"{where}.batch_pmf") from exc
        model = q.get("service_model", "mm1")
        if model not in {m.value for m in ServiceModel}:
            raise TopologyError(f"unknown service_model {model!r}", f"{where}.service_model")
        try:
            mu = float(_req(q, "mu_max", where))
        except (TypeError, ValueError):
            raise TopologyError("mu_max must be a number", f"{where}.mu_max")
        if not mu > 0:
            raise TopologyError(f"mu_max must be > 0, got {mu}", f"{where}.mu_max")
        queues.append(QueueSpec(str(_req(q, "id", where)), mu, ServiceModel(model), pmf, q.get("lane")))

    junctions: dict[str, list[str]] = {}
    for i, j in enumerate(data.get("junctions", [])):
        where = f"junctions[{i}]"
        junctions.setdefault(str(_req(j, "from", where)), []).append(str(_req(j, "to", where)))

    flows = []
    for i, f in enumerate(_req(data, "flows", "$")):
        where = f"flows[{i}]"
        try:
            rate, omega = float(_req(f, "rate", where)), float(_req(f, "omega", where))
        except (TypeError, ValueError):
            raise TopologyError("rate/omega must be numbers", where)
        for key, val in (("rate", rate), ("omega", omega)):
            if not val > 0:
                raise TopologyError(f"{key} must be > 0, got {val}", f"{where}.{key}")
        flows.append(FlowSpec(str(_req(f, "id", where)), str(_req(f, "ingress", where)),
                              str(_req(f, "egress", where)), rate, omega))

    fixed = {}
    for i, a in enumerate(data.get("fixed_alphas", [])):
        where = f"fixed_alphas[{i}]"
        fixed[(str(_req(a, "from", where)), str(_req(a, "to", where)))] = float(_req(a, "alpha", where))

    explicit = None
    if data.get("paths"):
        explicit = []
        per_flow: dict[str, int] = {}
        for i, p in enumerate(data["paths"]):
            where = f"paths[{i}]"
            fid = str(_req(p, "flow", where))
            n = per_flow.get(fid, 0)
            per_flow[fid] = n + 1
            explicit.append(Path(str(p.get("id", f"{fid}:{n}")), tuple(map(str, _req(p, "queues", where))), fid))

    topo = Topology(tuple(queues), {k: tuple(v) for k, v in junctions.items()}, tuple(flows),
                    fixed, tuple(explicit) if explicit is not None else None)
    if explicit is not None:
        _check_explicit_paths(topo)
    else:
        topo.paths  # noqa: B018 - surfaces unreachable flows at load time
    return topo


def _check_explicit_paths(topo: Topology) -> None:
    for i, w in enumerate(topo.paths):
        where = f"paths[{i}]"
        f = topo.flow_by_id.get(w.flow)
        if f is None:
            raise TopologyError(f"unknown flow {w.flow!r}", f"{where}.flow")
        if w.queues[0] != f.ingress or w.queues[-1] != f.egress:
            raise TopologyError("path must start at the flow ingress and end at its egress", where)
        for a, b in w.edges():
            if b not in topo.junctions.get(a, ()):
                raise TopologyError(f"no junction {a} -> {b}", f"{where}.queues")
    for f in topo.flows:
        if not topo.paths_of(f.id):
            raise UnreachableFlowError("flow has no paths", f"flows[{f.id}]")


def topology_to_dict(topo: Topology) -> dict:
    queues = []
    for q in topo.queues:
        d = {"id": q.id, "mu_max": q.mu_max, "service_model": q.service_model.value}
        if q.batch_pmf is not None:
            d["batch_pmf"] = [{"n": n, "prob": p} for n, p in q.batch_pmf.pairs()]
        if q.lane is not None:
            d["lane"] = q.lane
        queues.append(d)
    out = {
        "queues": queues,
        "junctions": [{"from": a, "to": b} for a in sorted(topo.junctions) for b in topo.junctions[a]],
        "flows": [{"id": f.id, "ingress": f.ingress, "egress": f.egress, "rate": f.rate, "omega": f.omega}
                  for f in topo.flows],
    }
    if topo.fixed_alphas:
        out["fixed_alphas"] = [{"from": a, "to": b, "alpha": v} for (a, b), v in sorted(topo.fixed_alphas.items())]
    if topo.explicit_paths is not None:
        out["paths"] = [{"id": w.id, "flow": w.flow, "queues": list(w.queues)} for w in topo.explicit_paths]
    return out


def load_topology(path: str | FsPath) -> Topology:
    try:
        data = json.loads(FsPath(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TopologyError(f"invalid JSON ({exc})", "$") from exc
    return topology_from_dict(data)


def with_service_model(topo: Topology, model: ServiceModel) -> Topology:
    """Copy of ``topo`` with every non-sink queue switched to ``model``."""
    queues = tuple(q if q.is_sink else QueueSpec(q.id, q.mu_max, model, q.batch_pmf, q.lane)
                   for q in topo.queues)
    return Topology(queues, topo.junctions, topo.flows, topo.fixed_alphas, topo.explicit_paths)
