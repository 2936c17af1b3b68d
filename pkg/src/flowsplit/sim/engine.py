"""Replication driver, arrival streams and reports for the simulator.

Arrival streams are drawn with numpy's PCG64 generator, one independent
child of ``SeedSequence(seed)`` per replication.  Each vehicle carries a
uniform that picks its path and a row of unit-exponential draws used for
its service times, so every policy compared on the same replication sees
exactly the same vehicles (common random numbers).
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import PolicyError
from ..topology import Policy, ServiceModel, Topology, check_stability, validate_policy
from .kernel import DISTRIBUTED, MD1, MM1, POLICY, SINK, run_replication

DEFAULT_MAX_VEHICLES = 20_000_000


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 10_000.0
    warmup: float = 0.1
    seed: int = 0
    replications: int = 1
    mode: str = "policy"            # "policy" or "distributed"
    policy: Policy | None = None
    window: float = 0.0             # distributed rule: occupancy refresh period (0 = live)
    flow_rates: Mapping[str, float] | None = None  # optional overrides, zero allowed
    max_vehicles: int = DEFAULT_MAX_VEHICLES
    jobs: int = 1

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if not 0 <= self.warmup < 1:
            raise ValueError("warmup must be in [0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.mode not in ("policy", "distributed"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SimReport:
    per_flow_trip_times: dict[str, np.ndarray]
    per_flow_exceedance: dict[str, float]
    mean_trip_time: float
    per_queue_mean_occupancy: dict[str, float]
    per_queue_mean_sojourn: dict[str, float]
    per_queue_arrival_rate: dict[str, float]
    vehicle_count: int
    generated: int
    counts_at_horizon: dict[str, int]
    seed: int
    replications: int
    mode: str
    truncated: bool = False
    diverged: bool = False

    @property
    def mean_occupancy(self) -> float:
        """Mean vehicles per (non-sink) queue."""
        vals = list(self.per_queue_mean_occupancy.values())
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self, include_samples: bool = False) -> dict:
        out = {
            "seed": self.seed,
            "replications": self.replications,
            "mode": self.mode,
            "vehicle_count": self.vehicle_count,
            "generated": self.generated,
            "mean_trip_time": self.mean_trip_time,
            "mean_occupancy": self.mean_occupancy,
            "per_flow_exceedance": self.per_flow_exceedance,
            "per_flow_mean_trip_time": {k: float(v.mean()) if len(v) else None
                                        for k, v in self.per_flow_trip_times.items()},
            "per_flow_vehicle_count": {k: int(len(v)) for k, v in self.per_flow_trip_times.items()},
            "per_queue_mean_occupancy": self.per_queue_mean_occupancy,
            "per_queue_mean_sojourn": self.per_queue_mean_sojourn,
            "per_queue_arrival_rate": self.per_queue_arrival_rate,
            "counts_at_horizon": self.counts_at_horizon,
            "truncated": self.truncated,
            "diverged": self.diverged,
        }
        if include_samples:
            out["per_flow_trip_times"] = {k: v.tolist() for k, v in self.per_flow_trip_times.items()}
        return out

    def ecdf_grid(self, grid: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self.per_flow_trip_times.items():
            s = np.sort(v)
            out[k] = np.searchsorted(s, grid, side="right") / len(s) if len(s) else np.full(len(grid), np.nan)
        return out

    def ecdf_csv(self, grid: np.ndarray) -> str:
        cdfs = self.ecdf_grid(grid)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + list(cdfs))
        for i, t in enumerate(grid):
            w.writerow([f"{t:.6g}"] + [f"{cdfs[k][i]:.6g}" for k in cdfs])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# static arrays

class _Network:
    def __init__(self, topology: Topology):
        idx = topology.index
        self.topology = topology
        self.idx = idx
        nq = len(idx.queue_ids)
        svc = {ServiceModel.MARKOVIAN: MM1, ServiceModel.DETERMINISTIC: MD1, ServiceModel.SINK: SINK}
        self.svc_type = np.array([svc[q.service_model] for q in topology.queues], dtype=np.int64)
        self.lane = np.array([q.lane if q.lane is not None else -1 for q in topology.queues], dtype=np.int64)
        maxlen = max(len(w.queues) for w in idx.paths)
        self.path_queues = np.full((len(idx.paths), maxlen), -1, dtype=np.int64)
        self.path_len = np.zeros(len(idx.paths), dtype=np.int64)
        for r, w in enumerate(idx.paths):
            self.path_queues[r, :len(w.queues)] = [idx.qpos[q] for q in w.queues]
            self.path_len[r] = len(w.queues)
        self.max_hops = maxlen
        self.flow_ingress = np.array([idx.qpos[f.ingress] for f in topology.flows], dtype=np.int64)
        self.flow_egress = np.array([idx.qpos[f.egress] for f in topology.flows], dtype=np.int64)
        maxdeg = max([len(v) for v in topology.junctions.values()] + [1])
        self.succ = np.full((nq, maxdeg), -1, dtype=np.int64)
        self.succ_len = np.zeros(nq, dtype=np.int64)
        for q, outs in topology.junctions.items():
            i = idx.qpos[q]
            self.succ[i, :len(outs)] = sorted(idx.qpos[o] for o in outs)
            self.succ_len[i] = len(outs)
        self.reach = self._reachability(nq)
        # batch sizes come from the ingress queue's pmf
        self.flow_pmf = [topology.queue_by_id[f.ingress].batch_pmf for f in topology.flows]

    def _reachability(self, nq):
        reach = np.zeros((nq, nq), dtype=np.bool_)
        order = _topological_order(self.succ, self.succ_len)
        for q in reversed(order):
            for c in range(self.succ_len[q]):
                s = self.succ[q, c]
                reach[q, s] = True
                reach[q] |= reach[s]
        return reach


def _topological_order(succ, succ_len):
    nq = len(succ_len)
    indeg = np.zeros(nq, dtype=int)
    for q in range(nq):
        for c in range(succ_len[q]):
            indeg[succ[q, c]] += 1
    stack = [q for q in range(nq) if indeg[q] == 0]
    order = []
    while stack:
        q = stack.pop()
        order.append(q)
        for c in range(succ_len[q]):
            s = succ[q, c]
            indeg[s] -= 1
            if indeg[s] == 0:
                stack.append(s)
    return order


@dataclass
class _Stream:
    arr_t: np.ndarray
    veh_flow: np.ndarray
    u_path: np.ndarray
    hop_exp: np.ndarray
    truncated: bool = False


def _generate_stream(net: _Network, rates: np.ndarray, horizon: float, rng: np.random.Generator,
                     max_vehicles: int) -> _Stream:
    times, flows = [], []
    for k, lam in enumerate(rates):
        if lam <= 0:
            continue
        n = rng.poisson(lam * horizon)
        t = np.sort(rng.uniform(0.0, horizon, n))
        pmf = net.flow_pmf[k]
        if pmf is not None and pmf.G > 1:
            sizes = rng.choice(np.arange(1, pmf.G + 1), size=n, p=np.asarray(pmf.probs))
            t = np.repeat(t, sizes)
        times.append(t)
        flows.append(np.full(len(t), k, dtype=np.int64))
    if times:
        arr_t = np.concatenate(times)
        veh_flow = np.concatenate(flows)
        order = np.argsort(arr_t, kind="stable")
        arr_t, veh_flow = arr_t[order], veh_flow[order]
    else:
        arr_t, veh_flow = np.zeros(0), np.zeros(0, dtype=np.int64)
    truncated = len(arr_t) > max_vehicles
    if truncated:
        arr_t, veh_flow = arr_t[:max_vehicles], veh_flow[:max_vehicles]
    u_path = rng.uniform(size=len(arr_t))
    hop_exp = rng.standard_exponential((len(arr_t), net.max_hops))
    return _Stream(arr_t, veh_flow, u_path, hop_exp, truncated)


def _assign_paths(net: _Network, policy: Policy, stream: _Stream) -> np.ndarray:
    idx = net.idx
    p = idx.p_vector(policy)
    veh_path = np.zeros(len(stream.arr_t), dtype=np.int64)
    for k, fp in enumerate(idx.flow_paths):
        mask = stream.veh_flow == k
        cum = np.cumsum(p[fp])
        cum[-1] = 1.0
        choice = np.searchsorted(cum, stream.u_path[mask], side="right")
        veh_path[mask] = fp[np.minimum(choice, len(fp) - 1)]
    return veh_path


def _flow_rates(topology: Topology, config: SimConfig) -> np.ndarray:
    over = config.flow_rates or {}
    return np.array([float(over.get(f.id, f.rate)) for f in topology.flows])


def _streams(net: _Network, config: SimConfig) -> list[_Stream]:
    rates = _flow_rates(net.topology, config)
    children = np.random.SeedSequence(config.seed).spawn(config.replications)
    return [_generate_stream(net, rates, config.horizon, np.random.Generator(np.random.PCG64(c)),
                             config.max_vehicles) for c in children]


def _run(net: _Network, stream: _Stream, config: SimConfig, policy: Policy | None):
    mode = DISTRIBUTED if policy is None else POLICY
    if policy is not None:
        veh_path = _assign_paths(net, policy, stream)
        mu = net.idx.mu_vector(policy)
    else:
        veh_path = np.zeros(len(stream.arr_t), dtype=np.int64)
        mu = net.idx.mu_max.astype(float)
    return run_replication(stream.arr_t, stream.veh_flow, veh_path, stream.hop_exp,
                           net.path_queues, net.path_len, mode,
                           net.flow_ingress, net.flow_egress, net.succ, net.succ_len, net.reach,
                           net.lane, net.svc_type, mu, float(config.horizon),
                           float(config.warmup * config.horizon), float(config.window))


def _report(net: _Network, streams, results, config: SimConfig, policy: Policy | None) -> SimReport:
    topo = net.topology
    nq = len(net.idx.queue_ids)
    per_flow = {f.id: [] for f in topo.flows}
    occ = np.zeros(nq)
    vsum = np.zeros(nq)
    vcnt = np.zeros(nq)
    counts = np.zeros(4, dtype=np.int64)
    generated = 0
    for stream, (trip, occ_area, visit_sum, visit_cnt, _hops, cnt) in zip(streams, results):
        generated += len(stream.arr_t)
        for k, f in enumerate(topo.flows):
            sel = (stream.veh_flow == k) & ~np.isnan(trip)
            per_flow[f.id].append(trip[sel])
        occ += occ_area
        vsum += visit_sum
        vcnt += visit_cnt
        counts += cnt
    window = config.horizon * (1.0 - config.warmup) * config.replications
    trips = {k: np.concatenate(v) if v else np.zeros(0) for k, v in per_flow.items()}
    all_trips = np.concatenate(list(trips.values())) if trips else np.zeros(0)
    omega = {f.id: f.omega for f in topo.flows}
    real = [i for i, q in enumerate(topo.queues) if not q.is_sink]
    qids = net.idx.queue_ids
    diverged = False
    if policy is not None:
        diverged = not check_stability(topo, policy).stable
    return SimReport(
        per_flow_trip_times=trips,
        per_flow_exceedance={k: float(np.mean(v > omega[k])) if len(v) else math.nan for k, v in trips.items()},
        mean_trip_time=float(all_trips.mean()) if len(all_trips) else math.nan,
        per_queue_mean_occupancy={qids[i]: float(occ[i] / window) for i in real},
        per_queue_mean_sojourn={qids[i]: float(vsum[i] / vcnt[i]) if vcnt[i] else math.nan for i in real},
        per_queue_arrival_rate={qids[i]: float(vcnt[i] / window) for i in real},
        vehicle_count=int(len(all_trips)),
        generated=generated,
        counts_at_horizon={"arrived": int(counts[0]), "completed": int(counts[1]),
                           "in_system": int(counts[2]), "not_yet_arrived": int(counts[3])},
        seed=config.seed,
        replications=config.replications,
        mode="distributed" if policy is None else "policy",
        truncated=any(s.truncated for s in streams),
        diverged=diverged,
    )


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _check_policy(topology: Topology, policy: Policy) -> None:
    validate_policy(topology, policy)
    if not check_stability(topology, policy).stable:
        warnings.warn("policy is unstable; simulated queues will diverge", RuntimeWarning, stacklevel=3)


def simulate(topology: Topology, config: SimConfig) -> SimReport:
    """Run ``config.replications`` independent replications and pool them."""
    net = _Network(topology)
    policy = None
    if config.mode == "policy":
        policy = config.policy or topology.uniform_policy()
        _check_policy(topology, policy)
    streams = _streams(net, config)
    results = _map(lambda s: _run(net, s, config, policy), streams, config.jobs)
    return _report(net, streams, results, config, policy)


DISTRIBUTED_POLICY = "distributed"


def compare_policies(topology: Topology, policies: Mapping[str, Policy | str], config: SimConfig
                     ) -> dict[str, SimReport]:
    """Simulate each named policy on the same arrival streams.

    A value of ``"distributed"`` runs the local occupancy rule instead of a
    path-probability policy.
    """
    net = _Network(topology)
    for name, pol in policies.items():
        if isinstance(pol, str):
            if pol != DISTRIBUTED_POLICY:
                raise PolicyError(f"unknown policy keyword {pol!r} for {name}")
        else:
            _check_policy(topology, pol)
    streams = _streams(net, config)
    out = {}
    for name, pol in policies.items():
        p = None if isinstance(pol, str) else pol
        results = _map(lambda s: _run(net, s, config, p), streams, config.jobs)
        out[name] = _report(net, streams, results, config, p)
    return out


def summary_table(reports: Mapping[str, SimReport]) -> list[dict]:
    return [{"policy": name, "mean_trip_time": r.mean_trip_time, "mean_occupancy": r.mean_occupancy,
             "vehicles": r.vehicle_count, **{f"exceedance_{k}": v for k, v in r.per_flow_exceedance.items()}}
            for name, r in reports.items()]
