"""Policy optimizers: bottleneck hunting, exhaustive grid, projected gradient.

All three minimize the worst flow's probability of exceeding its target
travel time over the per-flow path probabilities; service rates stay at
whatever the initial policy carries (``mu_max`` by default).
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, InstabilityError
from .topology import Policy, Topology, compute_arrival_rates, validate_policy
from .travel_time import EvaluationCounter, FlowExceedance, evaluate_objective

IMPROVE_EPS = 1e-12


@dataclass(frozen=True)
class BHConfig:
    phi0: float = 0.25
    phi_min: float = 1.0 / 1024
    max_evals: int = 100_000
    # "least_loaded": lexicographically largest sorted slack vector;
    # "min_delta": smallest exceedance; "argmin_max": smallest maximum slack
    w_prime_rule: str = "least_loaded"
    # in the all-critical regime, also try moving traffic back from w' to w*
    reverse_transfer: bool = True
    # skip queues already tightest on w1 when building the critical set
    exclude_bottlenecks: bool = False

    def __post_init__(self):
        if not (0 < self.phi_min <= self.phi0 <= 1):
            raise ValueError("need 0 < phi_min <= phi0 <= 1")
        if self.w_prime_rule not in ("min_delta", "least_loaded", "argmin_max"):
            raise ValueError(f"unknown w_prime_rule {self.w_prime_rule!r}")


@dataclass
class TraceStep:
    iteration: int
    phi: float
    k_star: str | None
    w_star: str | None
    w_prime: str | None
    accepted: bool
    objective: float
    mode: str = ""
    direction: str = "forward"
    w_prime_critical: bool = False


@dataclass
class OptimizationTrace:
    algorithm: str
    evaluations: int = 0
    iterations: int = 0
    objective_history: list[float] = field(default_factory=list)
    steps: list[TraceStep] = field(default_factory=list)
    final_policy: Policy | None = None
    final_objective: float = math.nan
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "objective_history": list(self.objective_history),
            "final_objective": self.final_objective,
            "truncated": self.truncated,
            "steps": [vars(s).copy() for s in self.steps],
            "final_policy": self.final_policy.to_dict() if self.final_policy else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["iteration", "phi", "k_star", "w_star", "w_prime", "accepted", "objective",
                "mode", "direction"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for s in self.steps:
            w.writerow([getattr(s, c) for c in cols])
        return buf.getvalue()


def evaluation_bound(topology: Topology, config: BHConfig) -> int:
    """Worst-case objective evaluations of bottleneck hunting."""
    return (math.ceil(math.log2(config.phi0 / config.phi_min))
            * math.ceil(1.0 / config.phi_min) * len(topology.flows) * len(topology.paths))


class _Objective:
    """Counting objective with instability mapped to ``inf``."""

    def __init__(self, topology: Topology, cap: int | None = None, validate: bool = True):
        self.topology = topology
        self.validate = validate
        self.counter = EvaluationCounter()
        self.cap = cap

    @property
    def exhausted(self) -> bool:
        return self.cap is not None and self.counter.count >= self.cap

    def full(self, policy: Policy) -> FlowExceedance | None:
        try:
            return evaluate_objective(self.topology, policy, self.counter, self.validate)
        except InstabilityError:
            return None

    def __call__(self, policy: Policy) -> float:
        fe = self.full(policy)
        return math.inf if fe is None else fe.objective


# ---------------------------------------------------------------------------
# bottleneck hunting

def _slack_map(topology: Topology, policy: Policy) -> dict[str, float]:
    lam = compute_arrival_rates(topology, policy)
    return {q.id: policy.service_rates.get(q.id, q.mu_max) - lam[q.id]
            for q in topology.queues if not q.is_sink}


def critical_queues(topology: Topology, policy: Policy, phi: float,
                    exclude_bottlenecks: bool = False) -> set[str]:
    """Queues shared by two paths whose slack gap to the tightest other queue
    on the first path is at most ``phi`` times the second path's flow rate.

    Paths with a single (non-sink) queue have no "other" queue and are
    skipped as the first path.  A negative gap (the queue already is the
    tightest on ``w1``) satisfies the inequality and counts, unless
    ``exclude_bottlenecks`` is set.
    """
    slack = _slack_map(topology, policy)
    rate = {f.id: f.rate for f in topology.flows}
    members: dict[str, list] = {}
    for w in topology.paths:
        for q in w.queues:
            if q in slack:
                members.setdefault(q, []).append(w)
    cq: set[str] = set()
    for q, ws in members.items():
        if len(ws) < 2:
            continue
        for w1 in ws:
            others = [slack[j] for j in w1.queues if j != q and j in slack]
            if not others:
                continue
            gap = slack[q] - min(others)
            if exclude_bottlenecks and gap <= 0:
                continue
            if any(w2.id != w1.id and gap <= phi * rate[w2.flow] for w2 in ws):
                cq.add(q)
                break
    return cq


def _path_key(w, slack, rule, delta):
    if rule == "min_delta":
        return (delta[w.id],)
    s = sorted(slack[q] for q in w.queues if q in slack)
    if rule == "argmin_max":
        return (max(s) if s else math.inf,)
    # lexicographically largest ascending slack vector = least loaded
    return tuple(-x for x in s)


def bh_optimize(topology: Topology, config: BHConfig | None = None,
                initial: Policy | None = None,
                callback: Callable[[TraceStep], None] | None = None) -> OptimizationTrace:
    """Bottleneck hunting: repeatedly move a fraction ``phi`` of the worst
    flow's traffic from its worst path to its least-loaded one, halving
    ``phi`` whenever the move does not improve the objective."""
    config = config or BHConfig()
    policy = initial or topology.uniform_policy()
    validate_policy(topology, policy)
    obj = _Objective(topology, config.max_evals)
    fe = obj.full(policy)
    if fe is None:
        raise InstabilityError((), "initial policy is unstable")
    trace = OptimizationTrace("bh", objective_history=[fe.objective])
    paths_of = {f.id: topology.paths_of(f.id) for f in topology.flows}
    movable = [f.id for f in topology.flows if len(paths_of[f.id]) > 1]
    phi = config.phi0
    it = 0
    while movable:
        if obj.exhausted:
            trace.truncated = True
            break
        it += 1
        slack = _slack_map(topology, policy)
        cq = critical_queues(topology, policy, phi, config.exclude_bottlenecks)
        cp = {w.id for w in topology.paths if any(q in cq for q in w.queues)}

        def candidates(k, restrict):
            ws = paths_of[k]
            live = [w for w in ws if policy.p(w.id) > 0]
            if not live:
                return None
            w_star = max(live, key=lambda w: (fe.per_path_delta[w.id], [-ord(c) for c in w.id]))
            pool = [w for w in ws if w.id != w_star.id and (not restrict or w.id not in cp)]
            if not pool:
                return None
            w_prime = min(pool, key=lambda w: (_path_key(w, slack, config.w_prime_rule, fe.per_path_delta), w.id))
            return w_star, w_prime

        mode = "noncritical"
        fa = {}
        for k in movable:
            if any(w.id not in cp for w in paths_of[k]):
                c = candidates(k, True)
                if c is not None:
                    fa[k] = c
        if not fa:
            mode = "all"
            fa = {k: c for k in movable if (c := candidates(k, False)) is not None}
        if not fa:
            break
        k_star = max(sorted(fa), key=lambda k: fe.per_flow_delta[k])
        w_star, w_prime = fa[k_star]

        moves = [(w_star, w_prime, "forward")]
        if mode == "all" and config.reverse_transfer:
            moves.append((w_prime, w_star, "reverse"))
        accepted = False
        for src, dst, direction in moves:
            amount = min(phi, policy.p(src.id))
            if amount <= 0:
                continue
            probs = dict(policy.path_probs)
            probs[src.id] = max(probs[src.id] - amount, 0.0)
            probs[dst.id] = min(probs.get(dst.id, 0.0) + amount, 1.0)
            cand = Policy(probs, policy.service_rates)
            cfe = obj.full(cand)
            val = math.inf if cfe is None else cfe.objective
            if val < fe.objective - IMPROVE_EPS:
                policy, fe, accepted = cand, cfe, True
                break
            if obj.exhausted:
                break
        step = TraceStep(it, phi, k_star, w_star.id, w_prime.id, accepted, fe.objective, mode,
                         direction if accepted else "none", w_prime.id in cp)
        trace.steps.append(step)
        if callback:
            callback(step)
        if accepted:
            trace.objective_history.append(fe.objective)
        else:
            phi /= 2.0
            if phi < config.phi_min:
                break
    trace.iterations = it
    trace.evaluations = obj.counter.count
    trace.final_policy = policy
    trace.final_objective = fe.objective
    return trace


# ---------------------------------------------------------------------------
# exhaustive grid

def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def free_dimensions(topology: Topology) -> int:
    return sum(len(topology.paths_of(f.id)) - 1 for f in topology.flows)


def brute_force_optimize(topology: Topology, grid_step: float = 1e-3, max_points: int = 5_000_000,
                         base: Policy | None = None) -> tuple[Policy, float, int]:
    """Exact minimizer over the product of per-flow probability grids.

    Returns ``(policy, objective, evaluations)``.  Refuses more than four
    free dimensions.
    """
    dims = free_dimensions(topology)
    if dims > 4:
        raise DimensionError(f"{dims} free probability dimensions; exhaustive search supports at most 4")
    n = int(round(1.0 / grid_step))
    if abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError("grid_step must divide 1")
    base = base or topology.uniform_policy()
    flows = [f.id for f in topology.flows]
    per_flow = [[w.id for w in topology.paths_of(k)] for k in flows]
    npoints = 1
    for ws in per_flow:
        npoints *= math.comb(n + len(ws) - 1, len(ws) - 1)
    if npoints > max_points:
        raise DimensionError(f"grid has {npoints} points (limit {max_points}); use a coarser step")
    obj = _Objective(topology)
    best, best_val = None, math.inf
    grids = [list(_compositions(n, len(ws))) for ws in per_flow]
    for combo in itertools.product(*grids):
        probs = {}
        for ws, parts in zip(per_flow, combo):
            for w, c in zip(ws, parts):
                probs[w] = c / n
        pol = Policy(probs, base.service_rates)
        val = obj(pol)
        if val < best_val - IMPROVE_EPS:
            best, best_val = pol, val
    if best is None:
        raise InstabilityError((), "no stable policy on the grid")
    return best, best_val, obj.counter.count


# ---------------------------------------------------------------------------
# projected gradient

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = len(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, n + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _schedule(name, alpha0):
    if callable(name):
        return name
    if name == "constant":
        return lambda t: alpha0
    if name == "diminishing":
        return lambda t: alpha0 / math.sqrt(t + 1.0)
    raise ValueError(f"unknown step schedule {name!r}")


def gradient_baseline(topology: Topology, initial: Policy | None = None,
                      schedule="armijo", alpha0: float = 1.0, fd_step: float = 1e-6,
                      tol: float = 1e-6, max_evals: int = 100_000,
                      armijo: float = 1e-4, max_backtracks: int = 30) -> OptimizationTrace:
    """Projected finite-difference gradient descent over the path probabilities.

    The gradient is taken by forward differences in every probability of
    every multi-path flow (probes may leave the simplex); the step is
    projected back onto each flow's simplex.  ``schedule`` is ``"constant"``,
    ``"diminishing"`` (``alpha0 / sqrt(t+1)``), a callable ``t -> alpha``, or
    ``"armijo"`` for backtracking from ``alpha0``.  Stops once an iteration
    improves the objective by less than ``tol``; the best point is returned.
    Every probe and trial counts as one objective evaluation.
    """
    policy = initial or topology.uniform_policy()
    validate_policy(topology, policy)
    idx = topology.index
    blocks = [fp for fp in idx.flow_paths if len(fp) > 1]
    obj = _Objective(topology, max_evals, validate=False)
    x = idx.p_vector(policy)
    mu = idx.mu_vector(policy)
    pol = lambda v: idx.policy_from(v, mu)
    f = obj(pol(x))
    if not math.isfinite(f):
        raise InstabilityError((), "initial policy is unstable")
    step_at = None if schedule == "armijo" else _schedule(schedule, alpha0)
    trace = OptimizationTrace("gradient", objective_history=[f])
    best_x, best_f = x, f
    it = 0
    while blocks and not obj.exhausted:
        g = np.zeros_like(x)
        for fp in blocks:
            for i in fp:
                xp = x.copy()
                xp[i] += fd_step
                val = obj(pol(xp))
                if not math.isfinite(val):
                    xp[i] -= 2 * fd_step
                    val = 2 * f - obj(pol(xp))
                g[i] = (val - f) / fd_step

        def project(a):
            y = x.copy()
            for fp in blocks:
                y[fp] = project_simplex(x[fp] - a * g[fp])
            return y

        if step_at is not None:
            a = step_at(it)
            y = project(a)
            fy = obj(pol(y))
        else:
            a = alpha0
            for _ in range(max_backtracks):
                y = project(a)
                fy = obj(pol(y))
                if fy <= f - armijo * float(g @ (x - y)) or obj.exhausted:
                    break
                a *= 0.5
        it += 1
        improvement = f - fy
        accepted = math.isfinite(fy) and improvement > 0
        trace.steps.append(TraceStep(it, a, None, None, None, accepted, fy))
        if math.isfinite(fy):
            x, f = y, fy
            if f < best_f:
                best_x, best_f = x, f
                trace.objective_history.append(f)
        if improvement < tol:
            break
    if obj.exhausted:
        trace.truncated = True
    trace.iterations = it
    trace.evaluations = obj.counter.count
    trace.final_policy = pol(best_x)
    trace.final_objective = best_f
    return trace
