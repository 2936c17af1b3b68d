"""Path and flow travel-time distributions and the min-max objective.

A path's travel time is the sum of the sojourn times of its (non-sink)
queues, treated as independent.  For all-M/M/1 paths the CDF is a finite
sum of exponential terms; otherwise the sojourn distributions are
convolved numerically on a uniform grid, or, under batch arrivals, a
rational Laplace transform is inverted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import gamma

from ._jit import njit
from .errors import InstabilityError, NumericalError
from .inversion import ExpTerms, group_poles, hypoexponential_cdf_terms, residue_terms, talbot
from .queue_models import (BatchPmf, ExponentialSojourn, SojournDistribution, TabulatedSojourn,
                           default_step, md1_sojourn, mm1_sojourn, mxm1_queue_factor)
from .topology import (ArrivalRates, Path, Policy, ServiceModel, Topology, check_stability,
                       compute_arrival_rates, validate_policy)

COEF_GUARD = 1e12
TALBOT_COND = 1e8
TAIL_EPS = 1e-9
MONO_TOL = 1e-9


@dataclass(frozen=True)
class ClosedFormExpTerms:
    """Travel-time CDF ``sum_i A_i t^m_i e^{-d_i t}`` (real part if complex)."""

    expterms: ExpTerms
    horizon: float
    route: str = "closed"
    flagged: bool = False

    def __post_init__(self):
        t = np.linspace(0.0, self.horizon, 1001)
        F = self.expterms(t)
        if abs(F[0]) > 1e-12:
            raise NumericalError(f"closed-form CDF is {F[0]:.3e} at t=0")
        if np.min(np.diff(F)) < -MONO_TOL or F[-1] < 1.0 - 1e-6 or F[-1] > 1.0 + 1e-6:
            raise NumericalError("closed-form CDF is not a valid distribution function")

    @property
    def terms(self) -> list[tuple[complex, complex, int]]:
        e = self.expterms
        return [(complex(a), complex(d), int(m)) for a, d, m in zip(e.coef, e.rate, e.power)]

    def cdf(self, t):
        return np.clip(self.expterms(t), 0.0, 1.0)

    def sf(self, t):
        """``1 - F`` summed from the decaying terms, so deep tails keep their digits."""
        e = self.expterms
        const = (np.abs(e.rate) == 0) & (e.power == 0)
        if not np.isclose(np.sum(e.coef[const]).real, 1.0, atol=1e-9):
            return 1.0 - self.cdf(t)
        tail = ExpTerms(-e.coef[~const], e.rate[~const], e.power[~const])
        t = np.asarray(t, dtype=float)
        return np.clip(np.where(t > 0, tail(t), 1.0), 0.0, 1.0)


@dataclass(frozen=True)
class TabulatedCdf:
    step: float
    values: np.ndarray = field(repr=False)
    route: str = "numeric"
    flagged: bool = False

    @property
    def horizon(self) -> float:
        return self.step * (len(self.values) - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.step * np.arange(len(self.values))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.grid, self.values, left=0.0, right=self.values[-1])

    def sf(self, t):
        return 1.0 - self.cdf(t)


PathTravelTime = Union[ClosedFormExpTerms, TabulatedCdf]


@dataclass(frozen=True)
class FlowExceedance:
    per_path_delta: Mapping[str, float]
    per_flow_delta: Mapping[str, float]
    objective: float
    flagged_paths: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"per_path_delta": dict(self.per_path_delta),
                "per_flow_delta": dict(self.per_flow_delta),
                "objective": self.objective,
                "flagged_paths": list(self.flagged_paths)}


class EvaluationCounter:
    """Counts objective evaluations for convergence accounting."""

    def __init__(self):
        self.count = 0

    def tick(self) -> None:
        self.count += 1


# ---------------------------------------------------------------------------
# numeric convolution

@njit(nogil=True)
def exp_convolve_kernel(F, d, h):
    """CDF of ``X + E`` on the grid of ``F`` (CDF of X), ``E ~ Exp(d)``.

    Solves ``C' = d (F - C)`` exactly for ``F`` linear between nodes.
    """
    n = F.shape[0]
    C = np.empty(n)
    C[0] = 0.0
    e = math.exp(-d * h)
    one_minus = -math.expm1(-d * h)
    lin = h - one_minus / d
    for i in range(n - 1):
        b = (F[i + 1] - F[i]) / h
        C[i + 1] = e * C[i] + F[i] * one_minus + b * lin
    return C


def stieltjes_convolve(Fx: np.ndarray, Fy: np.ndarray) -> np.ndarray:
    """CDF of ``X + Y`` from node values of both CDFs (trapezoid in ``dF_Y``)."""
    dF = np.diff(Fy, prepend=0.0)
    out = dF[0] * Fx
    if len(Fx) > 1:
        avg = 0.5 * (Fx[:-1] + Fx[1:])
        conv = fftconvolve(dF[1:], avg)[: len(Fx) - 1]
        out[1:] += conv
    return out


def _convolve_grid(sojourns: Sequence[SojournDistribution], step: float, n: int) -> np.ndarray:
    C = None
    for s in sojourns:
        if C is None:
            C = s.tabulate(step, n)[1].astype(float)
        elif isinstance(s, ExponentialSojourn):
            C = exp_convolve_kernel(C, float(s.rate), float(step))
        else:
            C = stieltjes_convolve(C, s.tabulate(step, n)[1])
    return C


def _default_horizon(sojourns: Sequence[SojournDistribution], eps: float = TAIL_EPS) -> float:
    exps = [s for s in sojourns if isinstance(s, ExponentialSojourn)]
    tabs = [s for s in sojourns if not isinstance(s, ExponentialSojourn)]
    T = sum(s.horizon for s in tabs)
    if exps:
        # the exponential part is stochastically below Erlang(n, slowest rate)
        T += float(gamma.isf(eps, len(exps), scale=1.0 / min(s.rate for s in exps)))
    return T


def path_cdf_numeric(path: Path | None, sojourns: Sequence[SojournDistribution],
                     step: float | None = None, horizon: float | None = None,
                     richardson: bool = True) -> TabulatedCdf:
    """Numeric convolution of the per-queue sojourn distributions.

    Runs at ``step`` and ``step/2`` and Richardson-extrapolates, which
    lifts the second-order grid error to fourth order for smooth inputs.
    """
    if not sojourns:
        return TabulatedCdf(step or 1e-3, np.ones(2))
    if step is None:
        rates = [s.rate for s in sojourns if isinstance(s, ExponentialSojourn)]
        step = default_step(rates) if rates else 1e-3
        for s in sojourns:
            if isinstance(s, TabulatedSojourn):
                step = min(step, s.step)
    auto = horizon is None
    if auto:
        horizon = _default_horizon(sojourns)
    n = max(int(math.ceil(horizon / step - 1e-9)), 1)
    step = horizon / n
    coarse = _convolve_grid(sojourns, step, n)
    if richardson and len(sojourns) > 1:
        fine = _convolve_grid(sojourns, step / 2, 2 * n)
        values = (4.0 * fine[::2] - coarse) / 3.0
    else:
        values = coarse
    values = np.maximum.accumulate(np.clip(values, 0.0, 1.0))
    if auto and values[-1] < 1.0 - 1e-4:
        raise NumericalError(f"numeric path CDF reaches only {values[-1]:.6f} at the horizon")
    return TabulatedCdf(step, values)


# ---------------------------------------------------------------------------
# M/M/1 closed form

def _travel_queues(path: Path, topology: Topology | None) -> list[str]:
    if topology is None:
        return list(path.queues)
    qb = topology.queue_by_id
    return [q for q in path.queues if not qb[q].is_sink]


def _slacks(path: Path, rates: ArrivalRates, policy: Policy, topology: Topology | None):
    qs = _travel_queues(path, topology)
    lam = np.array([rates[q] for q in qs])
    if topology is not None:
        mu = np.array([policy.service_rates.get(q, topology.queue_by_id[q].mu_max) for q in qs])
    else:
        mu = np.array([policy.service_rates[q] for q in qs])
    bad = [q for q, l, m in zip(qs, lam, mu) if not l < m]
    if bad:
        raise InstabilityError(bad)
    return qs, lam, mu


def mm1_path_cdf_from_slacks(slacks: Sequence[float]) -> PathTravelTime:
    slacks = np.asarray(slacks, dtype=float)
    if len(slacks) == 0:
        return ClosedFormExpTerms(ExpTerms(np.array([1.0 + 0j]), np.array([0j]), np.array([0.0])), 1.0)
    horizon = float(gamma.isf(TAIL_EPS, len(slacks), scale=1.0 / slacks.min()))
    terms = hypoexponential_cdf_terms(slacks)
    if terms.max_abs_coef > COEF_GUARD:
        return _flag(path_cdf_numeric(None, [ExponentialSojourn(d) for d in slacks]))
    try:
        return ClosedFormExpTerms(terms, horizon)
    except NumericalError:
        return _flag(path_cdf_numeric(None, [ExponentialSojourn(d) for d in slacks]))


def _flag(tab: TabulatedCdf) -> TabulatedCdf:
    return TabulatedCdf(tab.step, tab.values, route="numeric", flagged=True)


def path_cdf_mm1(path: Path, rates: ArrivalRates, policy: Policy,
                 topology: Topology | None = None) -> PathTravelTime:
    """Closed-form travel-time CDF of a path of M/M/1 queues.

    Falls back to numeric convolution (flagged) when partial-fraction
    coefficients exceed ``1e12`` in magnitude.
    """
    if not path.queues:
        raise ValueError("empty path")
    _, lam, mu = _slacks(path, rates, policy, topology)
    return mm1_path_cdf_from_slacks(mu - lam)


# ---------------------------------------------------------------------------
# batch arrivals

def _batch_factors(lam, mu, pmfs):
    return [mxm1_queue_factor(l, m, g) for l, m, g in zip(lam, mu, pmfs)]


def batch_transform_eval(factors, s):
    s = np.asarray(s, dtype=complex)
    out = 1.0 / s
    for num, den in factors:
        out = out * np.polynomial.polynomial.polyval(s, num) / np.polynomial.polynomial.polyval(s, den)
    return out


def invert_factors(factors, step: float | None = None, horizon: float | None = None) -> PathTravelTime:
    """Invert ``(1/s) prod num_i/den_i`` by partial fractions, or Talbot if ill-conditioned."""
    poles: list[complex] = []
    gain = 1.0 + 0j
    num = np.array([1.0 + 0j])
    for fn, fd in factors:
        fd = np.trim_zeros(np.asarray(fd, dtype=float), "b")
        poles.extend(np.roots(fd[::-1]))
        gain /= fd[-1]
        num = np.polynomial.polynomial.polymul(num, fn)
    grouped = [(0j, 1)] + group_poles(poles)
    stable = all(p.real < 0 for p, _ in grouped[1:])
    terms = residue_terms(num, grouped, gain) if stable else None
    cond = float(np.sum(np.abs(terms.coef))) if terms is not None else math.inf
    if terms is not None and cond <= TALBOT_COND:
        slow = terms.slowest_rate()
        T = math.log(max(cond, 1.0) / TAIL_EPS) / slow
        for _ in range(60):
            if abs(1.0 - terms(T)) < TAIL_EPS * 10:
                break
            T *= 1.5
        try:
            return ClosedFormExpTerms(terms, T if horizon is None else max(T, horizon), route="closed")
        except NumericalError:
            pass
    # Talbot fallback on a tabulated grid
    if horizon is None:
        mean = _transform_mean(factors)
        horizon = 40.0 * mean
    step = step or min(1e-2, horizon / 4000)
    n = int(math.ceil(horizon / step))
    grid = step * np.arange(n + 1)
    vals = talbot(lambda s: batch_transform_eval(factors, s), grid)
    vals = np.maximum.accumulate(np.clip(vals, 0.0, 1.0))
    if not np.all(np.isfinite(vals)):
        raise NumericalError("batch transform inversion failed")
    return TabulatedCdf(horizon / n, vals, route="talbot")


def _transform_mean(factors) -> float:
    # mean of the travel time: -d/ds prod f_i(s) at 0, by central difference
    h = 1e-6
    prod = lambda s: np.real(batch_transform_eval(factors, s) * s)
    return float(-(prod(h) - prod(-h)) / (2 * h))


def path_cdf_batch(path: Path, rates: ArrivalRates, policy: Policy,
                   pmf: BatchPmf | Sequence[BatchPmf] | None = None,
                   step: float | None = None, horizon: float | None = None,
                   topology: Topology | None = None) -> PathTravelTime:
    """Travel-time CDF for a path of M^X/M/1 queues (batch arrival rate ``lam``).

    ``pmf=None`` takes each queue's pmf from ``topology`` (unit batches
    where none is set).
    """
    qs, lam, mu = _slacks(path, rates, policy, topology)
    if pmf is None:
        if topology is None:
            raise ValueError("pmf or topology required")
        unit = BatchPmf((1.0,))
        pmfs = [topology.queue_by_id[q].batch_pmf or unit for q in qs]
    elif isinstance(pmf, BatchPmf):
        pmfs = [pmf] * len(qs)
    else:
        pmfs = list(pmf)
    bad = [q for q, l, m, g in zip(qs, lam, mu, pmfs) if not l * g.mean < m]
    if bad:
        raise InstabilityError(bad)
    if not qs:
        return mm1_path_cdf_from_slacks([])
    return invert_factors(_batch_factors(lam, mu, pmfs), step, horizon)


# ---------------------------------------------------------------------------
# exceedance and objective

def delta_w(ptt: PathTravelTime, t_hat: float) -> float:
    """Probability that the travel time exceeds ``t_hat``."""
    if t_hat < 0:
        raise ValueError("t_hat must be >= 0")
    if t_hat == 0:
        return 1.0
    return float(np.clip(ptt.sf(t_hat), 0.0, 1.0))


def flow_exceedance(topology: Topology, policy: Policy,
                    path_ttimes: Mapping[str, PathTravelTime]) -> FlowExceedance:
    per_path: dict[str, float] = {}
    per_flow: dict[str, float] = {}
    for f in topology.flows:
        total = 0.0
        for w in topology.paths_of(f.id):
            d = delta_w(path_ttimes[w.id], f.omega)
            per_path[w.id] = d
            total += policy.p(w.id) * d
        per_flow[f.id] = min(max(total, 0.0), 1.0)
    objective = max(per_flow.values()) if per_flow else 0.0
    flagged = tuple(sorted(w for w, p in path_ttimes.items() if getattr(p, "flagged", False)))
    return FlowExceedance(per_path, per_flow, objective, flagged)


def path_travel_times(topology: Topology, policy: Policy, horizon_cap: bool = True,
                      step: float | None = None, validate: bool = True) -> dict[str, PathTravelTime]:
    """Per-path CDFs under ``policy``, choosing the route per path.

    With ``horizon_cap`` numeric CDFs are only built up to the owning flow's
    target time, which is all the objective needs.  ``validate=False``
    accepts probabilities off the simplex (finite-difference probes).
    """
    if validate:
        validate_policy(topology, policy)
    stab = check_stability(topology, policy)
    if not stab.stable:
        raise InstabilityError(stab.violating)
    rates = compute_arrival_rates(topology, policy)
    qb = topology.queue_by_id
    memo: dict[tuple, SojournDistribution] = {}
    out: dict[str, PathTravelTime] = {}
    for w in topology.paths:
        qs = _travel_queues(w, topology)
        specs = [qb[q] for q in qs]
        if any(s.batch_pmf is not None for s in specs):
            out[w.id] = path_cdf_batch(w, rates, policy, topology=topology)
        elif all(s.service_model is ServiceModel.MARKOVIAN for s in specs):
            out[w.id] = path_cdf_mm1(w, rates, policy, topology)
        else:
            sojourns = []
            for q in specs:
                lam, mu = rates[q.id], policy.service_rates.get(q.id, q.mu_max)
                key = (lam, mu, q.service_model)
                if key not in memo:
                    memo[key] = (md1_sojourn(lam, mu) if q.service_model is ServiceModel.DETERMINISTIC
                                 else mm1_sojourn(lam, mu))
                sojourns.append(memo[key])
            omega = topology.flow_by_id[w.flow].omega
            out[w.id] = path_cdf_numeric(w, sojourns, step=step,
                                         horizon=omega if horizon_cap else None)
    return out


def evaluate_objective(topology: Topology, policy: Policy,
                       counter: EvaluationCounter | None = None,
                       validate: bool = True) -> FlowExceedance:
    """Full pipeline: arrival rates, sojourns, path CDFs, flow exceedances."""
    if counter is not None:
        counter.tick()
    return flow_exceedance(topology, policy, path_travel_times(topology, policy, validate=validate))
