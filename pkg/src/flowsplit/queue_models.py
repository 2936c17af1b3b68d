"""Single-queue sojourn-time distributions and path transforms.

Supported service models:

* M/M/1  -- exponential sojourn with rate ``mu - lam``.
* M/D/1  -- no closed form; the waiting-time CDF is tabulated from the
  exact series ``(1-rho) * sum_k exp(-lam(kD-t)) (lam(kD-t))^k / k!``
  near the origin and from the equivalent renewal equation further out,
  then shifted by the service time ``D = 1/mu``.
* M^X/M/1 -- batch arrivals; handled in the Laplace domain as a ratio of
  polynomials (see :func:`mxm1_path_transform`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P

from ._jit import njit
from .errors import HorizonError, InstabilityError

MAX_BATCH = 32
CDF_TAIL = 1e-6


@dataclass(frozen=True)
class BatchPmf:
    """Batch-size pmf: ``probs[n-1] = P(batch size = n)`` for ``n = 1..G``."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs:
            raise ValueError("empty batch pmf")
        if len(probs) > MAX_BATCH:
            raise ValueError(f"batch sizes above {MAX_BATCH} are not supported")
        if min(probs) < 0:
            raise ValueError("negative batch probability")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"batch pmf sums to {sum(probs)!r}, not 1")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]]) -> "BatchPmf":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("empty batch pmf")
        size = max(n for n, _ in pairs)
        if min(n for n, _ in pairs) < 1:
            raise ValueError("batch sizes start at 1")
        probs = [0.0] * size
        for n, p in pairs:
            probs[n - 1] += p
        return cls(tuple(probs))

    @property
    def G(self) -> int:
        return len(self.probs)

    @property
    def mean(self) -> float:
        return float(sum((n + 1) * p for n, p in enumerate(self.probs)))

    def pairs(self) -> list[tuple[int, float]]:
        return [(n + 1, p) for n, p in enumerate(self.probs) if p > 0]

    def pgf(self, z):
        return sum(p * z ** (n + 1) for n, p in enumerate(self.probs))


# ---------------------------------------------------------------------------
# sojourn distributions

@dataclass(frozen=True)
class ExponentialSojourn:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, -np.expm1(-self.rate * np.maximum(t, 0.0)), 0.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)

    def mean(self) -> float:
        return 1.0 / self.rate

    def tail_horizon(self, eps: float = CDF_TAIL) -> float:
        return -math.log(eps) / self.rate

    def tabulate(self, step: float, n: int) -> tuple[np.ndarray, np.ndarray]:
        t = step * np.arange(n + 1)
        return self.pdf(t), self.cdf(t)


@dataclass(frozen=True)
class TabulatedSojourn:
    """Sojourn distribution sampled on ``t_n = n * step``, ``n = 0..N``."""

    step: float
    pdf_values: np.ndarray = field(repr=False)
    cdf_values: np.ndarray = field(repr=False)
    lam: float | None = None
    mu: float | None = None

    @property
    def horizon(self) -> float:
        return self.step * (len(self.cdf_values) - 1)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        grid = self.step * np.arange(len(self.cdf_values))
        return np.interp(t, grid, self.cdf_values, left=0.0, right=self.cdf_values[-1])

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        grid = self.step * np.arange(len(self.pdf_values))
        return np.interp(t, grid, self.pdf_values, left=0.0, right=0.0)

    def mean(self) -> float:
        # E[S] = integral of the survival function
        surv = 1.0 - self.cdf_values
        return float(np.trapezoid(surv, dx=self.step))

    def tail_horizon(self, eps: float = CDF_TAIL) -> float:
        return self.horizon

    def tabulate(self, step: float, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.lam is not None and self.mu is not None:
            cdf = _md1_sojourn_cdf(self.lam, self.mu, step * np.arange(n + 1))
            return np.gradient(cdf, step), cdf
        t = step * np.arange(n + 1)
        cdf = self.cdf(t)
        cdf[t > self.horizon] = 1.0
        return np.gradient(cdf, step), cdf


SojournDistribution = Union[ExponentialSojourn, TabulatedSojourn]


def mm1_sojourn(lam: float, mu: float) -> ExponentialSojourn:
    if not lam < mu:
        raise InstabilityError((), f"M/M/1 unstable: lambda={lam} >= mu={mu}")
    return ExponentialSojourn(mu - lam)


SERIES_LIMIT = 5.0  # lam*t beyond which the alternating series loses digits


@njit(nogil=True)
def _md1_series(x, lam, D):
    # (1-rho) factor applied by the caller
    kmax = int(math.floor(x / D + 1e-12))
    acc = 0.0
    for k in range(kmax + 1):
        y = lam * (x - k * D)
        if y < 0.0:
            y = 0.0
        if k == 0:
            term = math.exp(y)
        elif y == 0.0:
            term = 0.0
        else:
            term = math.exp(k * math.log(y) + y - math.lgamma(k + 1.0))
        if k % 2 == 1:
            term = -term
        acc += term
    return acc


@njit(nogil=True)
def md1_wait_cdf_kernel(lam, D, h, n):
    """M/D/1 FCFS waiting-time CDF on ``x_i = i*h``, ``i = 0..n``.

    Uses the exact alternating series while ``lam*x <= SERIES_LIMIT`` and
    then integrates ``W(x) = (1-rho) + lam * int_{x-D}^{x} W(z) dz`` with
    the trapezoid rule (implicit in the newest point).
    """
    rho = lam * D
    W = np.empty(n + 1)
    I = np.empty(n + 1)
    for i in range(n + 1):
        x = i * h
        if lam * x <= SERIES_LIMIT:
            W[i] = (1.0 - rho) * _md1_series(x, lam, D)
        else:
            y = x - D
            if y <= 0.0:
                lag = 0.0
            else:
                j = int(y / h)
                f = y / h - j
                lag = I[j] + f * (I[j + 1] - I[j])
            W[i] = ((1.0 - rho) + lam * (I[i - 1] + 0.5 * h * W[i - 1] - lag)) / (1.0 - 0.5 * lam * h)
        if W[i] > 1.0:
            W[i] = 1.0
        I[i] = 0.0 if i == 0 else I[i - 1] + 0.5 * h * (W[i - 1] + W[i])
    return W


def md1_wait_cdf(lam: float, mu: float, t, step: float = 1e-3) -> np.ndarray:
    """Waiting-time CDF at arbitrary points (tabulated, then interpolated)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    D = 1.0 / mu
    h = min(step, D / 10.0)
    n = int(math.ceil(max(float(t.max()), 0.0) / h)) + 1
    W = md1_wait_cdf_kernel(float(lam), D, h, n)
    return np.where(t >= 0, np.interp(t, h * np.arange(n + 1), W), 0.0)


def _md1_sojourn_cdf(lam: float, mu: float, t: np.ndarray) -> np.ndarray:
    """Sojourn CDF on a uniform grid ``t`` starting at 0."""
    t = np.asarray(t, dtype=float)
    D = 1.0 / mu
    step = t[1] - t[0] if len(t) > 1 else 1e-3
    h = min(step, D / 10.0)
    n = int(math.ceil(max(t[-1] - D, 0.0) / h)) + 1
    W = md1_wait_cdf_kernel(float(lam), D, h, n)
    shifted = t - D
    # grid hits of t == D land a hair below zero after subtraction
    shifted[np.abs(shifted) < 1e-12 * max(D, 1.0)] = 0.0
    cdf = np.where(shifted >= 0, np.interp(shifted, h * np.arange(n + 1), W), 0.0)
    return np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))


def default_step(slacks) -> float:
    smax = float(np.max(slacks)) if np.size(slacks) else 1.0
    return min(1e-3, 1.0 / (50.0 * smax))


def md1_sojourn(lam: float, mu: float, step: float | None = None,
                horizon: float | None = None) -> TabulatedSojourn:
    """Tabulated M/D/1 sojourn time (waiting time plus deterministic service ``1/mu``).

    With ``horizon=None`` the horizon doubles until the CDF reaches
    ``1 - 1e-6``; an explicit horizon that is too short raises
    :class:`HorizonError`.
    """
    if not lam < mu:
        raise InstabilityError((), f"M/D/1 unstable: lambda={lam} >= mu={mu}")
    if step is None:
        step = default_step([mu - lam])
    D = 1.0 / mu
    rho = lam / mu
    if horizon is not None:
        cdf = _md1_sojourn_cdf(lam, mu, step * np.arange(int(round(horizon / step)) + 1))
        if cdf[-1] < 1.0 - CDF_TAIL:
            raise HorizonError(f"horizon {horizon} too short: cdf(T) = {cdf[-1]:.8f}; "
                               f"try a larger horizon")
    else:
        T = D + 4.0 * (D + rho / (2 * mu * (1 - rho)))
        for _ in range(40):
            n = int(math.ceil(T / step))
            cdf = _md1_sojourn_cdf(lam, mu, step * np.arange(n + 1))
            if cdf[-1] >= 1.0 - CDF_TAIL:
                break
            T *= 2.0
        else:
            raise HorizonError(f"M/D/1 tail did not reach 1-{CDF_TAIL} by t={T}")
    return TabulatedSojourn(step, np.gradient(cdf, step), cdf, lam=lam, mu=mu)


# ---------------------------------------------------------------------------
# rational transforms (coefficients in ascending powers of s)

def _normalize(c: np.ndarray) -> np.ndarray:
    m = np.max(np.abs(c))
    return c / m if m > 0 else c


@dataclass(frozen=True)
class RationalTransform:
    numerator: np.ndarray
    denominator: np.ndarray
    factors: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    # the CDF transform carries an extra 1/s on top of the factor product
    integrator: bool = True

    @property
    def num_degree(self) -> int:
        return len(np.trim_zeros(self.numerator, "b")) - 1

    @property
    def den_degree(self) -> int:
        return len(np.trim_zeros(self.denominator, "b")) - 1

    def __call__(self, s):
        return P.polyval(s, self.numerator) / P.polyval(s, self.denominator)

    def monic(self) -> tuple[np.ndarray, np.ndarray]:
        den = np.trim_zeros(self.denominator, "b")
        lead = den[-1]
        return np.trim_zeros(self.numerator, "b") / lead, den / lead


def _assemble(factors, integrator=True) -> RationalTransform:
    num = np.array([1.0])
    den = np.array([0.0, 1.0]) if integrator else np.array([1.0])
    for fn, fd in factors:
        num = P.polymul(num, fn)
        den = P.polymul(den, fd)
        scale = np.max(np.abs(den))
        num, den = num / scale, den / scale
    return RationalTransform(num, den, tuple(factors), integrator)


def mm1_queue_factor(lam: float, mu: float):
    d = mu - lam
    return np.array([d]), np.array([d, 1.0])


def mm1_path_transform(lams: Sequence[float], mus: Sequence[float]) -> RationalTransform:
    for lam, mu in zip(lams, mus):
        if not lam < mu:
            raise InstabilityError((), f"unstable queue: lambda={lam} >= mu={mu}")
    return _assemble([mm1_queue_factor(l, m) for l, m in zip(lams, mus)])


def mxm1_queue_factor(lam: float, mu: float, pmf: BatchPmf):
    """Sojourn-time transform of a customer in an M^X/M/1 FCFS queue.

    ``lam`` is the batch arrival rate.  With ``u = mu + s`` the transform is
    ``(1-rho) mu Q(s) / (gbar (u^G - lam Q(s)))`` where
    ``s Q(s) = u^G - sum_n g_n mu^n u^(G-n)``.
    """
    G = pmf.G
    u = np.array([mu, 1.0])
    uG = P.polypow(u, G)
    Ps = uG.copy()
    for n, g in enumerate(pmf.probs, start=1):
        if g:
            Ps = P.polysub(Ps, g * mu ** n * P.polypow(u, G - n))
    # Ps has a root at s = 0; drop it
    Q = Ps[1:].copy()
    rho = lam * pmf.mean / mu
    num = (1.0 - rho) * mu / pmf.mean * Q
    den = P.polysub(uG, lam * Q)
    return _normalize_pair(num, den)


def _normalize_pair(num, den):
    scale = np.max(np.abs(den))
    return np.asarray(num, float) / scale, np.asarray(den, float) / scale


def mxm1_literal_factor(lam: float, mu: float, pmf: BatchPmf):
    """``(1-rho)(1-s) / (mu(1-s) - lam s (1 - Gamma(s)))`` taken verbatim.

    Kept for comparison only: it does not satisfy ``s F(s) -> 1`` as
    ``s -> 0`` and, for unit batches, does not reduce to the M/M/1 factor.
    """
    rho = lam * pmf.mean / mu
    num = np.array([1.0 - rho, -(1.0 - rho)])
    den = np.zeros(pmf.G + 2)
    den[0] = mu
    den[1] = -mu - lam
    for n, g in enumerate(pmf.probs, start=1):
        den[n + 1] += lam * g
    return num, den


def mxm1_path_transform(lams: Sequence[float], mus: Sequence[float],
                        pmf: BatchPmf | Sequence[BatchPmf], variant: str = "sojourn") -> RationalTransform:
    """CDF transform ``F_w(s) = (1/s) prod_i f_i(s)`` of a path of M^X/M/1 queues."""
    pmfs = [pmf] * len(lams) if isinstance(pmf, BatchPmf) else list(pmf)
    if not pmfs or any(p is None or p.G == 0 for p in pmfs):
        raise ValueError("batch pmf required")
    bad = [i for i, (l, m, g) in enumerate(zip(lams, mus, pmfs)) if not l * g.mean / m < 1]
    if bad:
        raise InstabilityError(bad, f"unstable batch queues at positions {bad}")
    if variant == "sojourn":
        factors = [mxm1_queue_factor(l, m, g) for l, m, g in zip(lams, mus, pmfs)]
    elif variant == "literal":
        factors = [mxm1_literal_factor(l, m, g) for l, m, g in zip(lams, mus, pmfs)]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return _assemble(factors)
