"""Laplace-domain inversion of rational CDF transforms.

A transform ``F(s) = K * N(s) / prod_j (s - p_j)^{m_j}`` is expanded in
partial fractions; each pole of multiplicity ``m`` contributes terms
``B_l t^(l-1) e^(p t) / (l-1)!`` for ``l = 1..m``.  The ``B_l`` come from
Taylor-expanding ``(s - p)^m F(s)`` around ``p``, which avoids symbolic
differentiation and handles any multiplicity.

When poles are badly conditioned the fixed Talbot contour is used instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

POLE_MERGE_RTOL = 1e-9


@dataclass(frozen=True)
class ExpTerms:
    """``F(t) = Re sum_i coef_i * t^power_i * exp(-rate_i * t)``."""

    coef: np.ndarray
    rate: np.ndarray
    power: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tt = t[..., None]
        vals = self.coef * np.exp(-self.rate * tt) * tt ** self.power
        out = np.real(vals.sum(axis=-1))
        return np.where(t > 0, out, 0.0) if out.ndim else (float(out) if t > 0 else 0.0)

    @property
    def max_abs_coef(self) -> float:
        return float(np.max(np.abs(self.coef))) if len(self.coef) else 0.0

    def slowest_rate(self) -> float:
        decaying = np.real(self.rate)[np.real(self.rate) > 0]
        return float(decaying.min()) if len(decaying) else math.inf


def group_poles(poles: Sequence[complex], rtol: float = POLE_MERGE_RTOL) -> list[tuple[complex, int]]:
    """Merge poles closer than ``rtol * max|p|``; returns (mean pole, multiplicity)."""
    poles = np.asarray(poles, dtype=complex)
    if len(poles) == 0:
        return []
    scale = max(float(np.max(np.abs(poles))), 1e-300)
    order = np.lexsort((poles.imag, poles.real))
    groups: list[list[complex]] = []
    for p in poles[order]:
        for g in groups:
            if abs(g[0] - p) <= rtol * scale:
                g.append(p)
                break
        else:
            groups.append([p])
    return [(complex(np.mean(g)), len(g)) for g in groups]


def _inverse_power_series(a: complex, n: int, order: int) -> np.ndarray:
    """Taylor coefficients of ``(a + x)^(-n)`` in ``x`` up to ``x^order``."""
    c = np.empty(order + 1, dtype=complex)
    c[0] = a ** (-n)
    for r in range(1, order + 1):
        # binom(-n, r) a^(-n-r) from the previous coefficient
        c[r] = c[r - 1] * (-(n + r - 1)) / (r * a)
    return c


def _poly_taylor(coeffs: np.ndarray, p: complex, order: int) -> np.ndarray:
    """Taylor coefficients of polynomial ``coeffs`` (ascending) around ``p``."""
    out = np.zeros(order + 1, dtype=complex)
    d = np.asarray(coeffs, dtype=complex)
    for r in range(order + 1):
        if len(d) == 0:
            break
        out[r] = P.polyval(p, d) / math.factorial(r)
        d = P.polyder(d) if len(d) > 1 else np.zeros(0, dtype=complex)
    return out


def residue_terms(num: np.ndarray, poles: Sequence[tuple[complex, int]], gain: complex = 1.0) -> ExpTerms:
    """Inverse Laplace transform of ``gain * N(s) / prod (s - p)^m``."""
    coefs, rates, powers = [], [], []
    for i, (p, m) in enumerate(poles):
        series = _poly_taylor(num, p, m - 1) * gain
        for j, (q, n) in enumerate(poles):
            if j != i:
                series = np.convolve(series, _inverse_power_series(p - q, n, m - 1))[:m]
        for l in range(1, m + 1):
            coefs.append(series[m - l] / math.factorial(l - 1))
            rates.append(-p)
            powers.append(l - 1)
    return ExpTerms(np.array(coefs, dtype=complex), np.array(rates, dtype=complex),
                    np.array(powers, dtype=float))


def hypoexponential_cdf_terms(rates: Sequence[float], rtol: float = POLE_MERGE_RTOL) -> ExpTerms:
    """CDF of a sum of independent exponentials with the given rates.

    Distinct rates give ``1 + sum_i A_i e^(-d_i t)`` with
    ``A_i = -prod_{j != i} d_j / (d_j - d_i)``; coinciding rates are merged
    into Erlang-type terms.
    """
    d = np.asarray(rates, dtype=float)
    poles = [(0j, 1)] + [(-r, m) for r, m in group_poles(d, rtol)]
    poles = [(complex(p.real, 0.0), m) for p, m in poles]
    terms = residue_terms(np.array([1.0]), poles, gain=float(np.prod(d)))
    return ExpTerms(terms.coef.real.astype(complex), terms.rate.real.astype(complex), terms.power)


# ---------------------------------------------------------------------------
# Talbot

def talbot(F: Callable[[np.ndarray], np.ndarray], t, M: int = 32) -> np.ndarray:
    """Fixed-Talbot inversion (Abate & Valko) of ``F`` at times ``t > 0``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    r = 2.0 * M / (5.0 * tp)
    k = np.arange(1, M)
    theta = k * np.pi / M
    cot = 1.0 / np.tan(theta)
    S = r[:, None] * theta * (cot + 1j)
    sigma = theta + (theta * cot - 1.0) * cot
    vals = F(S)
    acc = 0.5 * np.real(F(r.astype(complex))) * np.exp(r * tp)
    acc += np.sum(np.real(np.exp(tp[:, None] * S) * vals * (1.0 + 1j * sigma)), axis=1)
    out[pos] = r / M * acc
    return out
