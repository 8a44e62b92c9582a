"""Exactly truncated bivariate power series for pgf iteration.

A series holds the dense coefficient block up to a per-variable degree
cap D.  Coefficients of index at most D are exact for any product, and
for any composition whose inner series have zero constant term or whose
outer factor is a finite polynomial, because low-order output
coefficients never depend on discarded high-order input terms.  Every
series here transforms a (sub)probability law, so the mass not stored,
1 minus the stored sum, is an honest error bound on anything read off
the block.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.polynomial import polyval2d
from scipy.signal import convolve2d, fftconvolve

FFT_MIN = 64          # side length at which direct convolution gets slow
NEG_CLIP = 1e-10      # fft rounding may leave tiny negative dust


@dataclass
class TruncatedSeries:
    coef: np.ndarray   # (D+1, D+1), coef[i, j] multiplies s1^i s2^j

    @property
    def D(self):
        return self.coef.shape[0] - 1

    @property
    def stored_mass(self):
        return float(self.coef.sum())

    @property
    def residual(self):
        """Mass bound on the dropped coefficients of a (sub)pmf transform."""
        return max(0.0, 1.0 - self.stored_mass)

    def evaluate(self, s1, s2):
        val = polyval2d(np.asarray(s1, float), np.asarray(s2, float), self.coef)
        return float(val) if np.ndim(val) == 0 else val

    def coefficient(self, i, j):
        return float(self.coef[i, j])

    def copy(self):
        return TruncatedSeries(self.coef.copy())


def zero_series(D):
    return TruncatedSeries(np.zeros((D + 1, D + 1)))

def unit_series(D):
    c = np.zeros((D + 1, D + 1))
    c[0, 0] = 1.0
    return TruncatedSeries(c)

def monomial(D, i, j):
    c = np.zeros((D + 1, D + 1))
    c[i, j] = 1.0
    return TruncatedSeries(c)

def from_pmf(law, D):
    """Lay a finite pmf onto the coefficient block; atoms past D are dropped."""
    c = np.zeros((D + 1, D + 1))
    for (a, b), w in zip(law.atoms, law.weights):
        if a <= D and b <= D:
            c[a, b] += w
    return TruncatedSeries(c)


def series_multiply(a, b):
    """Truncated product; exact up to the shared degree cap."""
    if a.D != b.D:
        raise ValueError("degree caps differ")
    D = a.D
    if D + 1 >= FFT_MIN:
        full = fftconvolve(a.coef, b.coef)
        out = full[: D + 1, : D + 1].copy()
        out[(out < 0) & (out > -NEG_CLIP)] = 0.0
    else:
        out = convolve2d(a.coef, b.coef)[: D + 1, : D + 1]
    return TruncatedSeries(out)


def _scaled_sum(terms, D):
    acc = np.zeros((D + 1, D + 1))
    for w, s in terms:
        acc += w * s.coef
    return TruncatedSeries(acc)


def compose_law(law, inner1, inner2):
    """Substitute two series into a finite pmf's pgf, exactly up to D."""
    if inner1.D != inner2.D:
        raise ValueError("degree caps differ")
    D = inner1.D
    amax = int(law.atoms[:, 0].max())
    bmax = int(law.atoms[:, 1].max())
    pow1 = [unit_series(D)]
    for _ in range(amax):
        pow1.append(series_multiply(pow1[-1], inner1))
    pow2 = [unit_series(D)]
    for _ in range(bmax):
        pow2.append(series_multiply(pow2[-1], inner2))
    terms = []
    for (a, b), w in zip(law.atoms, law.weights):
        if a == 0:
            t = pow2[b]
        elif b == 0:
            t = pow1[a]
        else:
            t = series_multiply(pow1[a], pow2[b])
        terms.append((w, t))
    return _scaled_sum(terms, D)


def series_compose(outer, inner1, inner2):
    """Horner substitution of two inner series into a general outer series.

    Exact up to D when both inner constant terms vanish; an outer block
    with unstored mass and a nonzero inner constant term would let the
    dropped outer tail reach low-order output coefficients, so that
    combination is rejected.
    """
    if inner1.D != inner2.D or inner1.D != outer.D:
        raise ValueError("degree caps differ")
    D = outer.D
    inner_const = abs(inner1.coef[0, 0]) + abs(inner2.coef[0, 0])
    if inner_const != 0.0 and outer.residual > 1e-12:
        raise ValueError(
            "inner constant term nonzero while the outer series is not "
            "a stored-complete polynomial"
        )
    pow2 = [unit_series(D)]
    for _ in range(D):
        pow2.append(series_multiply(pow2[-1], inner2))
    rows = []
    for a in range(D + 1):
        terms = [
            (outer.coef[a, b], pow2[b])
            for b in range(D + 1)
            if outer.coef[a, b] != 0.0
        ]
        rows.append(_scaled_sum(terms, D) if terms else zero_series(D))
    acc = rows[D]
    for a in range(D - 1, -1, -1):
        acc = series_multiply(acc, inner1)
        acc = TruncatedSeries(acc.coef + rows[a].coef)
    return acc


def iterate_process(spec, n, D):
    """Iterated offspring series and the full-process series, per type.

    Returns (f_list, g_list): entry k of f_list is the pair of series
    for the k-step offspring-only process started from each type; entry
    k of g_list adds the immigration stream, so its coefficient at (a, b)
    is the exact probability of holding (a, b) particles at step k for
    a, b at most D.  Step zero is the identity.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    f1, f2 = monomial(D, 1, 0), monomial(D, 0, 1)
    imm_prod = unit_series(D)
    f_list = [(f1, f2)]
    g_list = [(f1, f2)]
    for _ in range(n):
        imm_prod = series_multiply(imm_prod, compose_law(spec.immigration, f1, f2))
        f1, f2 = (
            compose_law(spec.offspring[0], f1, f2),
            compose_law(spec.offspring[1], f1, f2),
        )
        f_list.append((f1, f2))
        g_list.append(
            (series_multiply(f1, imm_prod), series_multiply(f2, imm_prod))
        )
    return f_list, g_list
