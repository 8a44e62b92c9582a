"""Limit functionals of the iterated pgfs.

Everything here is exact up to floating point: scaled pointwise values
of the process pgf, its normalized coefficients, the log-scaled limit
for minimum-offspring models, and the one-step deviation functionals
evaluated by finite convolution.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import convolve2d
from scipy.special import logsumexp

from .model import TheoremDisabledError, offspring_conditions
from . import series as ser
from .spectral import mean_ratio_sup

PHI_CAP = 30          # largest |j|_1 for the single-state deviation functional
DEFAULT_D = 24


class ResourceError(RuntimeError):
    """Requested exact computation exceeds its configured size cap."""


@dataclass
class LimitDiagnostics:
    ns: list
    values: list
    diffs: list
    tol: float

    @property
    def converged(self):
        return bool(self.diffs) and bool(self.diffs[-1] < self.tol)


def _require_geometric(spec, spectral):
    if spec.imm_zero_p <= 0.0:
        raise TheoremDisabledError("immigration has no mass at zero")
    if not spectral.jacobian_ok or spectral.gamma is None:
        raise TheoremDisabledError("scaled powers of the single-child matrix do not converge")


def _check_unit_box(s1, s2):
    if not (0.0 <= s1 <= 1.0 and 0.0 <= s2 <= 1.0):
        raise ValueError("point outside the unit box")


def f_point(spec, s1, s2):
    """One offspring-pgf application, per type."""
    return np.array([law.pgf(s1, s2) for law in spec.offspring])


def pointwise_g(spec, i, s, n):
    """g at step n for start type i, evaluated at a point, no truncation."""
    return _pointwise_g_pair(spec, s, n)[i]


def _pointwise_g_pair(spec, s, n):
    s1, s2 = float(s[0]), float(s[1])
    _check_unit_box(s1, s2)
    f = np.array([s1, s2])
    prod = 1.0
    for _ in range(n):
        prod *= spec.immigration.pgf(f[0], f[1])
        f = f_point(spec, f[0], f[1])
    return np.array([f[0] * prod, f[1] * prod])


def s_sequence(spec, s, n):
    """The scaled immigration products S_m for m = 0..n at a point.

    Each factor is the immigration pgf at an offspring iterate divided
    by its value at zero, so the sequence is nondecreasing in m.
    """
    h0 = spec.imm_zero_p
    if h0 <= 0:
        raise TheoremDisabledError("immigration has no mass at zero")
    s1, s2 = float(s[0]), float(s[1])
    _check_unit_box(s1, s2)
    out = [1.0]
    f = np.array([s1, s2])
    acc = 0.0
    for _ in range(n):
        acc += np.log(spec.immigration.pgf(f[0], f[1])) - np.log(h0)
        out.append(float(np.exp(acc)))
        f = f_point(spec, f[0], f[1])
    return np.array(out)


def R_eval(spec, spectral, s, n, window=5, tol=1e-9):
    """Scaled process pgf g_n(s) / (h0 gamma)^n with trailing diagnostics.

    The model must have immigration mass at zero and a convergent scaled
    single-child matrix; the all-ones point is excluded (the scaling
    diverges there).
    """
    _require_geometric(spec, spectral)
    s1, s2 = float(s[0]), float(s[1])
    _check_unit_box(s1, s2)
    if s1 == 1.0 and s2 == 1.0:
        raise ValueError("the all-ones point is outside the scaled limit's domain")
    base = spec.imm_zero_p * spectral.gamma
    lbase = np.log(base)
    f = np.array([s1, s2])
    log_prod = 0.0
    track = {m: None for m in range(max(0, n - window + 1), n + 1)}
    for m in range(n + 1):
        if m in track:
            with np.errstate(divide="ignore"):
                track[m] = np.where(
                    f > 0, np.exp(np.log(np.maximum(f, 1e-300)) + log_prod - m * lbase), 0.0
                )
        if m == n:
            break
        log_prod += np.log(spec.immigration.pgf(f[0], f[1]))
        f = f_point(spec, f[0], f[1])
    ns = sorted(track)
    vals = np.array([track[m] for m in ns])     # (w, 2)
    diags = []
    for i in range(2):
        col = vals[:, i]
        diffs = [
            abs(col[k] - col[k - 1]) / max(abs(col[k]), 1e-300)
            for k in range(1, len(col))
        ]
        diags.append(LimitDiagnostics(list(ns), col.tolist(), diffs, tol))
    return vals[-1], diags


def R_residual(spec, spectral, s, n):
    """Relative defect of the scaled pgf under one offspring substitution.

    Compares h(s) times the scaled pgf at f(s) against (h0 gamma) times
    the scaled pgf at s; both sides use the same step count n, so the
    defect is exactly the relative step from n to n+1.
    """
    _require_geometric(spec, spectral)
    base = spec.imm_zero_p * spectral.gamma
    here, _ = R_eval(spec, spectral, s, n, window=1)
    fs = f_point(spec, float(s[0]), float(s[1]))
    there, _ = R_eval(spec, spectral, fs, n, window=1)
    h_s = spec.immigration.pgf(float(s[0]), float(s[1]))
    return np.abs(h_s * there - base * here) / np.maximum(np.abs(here), 1e-300)


@dataclass
class RCoeffs:
    n: int
    base: float
    r: np.ndarray            # (2, D+1, D+1) scaled coefficients at n
    prev: np.ndarray         # same at n-1
    rel_change: np.ndarray   # (2, D+1, D+1), nan where r vanishes
    residual_mass: np.ndarray  # per type, scaled mass outside the block


def r_coeffs(spec, spectral, n, D=DEFAULT_D):
    """Scaled coefficients of g_n, the finite-n stand-in for the limit
    coefficients, with their step-to-step relative change."""
    _require_geometric(spec, spectral)
    if n < 1:
        raise ValueError("need n >= 1")
    base = spec.imm_zero_p * spectral.gamma
    _, g_list = ser.iterate_process(spec, n, D)
    cur = np.stack([g_list[n][i].coef for i in range(2)]) * base**-n
    prev = np.stack([g_list[n - 1][i].coef for i in range(2)]) * base ** -(n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(cur - prev) / cur
    rel[cur == 0] = np.nan
    resid = np.array([g_list[n][i].residual * base**-n for i in range(2)])
    return RCoeffs(n=n, base=base, r=cur, prev=prev, rel_change=rel, residual_mass=resid)


def _log_f_point(spec, L):
    """One offspring-pgf application in log space."""
    out = np.empty(2)
    for i, law in enumerate(spec.offspring):
        a = law.atoms[:, 0].astype(float)
        b = law.atoms[:, 1].astype(float)
        out[i] = logsumexp(np.log(law.weights) + a * L[0] + b * L[1])
    return out


def _log_h(spec, L):
    law = spec.immigration
    a = law.atoms[:, 0].astype(float)
    b = law.atoms[:, 1].astype(float)
    return logsumexp(np.log(law.weights) + a * L[0] + b * L[1])


def G_eval(spec, i, s, n, window=5, tol=1e-9):
    """log g_n at a point divided by the minimal-litter power, for models
    whose offspring laws force a same-type litter of at least two.

    Runs entirely in log space; the raw pgf value underflows after a
    handful of steps for any interior point.  The all-ones point gives
    exactly zero by normalization.
    """
    axis_ok, floor_ok, litter = offspring_conditions(spec)
    if litter[i] is None:
        raise TheoremDisabledError("no pure-same-type litter of size >= 2")
    if not (axis_ok and floor_ok):
        raise TheoremDisabledError(
            "offspring laws do not meet the axis and floor conditions"
        )
    s1, s2 = float(s[0]), float(s[1])
    _check_unit_box(s1, s2)
    if s1 == 0.0 or s2 == 0.0:
        raise ValueError("zero coordinate: log g is minus infinity")
    if s1 == 1.0 and s2 == 1.0:
        ns = list(range(max(0, n - window + 1), n + 1))
        return 0.0, LimitDiagnostics(ns, [0.0] * len(ns), [0.0] * (len(ns) - 1), tol)
    k = litter[i]
    L = np.log(np.array([s1, s2]))
    log_prod = 0.0
    track = {}
    lo = max(0, n - window + 1)
    for m in range(n + 1):
        if m >= lo:
            track[m] = (L[i] + log_prod) / float(k) ** m
        if m == n:
            break
        log_prod += _log_h(spec, L)
        L = _log_f_point(spec, L)
    ns = sorted(track)
    vals = [track[m] for m in ns]
    diffs = [abs(vals[kk] - vals[kk - 1]) for kk in range(1, len(vals))]
    return vals[-1], LimitDiagnostics(ns, vals, diffs, tol)


def G_residual(spec, i, s, n):
    """Defect |G_n(f(s)) - k * G_n(s)| of the log-scaled limit relation."""
    fs = f_point(spec, float(s[0]), float(s[1]))
    k = offspring_conditions(spec)[2][i]
    g_here, _ = G_eval(spec, i, s, n, window=1)
    g_there, _ = G_eval(spec, i, fs, n, window=1)
    return abs(g_there - k * g_here)


def _pmf_array_from_state(spec, j):
    """Exact pmf of the next state from j, as a dense array plus offsets."""
    j1, j2 = int(j[0]), int(j[1])
    laws = [spec.offspring[0]] * j1 + [spec.offspring[1]] * j2 + [spec.immigration]
    m1 = sum(int(l.atoms[:, 0].max()) for l in laws)
    m2 = sum(int(l.atoms[:, 1].max()) for l in laws)
    out = np.zeros((m1 + 1, m2 + 1))
    out[0, 0] = 1.0
    for l in laws:
        kern = np.zeros((int(l.atoms[:, 0].max()) + 1, int(l.atoms[:, 1].max()) + 1))
        for (a, b), w in zip(l.atoms, l.weights):
            kern[a, b] = w
        out = convolve2d(out, kern)[: m1 + 1, : m2 + 1]
    return out


def exact_phi(spec, j, eps, l, cap=PHI_CAP):
    """Exact one-step deviation probability from state j.

    The event is a linear statistic of the next state missing its
    conditional mean by more than eps times the current population.
    """
    j = np.asarray(j, dtype=np.int64)
    if j.sum() <= 0:
        raise ValueError("state must be nonzero")
    if j.sum() > cap:
        raise ResourceError(
            f"|j|_1 = {int(j.sum())} exceeds the exact-convolution cap {cap}; "
            "use the Monte Carlo estimator"
        )
    l = np.asarray(l, dtype=float)
    if not l.any():
        return 0.0
    pmf = _pmf_array_from_state(spec, j)
    x1, x2 = np.indices(pmf.shape)
    stat = l[0] * x1 + l[1] * x2
    center = float(l @ (j.astype(float) @ spec.mean_matrix))
    mask = np.abs(stat - center) > eps * float(j.sum())
    return float(pmf[mask].sum())


def _projected_kernel(law, l):
    """1-D pmf of the l-projection of a law on an integer lattice."""
    vals = law.atoms.astype(float) @ l
    ints = np.rint(vals)
    if np.max(np.abs(vals - ints)) > 1e-9:
        return None
    ints = ints.astype(np.int64)
    lo, hi = int(ints.min()), int(ints.max())
    arr = np.zeros(hi - lo + 1)
    for v, w in zip(ints, law.weights):
        arr[v - lo] += w
    return arr, lo


def phi_table(spec, l, eps, j1max, j2max):
    """Exact one-step deviation probabilities for every state in a box.

    Dynamic programming over start states: extending the state by one
    particle convolves its projected one-step law into the running 1-D
    distribution of the linear statistic.  Needs the projection of every
    atom to sit on the integer lattice; otherwise falls back to per-state
    dense convolution (slow, only sensible for small boxes).
    """
    l = np.asarray(l, dtype=float)
    kernels = [_projected_kernel(law, l) for law in spec.offspring]
    imm = _projected_kernel(spec.immigration, l)
    M = spec.mean_matrix
    out = np.zeros((j1max + 1, j2max + 1))
    if any(k is None for k in kernels) or imm is None:
        for j1 in range(j1max + 1):
            for j2 in range(j2max + 1):
                if j1 + j2 == 0:
                    continue
                out[j1, j2] = exact_phi(spec, (j1, j2), eps, l, cap=10**9)
        return out
    (k1, o1), (k2, o2) = kernels
    kimm, oimm = imm
    row = None
    for j1 in range(j1max + 1):
        if j1 == 0:
            first = (kimm.copy(), oimm)
        else:
            first = (np.convolve(row[0][0], k1), row[0][1] + o1)
        new_row = [first]
        for j2 in range(1, j2max + 1):
            prev = new_row[j2 - 1]
            new_row.append((np.convolve(prev[0], k2), prev[1] + o2))
        for j2 in range(j2max + 1):
            if j1 + j2 == 0:
                continue
            arr, off = new_row[j2]
            vals = np.arange(off, off + len(arr), dtype=float)
            center = l[0] * (j1 * M[0, 0] + j2 * M[1, 0]) + l[1] * (
                j1 * M[0, 1] + j2 * M[1, 1]
            )
            mask = np.abs(vals - center) > eps * (j1 + j2)
            out[j1, j2] = float(arr[mask].sum())
        row = new_row
    return out


def _offspring_only_kernels(spec, k0):
    """Dense pmfs of the k0-step offspring-only process from each type,
    plus the immigration-descendant part, all with complete support."""
    lit_max = max(int(law.atoms.sum(axis=1).max()) for law in spec.offspring)
    imm_max = int(spec.immigration.atoms.sum(axis=1).max())
    pure = lit_max**k0
    imm_part = sum(imm_max * lit_max**t for t in range(k0))
    D = max(pure, imm_part, 1)
    f_list, _ = ser.iterate_process(spec, k0, D)
    b1 = f_list[k0][0].coef
    b2 = f_list[k0][1].coef
    prod = ser.unit_series(D)
    for k in range(k0):
        prod = ser.series_multiply(
            prod, ser.compose_law(spec.immigration, f_list[k][0], f_list[k][1])
        )
    return b1, b2, prod.coef


def phi_hat_table(spec, spectral, k0, eps, l, jmax):
    """Exact k0-step ratio-deviation probabilities for states in a box.

    The state's particles evolve as independent offspring-only subtrees;
    immigration contributes one further independent component.  All three
    kernels have complete support, so the values carry no truncation bar.
    """
    l = np.asarray(l, dtype=float)
    v = spectral.v
    target = float(l @ v) / float(v.sum())
    b1, b2, imm_part = _offspring_only_kernels(spec, k0)

    def event_mass(T):
        x1, x2 = np.indices(T.shape)
        tot = x1 + x2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (l[0] * x1 + l[1] * x2) / tot
        mask = (tot > 0) & (np.abs(ratio - target) > eps)
        return float(T[mask].sum())

    out = np.zeros((jmax + 1, jmax + 1))
    row = None
    for j1 in range(jmax + 1):
        if j1 == 0:
            first = imm_part.copy()
        else:
            first = convolve2d(row[0], b1)
        new_row = [first]
        for j2 in range(1, jmax + 1):
            new_row.append(convolve2d(new_row[j2 - 1], b2))
        for j2 in range(jmax + 1):
            if j1 + j2 == 0:
                continue
            out[j1, j2] = event_mass(new_row[j2])
        row = new_row
    return out


def exact_phi_hat(spec, spectral, j, k0, eps, l):
    """Exact ratio-deviation probability after k0 steps from state j."""
    j = np.asarray(j, dtype=np.int64)
    if j.sum() <= 0:
        raise ValueError("state must be nonzero")
    tab = phi_hat_table(spec, spectral, k0, eps, l, jmax=int(j.max()))
    return float(tab[j[0], j[1]])


def pick_k0(spec, spectral, eps, l, grid=None, k0_max=20):
    """Smallest step count at which the mean-ratio gap is so small that a
    ratio deviation of eps forces a visible one-step deviation."""
    if grid is None:
        g = np.arange(1, 21)
        grid = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    l = np.asarray(l, dtype=float)
    v = spectral.v
    thresh = eps * float(v.sum()) / (2.0 * (2.0 * np.max(np.abs(l)) + eps))
    for k0 in range(1, k0_max + 1):
        if mean_ratio_sup(spec, spectral, k0, grid) < thresh:
            return k0
    raise TheoremDisabledError(
        f"mean-ratio gap did not fall below {thresh:.3e} within {k0_max} steps"
    )


def population_bound(spec, n, start_total=1):
    """Deterministic upper bound on the total population at step n."""
    lit_max = max(int(law.atoms.sum(axis=1).max()) for law in spec.offspring)
    imm_max = int(spec.immigration.atoms.sum(axis=1).max())
    N = start_total
    for _ in range(n):
        N = N * lit_max + imm_max
    return N


@dataclass
class DeviationCurve:
    ns: list
    probs: np.ndarray        # exact deviation probability per step
    scaled: np.ndarray       # probs / base^n
    base: float
    series_defect: float     # numerical mass defect of the full-support series


def exact_deviation_curve(spec, spectral, l, eps, ns, i=0):
    """Exact one-step deviation probability at each listed step, with the
    full process law carried at complete support (no truncation)."""
    _require_geometric(spec, spectral)
    n_max = max(ns)
    D = population_bound(spec, n_max)
    _, g_list = ser.iterate_process(spec, n_max, D)
    tab = phi_table(spec, l, eps, D, D)
    base = spec.imm_zero_p * spectral.gamma
    probs, defect = [], 0.0
    for n in ns:
        coef = g_list[n][i].coef
        probs.append(float((coef * tab).sum()))
        defect = max(defect, abs(1.0 - coef.sum()))
    probs = np.array(probs)
    scaled = probs * np.power(base, -np.asarray(ns, dtype=float))
    return DeviationCurve(list(ns), probs, scaled, base, defect)


@dataclass
class DeviationSums:
    sum_next: np.ndarray         # per start type: sum of phi times scaled coefs
    sum_ratio: np.ndarray        # per start type, with the k0 prefactor
    remainder: np.ndarray        # per type: amplified tail + convergence gap
    tail_mass: np.ndarray
    conv_gap: np.ndarray
    n: int
    k0: int
    D: int


def theorem1_sums(spec, spectral, eps, l, D=DEFAULT_D, n=6, k0=None):
    """Truncated versions of the two limit sums, with honest remainders.

    The remainder per start type adds the scaled mass outside the box
    (deviation functionals are at most 1) to the change of the truncated
    sum over the last coefficient step, which tracks how far the scaled
    coefficients still are from their limit.
    """
    l = np.asarray(l, dtype=float)
    if not l.any() or l[0] == l[1]:
        raise ValueError("need a nonzero weight vector with distinct entries")
    _require_geometric(spec, spectral)
    if k0 is None:
        k0 = pick_k0(spec, spectral, eps, l)
    rc = r_coeffs(spec, spectral, n, D)
    tab = phi_table(spec, l, eps, D, D)
    hat = phi_hat_table(spec, spectral, k0, eps, l, D)
    base = spec.imm_zero_p * spectral.gamma
    sum_next = np.array([(rc.r[i] * tab).sum() for i in range(2)])
    sum_prev = np.array([(rc.prev[i] * tab).sum() for i in range(2)])
    sum_ratio = base**k0 * np.array([(rc.r[i] * hat).sum() for i in range(2)])
    conv_gap = np.abs(sum_next - sum_prev)
    tail = rc.residual_mass
    return DeviationSums(
        sum_next=sum_next,
        sum_ratio=sum_ratio,
        remainder=tail + conv_gap,
        tail_mass=tail,
        conv_gap=conv_gap,
        n=n,
        k0=k0,
        D=D,
    )
