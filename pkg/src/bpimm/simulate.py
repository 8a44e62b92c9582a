"""Seeded Monte Carlo for trajectories, the scaled martingale, and tail events.

Replicas run in fixed-size blocks.  Block b of a run draws from a fresh
generator seeded by (seed, stream tag, b), and block results merge in
block order, so any worker count reproduces the same bytes.  One
generation advances a whole block at once: per type, a vectorized
multinomial splits each replica's population across that type's litter
atoms, which matches independent per-particle draws in distribution at
a cost proportional to the support size, not the population.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import TheoremDisabledError

BLOCK = 8192
POP_CAP = 10**12
Z95 = 1.959963984540054

TAG_PATH = 11
TAG_EVENT = 12
TAG_MGF = 13
TAG_CAMPAIGN = 14
TAG_STEP = 15
TAG_MARTINGALE = 16
TAG_FREQ = 17

STATISTICS = ("dev-next", "dev-ratio", "y-tail", "dev-next-cond", "dev-ratio-cond")


def _rng(seed, tag, block):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, tag, block))))


class _Tables:
    """Sampling tables: atom matrices and normalized weights per law."""

    def __init__(self, spec):
        self.atoms = [law.atoms for law in spec.offspring]
        self.pvals = [law.weights / law.weights.sum() for law in spec.offspring]
        self.imm_atoms = spec.immigration.atoms
        self.imm_cum = np.cumsum(
            spec.immigration.weights / spec.immigration.weights.sum()
        )
        self.imm_fixed = (
            self.imm_atoms[0] if len(self.imm_atoms) == 1 else None
        )

    def imm_draw(self, rng, size):
        if self.imm_fixed is not None:
            return np.broadcast_to(self.imm_fixed, (size, 2))
        u = rng.random(size)
        idx = np.minimum(
            np.searchsorted(self.imm_cum, u, side="right"), len(self.imm_cum) - 1
        )
        return self.imm_atoms[idx]


def _branch_block(tables, X, rng):
    """Offspring-only step for a block of states."""
    out = np.zeros_like(X)
    for r in range(2):
        counts = rng.multinomial(X[:, r], tables.pvals[r])
        out += counts @ tables.atoms[r]
    return out


def _step_block(tables, X, rng, cap, gen):
    out = _branch_block(tables, X, rng) + tables.imm_draw(rng, len(X))
    if out.max(initial=0) > cap:
        raise OverflowError(f"population exceeded {cap} at generation {gen}")
    return out


def step(spec, x, rng, cap=POP_CAP):
    """Advance one state one generation: offspring of both types plus
    one immigration arrival."""
    X = np.asarray(x, dtype=np.int64).reshape(1, 2)
    return _step_block(_Tables(spec), X, rng, cap, gen=1)[0]


@dataclass
class Trajectory:
    seed: int
    x0: tuple
    states: np.ndarray                 # (n+1, 2) int64
    z_states: Optional[np.ndarray]     # initial-line part, when tracked
    y: Optional[np.ndarray]
    spec_name: str = "model"

    def split_ok(self):
        """Initial line plus immigration lines reproduce the population."""
        if self.z_states is None:
            return True
        return bool(np.all(self.states >= self.z_states))


def simulate_path(spec, n, x0=(1, 0), seed=0, track_split=False, spectral=None, cap=POP_CAP):
    """One path of length n.  With track_split, the initial particles and
    every immigration cohort evolve as separate offspring-only lines whose
    totals are summed, which pins down the population decomposition."""
    tables = _Tables(spec)
    rng = _rng(seed, TAG_PATH, 0)
    x0 = np.asarray(x0, dtype=np.int64)
    states = [x0.copy()]
    z_states = [x0.copy()] if track_split else None
    if track_split:
        lines = [x0.reshape(1, 2).copy()]   # line 0 is the initial line
        for gen in range(1, n + 1):
            stacked = np.vstack(lines)
            stepped = _branch_block(tables, stacked, rng)
            cohort = tables.imm_draw(rng, 1)
            lines = [row.reshape(1, 2) for row in stepped] + [cohort.copy()]
            total = stepped.sum(axis=0) + cohort[0]
            if total.max() > cap:
                raise OverflowError(f"population exceeded {cap} at generation {gen}")
            states.append(total)
            z_states.append(stepped[0].copy())
    else:
        X = x0.reshape(1, 2).copy()
        for gen in range(1, n + 1):
            X = _step_block(tables, X, rng, cap, gen)
            states.append(X[0].copy())
    states = np.array(states, dtype=np.int64)
    z_arr = np.array(z_states, dtype=np.int64) if track_split else None
    traj = Trajectory(
        seed=seed,
        x0=tuple(int(c) for c in x0),
        states=states,
        z_states=z_arr,
        y=None,
        spec_name=spec.name,
    )
    if spectral is not None:
        traj.y = y_sequence(traj, spectral, spec)
    return traj


def _y_of(X, gen, rho, u, u_lam):
    """Scaled martingale value for state rows X at a generation."""
    comp = (rho ** (gen + 1) - 1.0) / (rho - 1.0) * u_lam
    return rho**-gen * (X @ u - comp)


def y_sequence(trajectory, spectral, spec):
    """The scaled martingale along a stored path."""
    if spectral.rho <= 1:
        raise TheoremDisabledError("scaled martingale needs a supercritical model")
    u_lam = float(spectral.u @ spec.imm_mean)
    return np.array(
        [
            float(_y_of(trajectory.states[g].reshape(1, 2), g, spectral.rho, spectral.u, u_lam)[0])
            for g in range(len(trajectory.states))
        ]
    )


@dataclass
class McEstimate:
    statistic: str
    n: int
    estimate: float
    reps: int
    se: float
    ci_low: float
    ci_high: float
    seed: int
    extras: dict = field(default_factory=dict)

    def as_dict(self):
        d = dict(self.__dict__)
        d["extras"] = dict(self.extras)
        return d


def wilson(k, n, z=Z95):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the exact endpoints at k = 0 and k = n get chewed up by cancellation
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def _blocks(reps):
    sizes = []
    left = reps
    while left > 0:
        take = min(BLOCK, left)
        sizes.append(take)
        left -= take
    return sizes


def _run_blocks(fn, nblocks, workers):
    if workers <= 1:
        return [fn(b) for b in range(nblocks)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(nblocks)))


def _resolve_params(spec, spectral, statistic, params):
    p = dict(params)
    n = int(p["n"])
    if statistic in ("y-tail", "dev-next-cond", "dev-ratio-cond"):
        p.setdefault("n_ref", n + 15)
        if p["n_ref"] <= n:
            raise ValueError("n_ref must exceed n")
    if statistic != "y-tail":
        l = np.asarray(p.get("l"), dtype=float)
        if l is None or l.shape != (2,):
            raise ValueError("statistic needs a two-entry weight vector l")
        p["l"] = l
    p.setdefault("alpha_quantile", 0.7)
    p.setdefault("x0", (1, 0))
    return p


def estimate_event(spec, spectral, statistic, params, reps, seed, workers=1, cap=POP_CAP):
    """Proportion estimate of one tail event, Wilson 95% interval attached.

    Conditional statistics return the conditional proportion, with the
    conditioning threshold (a quantile of the limit proxy unless given
    as alpha) and the conditioning frequency in extras.  A conditional
    estimate with an empty conditioning event is flagged undefined.
    """
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    p = _resolve_params(spec, spectral, statistic, params)
    n = int(p["n"])
    eps = float(p["eps"])
    tables = _Tables(spec)
    rho, u = spectral.rho, spectral.u
    u_lam = float(u @ spec.imm_mean)
    x0 = np.asarray(p["x0"], dtype=np.int64)
    conditional = statistic.endswith("-cond")
    base_stat = statistic.replace("-cond", "")
    n_ref = int(p.get("n_ref", n + 15)) if (conditional or statistic == "y-tail") else n
    depth = max(n + 1 if base_stat == "dev-next" else n, n_ref if n_ref else 0)
    sizes = _blocks(reps)
    if base_stat != "y-tail":
        l = p["l"]
        M = spec.mean_matrix
        ratio_target = float(l @ spectral.v) / float(spectral.v.sum())

    def one_block(b):
        rng = _rng(seed, TAG_EVENT, b)
        X = np.tile(x0, (sizes[b], 1))
        ind = None
        y_at_n = None
        y_ref = None
        for gen in range(1, depth + 1):
            X_prev = X
            X = _step_block(tables, X, rng, cap, gen)
            if base_stat == "dev-next" and gen == n + 1:
                stat = (X - X_prev @ M) @ l
                ind = np.abs(stat) > eps * X_prev.sum(axis=1)
            if base_stat == "dev-ratio" and gen == n:
                tot = X.sum(axis=1).astype(float)
                ind = np.abs((X @ l) / tot - ratio_target) > eps
            if base_stat == "y-tail" and gen == n:
                y_at_n = _y_of(X, gen, rho, u, u_lam)
            if (conditional or base_stat == "y-tail") and gen == n_ref:
                y_ref = _y_of(X, gen, rho, u, u_lam)
        if n == 0:
            if base_stat == "dev-ratio":
                tot = float(x0.sum())
                val = abs(float(x0 @ l) / tot - ratio_target) > eps
                ind = np.full(sizes[b], val)
            elif base_stat == "y-tail":
                y_at_n = np.full(sizes[b], float(_y_of(x0.reshape(1, 2), 0, rho, u, u_lam)[0]))
        if base_stat == "y-tail":
            ind = np.abs(y_at_n - y_ref) > eps
        return ind, y_ref

    out = _run_blocks(one_block, len(sizes), workers)
    ind = np.concatenate([r[0] for r in out])
    extras = {"eps": eps, "x0": [int(c) for c in x0]}
    if conditional:
        y_ref = np.concatenate([r[1] for r in out])
        alpha = p.get("alpha")
        if alpha is None:
            alpha = float(np.quantile(y_ref, p["alpha_quantile"]))
            extras["alpha_quantile"] = p["alpha_quantile"]
        keep = y_ref >= alpha
        m = int(keep.sum())
        k = int((ind & keep).sum())
        extras.update(
            alpha=float(alpha),
            n_ref=n_ref,
            cond_count=m,
            cond_freq=m / reps,
            undefined=(m == 0),
        )
        est = k / m if m else float("nan")
        se = float(np.sqrt(est * (1 - est) / m)) if m else float("nan")
        lo, hi = wilson(k, m) if m else (float("nan"), float("nan"))
        return McEstimate(statistic, n, est, reps, se, lo, hi, seed, extras)
    k = int(ind.sum())
    if statistic == "y-tail":
        extras["n_ref"] = n_ref
    est = k / reps
    se = float(np.sqrt(est * (1 - est) / reps))
    lo, hi = wilson(k, reps)
    return McEstimate(statistic, n, est, reps, se, lo, hi, seed, extras)


def phi_mgf(spec, spectral, theta):
    """Exact per-type mgf of the centered projected litter.

    Centered means u . Z_1 minus rho times the starting type's weight;
    finite support makes this a plain finite sum.
    """
    th = float(theta)
    u, rho = spectral.u, spectral.rho
    out = np.empty(2)
    for i, law in enumerate(spec.offspring):
        vals = law.atoms.astype(float) @ u - u[i] * rho
        out[i] = float(np.sum(law.weights * np.exp(th * vals)))
    return out


def mgf(spec, spectral, theta, n, reps, seed, workers=1, x0=(1, 0), cap=POP_CAP):
    """MC estimate of E[exp(theta Y_n)] plus the exact per-type litter mgfs."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    tables = _Tables(spec)
    rho, u = spectral.rho, spectral.u
    u_lam = float(u @ spec.imm_mean)
    x0 = np.asarray(x0, dtype=np.int64)
    sizes = _blocks(reps)

    def one_block(b):
        rng = _rng(seed, TAG_MGF, b)
        X = np.tile(x0, (sizes[b], 1))
        for gen in range(1, n + 1):
            X = _step_block(tables, X, rng, cap, gen)
        w = np.exp(theta * _y_of(X, n, rho, u, u_lam))
        return np.array([w.sum(), (w * w).sum()])

    sums = np.array(_run_blocks(one_block, len(sizes), workers))
    s1, s2 = sums[:, 0].sum(), sums[:, 1].sum()
    mean = s1 / reps
    var = max(0.0, s2 / reps - mean * mean)
    se = float(np.sqrt(var / reps))
    est = McEstimate(
        "mgf", n, float(mean), reps, se, float(mean - Z95 * se), float(mean + Z95 * se),
        seed, {"theta": float(theta)},
    )
    return est, phi_mgf(spec, spectral, theta)


def martingale_increments(spec, spectral, n_max, reps, seed, workers=1, x0=(1, 0), cap=POP_CAP):
    """Per-generation mean and standard error of Y_{n+1} - Y_n."""
    tables = _Tables(spec)
    rho, u = spectral.rho, spectral.u
    u_lam = float(u @ spec.imm_mean)
    x0 = np.asarray(x0, dtype=np.int64)
    sizes = _blocks(reps)

    def one_block(b):
        rng = _rng(seed, TAG_MARTINGALE, b)
        X = np.tile(x0, (sizes[b], 1))
        y_prev = _y_of(X, 0, rho, u, u_lam)
        acc = np.zeros((n_max, 2))
        for gen in range(1, n_max + 1):
            X = _step_block(tables, X, rng, cap, gen)
            y = _y_of(X, gen, rho, u, u_lam)
            d = y - y_prev
            acc[gen - 1] = (d.sum(), (d * d).sum())
            y_prev = y
        return acc

    acc = np.array(_run_blocks(one_block, len(sizes), workers)).sum(axis=0)
    means = acc[:, 0] / reps
    var = np.maximum(0.0, acc[:, 1] / reps - means**2)
    ses = np.sqrt(var / reps)
    return means, ses


def empirical_pmf(spec, n, reps, seed, x0=(1, 0), workers=1, cap=POP_CAP):
    """Seeded MC frequencies of the generation-n state, as {state: count}.

    Per-block counts are merged by summation in block order, so the
    result is identical for any worker count.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    tables = _Tables(spec)
    start = np.asarray(x0, dtype=np.int64)
    sizes = _blocks(reps)

    def one_block(b):
        rng = _rng(seed, TAG_FREQ, b)
        X = np.tile(start, (sizes[b], 1))
        for gen in range(1, n + 1):
            X = _step_block(tables, X, rng, cap, gen)
        return np.unique(X, axis=0, return_counts=True)

    out = {}
    for states, counts in _run_blocks(one_block, len(sizes), workers):
        for (j1, j2), c in zip(states, counts):
            key = (int(j1), int(j2))
            out[key] = out.get(key, 0) + int(c)
    return out


def mean_step_check(spec, x, reps, seed, workers=1, cap=POP_CAP):
    """MC mean of one step from a fixed state, with standard errors,
    against the affine conditional-mean identity."""
    tables = _Tables(spec)
    x = np.asarray(x, dtype=np.int64)
    sizes = _blocks(reps)

    def one_block(b):
        rng = _rng(seed, TAG_STEP, b)
        X = np.tile(x, (sizes[b], 1))
        nxt = _step_block(tables, X, rng, cap, 1).astype(float)
        return np.concatenate([nxt.sum(axis=0), (nxt * nxt).sum(axis=0)])

    acc = np.array(_run_blocks(one_block, len(sizes), workers)).sum(axis=0)
    mean = acc[:2] / reps
    var = np.maximum(0.0, acc[2:] / reps - mean**2)
    se = np.sqrt(var / reps)
    predicted = x.astype(float) @ spec.mean_matrix + spec.imm_mean
    return mean, se, predicted


@dataclass
class Campaign:
    """Shared-path estimates of all deviation statistics over a step range."""

    ns: list
    estimates: dict          # statistic -> {n: McEstimate}
    seed: int
    reps: int


def deviation_campaign(
    spec,
    spectral,
    ns,
    eps_next,
    eps_ratio,
    eps_tail,
    l,
    reps,
    seed,
    ref_offset=15,
    alpha_quantile=0.7,
    workers=1,
    x0=(1, 0),
    cap=POP_CAP,
):
    """One set of trajectories serving every deviation statistic at once.

    Sharing paths across n keeps the curves monotone where the underlying
    probabilities are, which is what the rate fits consume.  Conditional
    statistics condition on the limit proxy at n + ref_offset clearing
    its alpha_quantile level.
    """
    ns = sorted(int(n) for n in ns)
    if not ns or ns[0] < 1:
        raise ValueError("campaign steps must be positive")
    l = np.asarray(l, dtype=float)
    tables = _Tables(spec)
    rho, u = spectral.rho, spectral.u
    u_lam = float(u @ spec.imm_mean)
    M = spec.mean_matrix
    ratio_target = float(l @ spectral.v) / float(spectral.v.sum())
    x0 = np.asarray(x0, dtype=np.int64)
    depth = max(ns) + ref_offset
    ref_of = {n: n + ref_offset for n in ns}
    sizes = _blocks(reps)

    def one_block(b):
        rng = _rng(seed, TAG_CAMPAIGN, b)
        X = np.tile(x0, (sizes[b], 1))
        res = {n: {} for n in ns}
        y_at = {}
        for gen in range(1, depth + 1):
            X_prev = X
            X = _step_block(tables, X, rng, cap, gen)
            if gen - 1 in ns:
                n = gen - 1
                stat = (X - X_prev @ M) @ l
                res[n]["next"] = np.abs(stat) > eps_next * X_prev.sum(axis=1)
            if gen in ns:
                tot = X.sum(axis=1).astype(float)
                res[gen]["ratio"] = np.abs((X @ l) / tot - ratio_target) > eps_ratio
                y_at[gen] = _y_of(X, gen, rho, u, u_lam)
            if gen in ref_of.values():
                for n, r in ref_of.items():
                    if r == gen:
                        res[n]["y_ref"] = _y_of(X, gen, rho, u, u_lam)
        for n in ns:
            res[n]["tail"] = np.abs(y_at[n] - res[n]["y_ref"]) > eps_tail
        return res

    blocks = _run_blocks(one_block, len(sizes), workers)
    merged = {
        n: {
            key: np.concatenate([blk[n][key] for blk in blocks])
            for key in ("next", "ratio", "tail", "y_ref")
        }
        for n in ns
    }
    eps_of = {"dev-next": eps_next, "dev-ratio": eps_ratio, "y-tail": eps_tail}
    est = {s: {} for s in STATISTICS}
    for n in ns:
        data = merged[n]
        for statistic, key in (("dev-next", "next"), ("dev-ratio", "ratio"), ("y-tail", "tail")):
            k = int(data[key].sum())
            p = k / reps
            se = float(np.sqrt(p * (1 - p) / reps))
            lo, hi = wilson(k, reps)
            extras = {"eps": eps_of[statistic]}
            if statistic == "y-tail":
                extras["n_ref"] = ref_of[n]
            est[statistic][n] = McEstimate(statistic, n, p, reps, se, lo, hi, seed, extras)
        alpha = float(np.quantile(data["y_ref"], alpha_quantile))
        keep = data["y_ref"] >= alpha
        m = int(keep.sum())
        for statistic, key in (("dev-next-cond", "next"), ("dev-ratio-cond", "ratio")):
            k = int((data[key] & keep).sum())
            p = k / m if m else float("nan")
            se = float(np.sqrt(p * (1 - p) / m)) if m else float("nan")
            lo, hi = wilson(k, m) if m else (float("nan"), float("nan"))
            extras = {
                "eps": eps_of[statistic.replace("-cond", "")],
                "alpha": alpha,
                "alpha_quantile": alpha_quantile,
                "n_ref": ref_of[n],
                "cond_count": m,
                "cond_freq": m / reps,
                "undefined": m == 0,
            }
            est[statistic][n] = McEstimate(statistic, n, p, reps, se, lo, hi, seed, extras)
    return Campaign(ns=ns, estimates=est, seed=seed, reps=reps)
