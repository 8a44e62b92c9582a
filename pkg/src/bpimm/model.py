"""Finite-support offspring and immigration laws for a two-type process.

A model bundles one offspring law per particle type with one immigration
law.  Laws are finite pmfs on pairs of nonnegative integers; finite
support keeps every moment finite and lets the series oracle stay exact.
Offspring laws carry no mass at (0, 0), so particles never die and the
population is nondecreasing along every path.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

WEIGHT_TOL = 1e-12


class ValidationError(ValueError):
    """Structurally broken law or model file."""


class TheoremDisabledError(RuntimeError):
    """A computation whose hypotheses the current model does not meet."""


@dataclass(frozen=True)
class Pmf2:
    """Finite pmf on pairs of nonnegative integers.

    Atoms are kept lexicographically sorted so that inverse-CDF sampling
    consumes exactly one uniform per draw in a reproducible order.
    """

    atoms: np.ndarray     # (k, 2) int64, sorted lexicographically
    weights: np.ndarray   # (k,) float64, each > 0, summing to 1 within 1e-12
    name: str = "pmf"
    cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cum", np.cumsum(self.weights))

    @staticmethod
    def from_pairs(pairs, name="pmf"):
        pairs = list(pairs)
        if not pairs:
            raise ValidationError(f"{name}: empty support")
        atoms = np.array([p[0] for p in pairs], dtype=np.int64)
        weights = np.array([p[1] for p in pairs], dtype=float)
        if atoms.ndim != 2 or atoms.shape[1] != 2:
            raise ValidationError(f"{name}: atoms must be integer pairs")
        if np.any(np.array([p[0] for p in pairs]) != atoms):
            raise ValidationError(f"{name}: atom coordinates must be integers")
        if np.any(atoms < 0):
            raise ValidationError(f"{name}: negative atom coordinates")
        if np.any(weights <= 0):
            raise ValidationError(f"{name}: weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(
                f"{name}: weights sum to {weights.sum():.17g}, not 1"
            )
        order = np.lexsort((atoms[:, 1], atoms[:, 0]))
        atoms, weights = atoms[order], weights[order]
        if len({(int(a), int(b)) for a, b in atoms}) != len(atoms):
            raise ValidationError(f"{name}: duplicate atoms")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        return Pmf2(atoms=atoms, weights=weights, name=name)

    def pgf(self, s1, s2):
        """Evaluate sum_j w_j * s1^j1 * s2^j2 on the unit box.

        The all-ones point returns exactly 1.0 by the normalization
        identity rather than by summing weights.  A small overshoot
        above 1 is allowed so derivatives at the boundary can be taken
        by central differences; the polynomial is finite either way.
        """
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        if np.any(s1 < 0) or np.any(s1 > 1.001) or np.any(s2 < 0) or np.any(s2 > 1.001):
            raise ValueError("pgf argument outside the unit box")
        if s1.ndim == 0 and s2.ndim == 0 and s1 == 1.0 and s2 == 1.0:
            return 1.0
        a = self.atoms[:, 0].astype(float)
        b = self.atoms[:, 1].astype(float)
        val = np.sum(
            self.weights * s1[..., None] ** a * s2[..., None] ** b, axis=-1
        )
        return float(val) if val.ndim == 0 else val

    def mean(self):
        return self.weights @ self.atoms.astype(float)

    def second_moment(self):
        """E[j j^T] over the law, a 2x2 matrix."""
        a = self.atoms.astype(float)
        return (a[:, :, None] * a[:, None, :] * self.weights[:, None, None]).sum(0)

    def cov(self):
        m = self.mean()
        return self.second_moment() - np.outer(m, m)

    def sample(self, rng, size=None):
        """Inverse-CDF draw over the sorted atom list, one uniform per draw."""
        u = rng.random(size)
        idx = np.searchsorted(self.cum, u, side="right")
        idx = np.minimum(idx, len(self.weights) - 1)
        return self.atoms[idx]

    def min_axis_count(self, axis, floor):
        """Smallest c >= floor with positive mass at c*e_axis, or None."""
        other = 1 - axis
        on_axis = self.atoms[self.atoms[:, other] == 0]
        on_axis = on_axis[on_axis[:, axis] >= floor]
        if len(on_axis) == 0:
            return None
        return int(on_axis[:, axis].min())


@dataclass(frozen=True)
class ModelSpec:
    """Two offspring laws plus one immigration law, with derived moments."""

    offspring: tuple
    immigration: Pmf2
    name: str = "model"

    @property
    def p(self):
        return 2

    @property
    def mean_matrix(self):
        """Rows index the parent type: row i is the mean litter of type i."""
        return np.vstack([law.mean() for law in self.offspring])

    @property
    def jacobian_zero(self):
        """Entry (i, j) is the weight of the single-child atom e_j in law i."""
        A = np.zeros((2, 2))
        for i, law in enumerate(self.offspring):
            for j in range(2):
                unit = np.zeros(2, dtype=np.int64)
                unit[j] = 1
                hit = np.all(law.atoms == unit, axis=1)
                if hit.any():
                    A[i, j] = law.weights[hit][0]
        return A

    @property
    def imm_mean(self):
        return self.immigration.mean()

    @property
    def imm_zero_p(self):
        """Probability of an empty immigration arrival."""
        hit = np.all(self.immigration.atoms == 0, axis=1)
        return float(self.immigration.weights[hit][0]) if hit.any() else 0.0

    def min_axis_litter(self):
        """Per type, the smallest pure-same-type litter of size >= 2."""
        return tuple(
            self.offspring[i].min_axis_count(axis=i, floor=2) for i in range(2)
        )

    def min_axis_imm(self):
        """Per coordinate, the smallest single-axis immigration of size >= 1."""
        return tuple(
            self.immigration.min_axis_count(axis=i, floor=1) for i in range(2)
        )

    def offspring_cov(self):
        return tuple(law.cov() for law in self.offspring)


def moments(spec):
    """Mean matrix, single-child weight matrix, immigration mean, covariances."""
    return (
        spec.mean_matrix,
        spec.jacobian_zero,
        spec.imm_mean,
        spec.offspring_cov() + (spec.immigration.cov(),),
    )


@dataclass
class HypothesisReport:
    """Flags for every hypothesis consumed downstream, with evidence.

    Axis conditions: each type can produce a pure-same-type litter of
    size >= 2, and immigration places mass on each axis.  Floor
    conditions: the same-type offspring count never falls below the
    minimal axis litter, and each immigration coordinate never falls
    below its minimal axis arrival.  The two condition pairs are checked
    literally and independently; for any law set satisfying the axis
    pair the floor pair fails, and both verdicts are reported as found.
    """

    no_death: bool
    no_death_violations: list
    positively_regular: bool
    regularity_power: Optional[int]
    supercritical: bool
    rho: Optional[float]
    imm_zero_p: float
    imm_zero_positive: bool
    jacobian_ok: bool
    gamma: Optional[float]
    jacobian_note: str
    exp_moments_ok: bool
    offspring_axis: bool
    imm_axis: bool
    axis_pair_ok: bool
    min_axis_litter: tuple
    offspring_floor: bool
    min_axis_imm: tuple
    imm_floor: bool
    floor_pair_ok: bool
    growth_exponent: float
    growth_product: Optional[float]
    growth_product_gt1: bool
    evidence: dict

    def as_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def _axis_mass(law, axis, floor):
    """Total weight of atoms c*e_axis with c >= floor."""
    other = 1 - axis
    keep = (law.atoms[:, other] == 0) & (law.atoms[:, axis] >= floor)
    return float(law.weights[keep].sum())


def offspring_conditions(spec):
    """(axis_ok, floor_ok, litter): the offspring halves of the two
    condition pairs, which are what the doubly geometric results consume."""
    axis_ok = all(_axis_mass(spec.offspring[i], i, 2) > 0 for i in range(2))
    litter = spec.min_axis_litter()
    floor_ok = True
    for i in range(2):
        if litter[i] is None:
            floor_ok = False
            continue
        below = spec.offspring[i].atoms[:, i] < litter[i]
        if float(spec.offspring[i].weights[below].sum()) != 0.0:
            floor_ok = False
    return axis_ok, floor_ok, litter


def validate(spec, growth_exponent=1.0):
    """Evaluate every theorem hypothesis on the model; report, never reject.

    Structural breakage (weights not summing to 1, negative atoms) is
    caught earlier, at Pmf2 construction.
    """
    from . import spectral as _spectral

    evidence = {}

    dead = [
        law.name
        for law in spec.offspring
        if bool(np.all(law.atoms == 0, axis=1).any())
    ]
    no_death = not dead

    M = spec.mean_matrix
    reg_power = None
    pos = M > 0
    acc = np.eye(2, dtype=bool)
    for k in range(1, 2 * spec.p**2 + 1):
        acc = acc @ pos
        if acc.all():
            reg_power = k
            break
    positively_regular = reg_power is not None
    evidence["mean_matrix"] = M.tolist()

    rho = None
    supercritical = False
    if positively_regular:
        rho, _, _ = _spectral.perron(M)
        supercritical = bool(rho > 1.0)
        evidence["rho"] = rho

    A = spec.jacobian_zero
    jac = _spectral.gamma_p0(A)
    evidence["jacobian_zero"] = A.tolist()
    evidence["jacobian_note"] = jac.note

    h0 = spec.imm_zero_p
    evidence["imm_zero_p"] = h0

    off_axis_mass = [_axis_mass(spec.offspring[i], i, 2) for i in range(2)]
    imm_axis_mass = [_axis_mass(spec.immigration, i, 1) for i in range(2)]
    offspring_axis = all(m > 0 for m in off_axis_mass)
    imm_axis = all(m > 0 for m in imm_axis_mass)
    evidence["offspring_axis_mass"] = off_axis_mass
    evidence["imm_axis_mass"] = imm_axis_mass

    litter = spec.min_axis_litter()
    floors = []
    for i in range(2):
        if litter[i] is None:
            floors.append(False)
            continue
        below = spec.offspring[i].atoms[:, i] < litter[i]
        floors.append(float(spec.offspring[i].weights[below].sum()) == 0.0)
    offspring_floor = all(floors)
    evidence["offspring_floor_each"] = floors

    dmin = spec.min_axis_imm()
    ifloors = []
    for i in range(2):
        if dmin[i] is None:
            ifloors.append(False)
            continue
        below = spec.immigration.atoms[:, i] < dmin[i]
        ifloors.append(float(spec.immigration.weights[below].sum()) == 0.0)
    imm_floor = all(ifloors)
    evidence["imm_floor_each"] = ifloors

    growth = None
    growth_gt1 = False
    if jac.ok and rho is not None:
        growth = float(h0 * jac.gamma * rho**growth_exponent)
        growth_gt1 = growth > 1.0
        evidence["growth_product"] = growth

    return HypothesisReport(
        no_death=no_death,
        no_death_violations=dead,
        positively_regular=positively_regular,
        regularity_power=reg_power,
        supercritical=supercritical,
        rho=rho,
        imm_zero_p=h0,
        imm_zero_positive=bool(h0 > 0),
        jacobian_ok=jac.ok,
        gamma=jac.gamma if jac.ok else None,
        jacobian_note=jac.note,
        exp_moments_ok=True,  # finite support
        offspring_axis=offspring_axis,
        imm_axis=imm_axis,
        axis_pair_ok=offspring_axis and imm_axis,
        min_axis_litter=litter,
        offspring_floor=offspring_floor,
        min_axis_imm=dmin,
        imm_floor=imm_floor,
        floor_pair_ok=offspring_floor and imm_floor,
        growth_exponent=growth_exponent,
        growth_product=growth,
        growth_product_gt1=growth_gt1,
        evidence=evidence,
    )


def _law_from_table(table, name):
    if not isinstance(table, dict) or "atoms" not in table:
        raise ValidationError(f"{name}: missing 'atoms' list")
    pairs = []
    for rec in table["atoms"]:
        if not isinstance(rec, dict) or "j" not in rec or "p" not in rec:
            raise ValidationError(f"{name}: atom records need 'j' and 'p'")
        j = rec["j"]
        if len(j) != 2:
            raise ValidationError(f"{name}: 'j' must have two entries")
        pairs.append(((int(j[0]), int(j[1])), float(rec["p"])))
    return Pmf2.from_pairs(pairs, name=name)


def load_model(path):
    """Read a model file (offspring.type1, offspring.type2, immigration)."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"model file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"model file does not parse: {e}")
    off = data.get("offspring", {})
    if "type1" not in off or "type2" not in off:
        raise ValidationError("model file needs offspring.type1 and offspring.type2")
    if "immigration" not in data:
        raise ValidationError("model file needs an immigration section")
    return ModelSpec(
        offspring=(
            _law_from_table(off["type1"], "offspring.type1"),
            _law_from_table(off["type2"], "offspring.type2"),
        ),
        immigration=_law_from_table(data["immigration"], "immigration"),
        name=str(data.get("name", "model")),
    )
