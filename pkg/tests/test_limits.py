"""Scaled-limit oracles: R, G, the deviation functionals, and the sums."""

import itertools

import numpy as np
import pytest

from bpimm.model import TheoremDisabledError
from bpimm import limits


class TestREval:
    def test_zero_point_is_exactly_zero(self, spec_a, spectral_a):
        val, _ = limits.R_eval(spec_a, spectral_a, (0.0, 0.0), 12)
        assert val[0] == 0.0 and val[1] == 0.0

    def test_functional_equation(self, spec_a, spectral_a):
        for s in ((0.3, 0.5), (0.7, 0.7), (0.1, 0.65)):
            res = limits.R_residual(spec_a, spectral_a, s, 30)
            assert res.max() < 1e-6

    def test_window_converged(self, spec_a, spectral_a):
        _, diags = limits.R_eval(spec_a, spectral_a, (0.5, 0.5), 30)
        assert all(d.converged for d in diags)

    def test_all_ones_rejected(self, spec_a, spectral_a):
        with pytest.raises(ValueError):
            limits.R_eval(spec_a, spectral_a, (1.0, 1.0), 5)

    def test_disabled_without_immigration_mass_at_zero(self, spec_b, spectral_b):
        with pytest.raises(TheoremDisabledError):
            limits.R_eval(spec_b, spectral_b, (0.5, 0.5), 5)


class TestSSequence:
    def test_nondecreasing(self, spec_a):
        for s in ((0.2, 0.2), (0.6, 0.4), (0.7, 0.7)):
            seq = limits.s_sequence(spec_a, s, 25)
            arr = np.asarray(seq, dtype=float).reshape(len(seq), -1)
            assert (np.diff(arr, axis=0) >= -1e-15).all()


class TestRCoeffs:
    def test_matches_r_eval_at_a_point(self, spec_a, spectral_a):
        # sum_j r_j s^j must reproduce the scaled pgf within truncation
        D, n = 20, 8
        rc = limits.r_coeffs(spec_a, spectral_a, n, D)
        s = (0.35, 0.55)
        powers1 = np.power(s[0], np.arange(D + 1))
        powers2 = np.power(s[1], np.arange(D + 1))
        val = powers1 @ rc.r[0] @ powers2
        direct, _ = limits.R_eval(spec_a, spectral_a, s, n, window=1)
        assert abs(val - direct[0]) <= rc.residual_mass[0] + 1e-10

    def test_rel_change_shrinks(self, spec_a, spectral_a):
        early = limits.r_coeffs(spec_a, spectral_a, 6, 8)
        late = limits.r_coeffs(spec_a, spectral_a, 11, 8)
        box = np.s_[:, :7, :7]
        e = np.nanmax(early.rel_change[box])
        l = np.nanmax(late.rel_change[box])
        assert l < e


class TestGEval:
    def test_all_ones_is_zero(self, spec_b):
        val, _ = limits.G_eval(spec_b, 0, (1.0, 1.0), 10)
        assert val == 0.0

    def test_finite_negative_inside(self, spec_b):
        val, diag = limits.G_eval(spec_b, 0, (0.5, 0.5), 45)
        assert np.isfinite(val) and val < 0
        assert diag.converged

    def test_functional_equation(self, spec_b):
        for s in ((0.4, 0.6), (0.8, 0.8)):
            assert limits.G_residual(spec_b, 0, s, 30) < 1e-6

    def test_disabled_on_geometric_fixture(self, spec_a):
        with pytest.raises(TheoremDisabledError):
            limits.G_eval(spec_a, 0, (0.5, 0.5), 5)

    def test_zero_coordinate_rejected(self, spec_b):
        with pytest.raises(ValueError):
            limits.G_eval(spec_b, 0, (0.0, 0.5), 5)


class TestPhi:
    def brute_phi(self, spec, j, eps, l):
        # full enumeration of one step from state j, immigration included
        laws = []
        for i in (0, 1):
            laws.extend([spec.offspring[i]] * j[i])
        laws.append(spec.immigration)
        center = l[0] * (j[0] * spec.mean_matrix[0, 0] + j[1] * spec.mean_matrix[1, 0])
        center += l[1] * (j[0] * spec.mean_matrix[0, 1] + j[1] * spec.mean_matrix[1, 1])
        total = 0.0
        for combo in itertools.product(*[range(len(g.atoms)) for g in laws]):
            w = 1.0
            x = np.zeros(2)
            for g, idx in zip(laws, combo):
                w *= g.weights[idx]
                x += g.atoms[idx]
            if abs(l[0] * x[0] + l[1] * x[1] - center) > eps * (j[0] + j[1]):
                total += w
        return total

    @pytest.mark.parametrize("j", [(1, 0), (1, 1), (2, 1)])
    def test_exact_phi_matches_enumeration(self, spec_a, j):
        l, eps = (1.0, -1.0), 0.4
        want = self.brute_phi(spec_a, j, eps, l)
        got = limits.exact_phi(spec_a, j, eps, l)
        assert got == pytest.approx(want, abs=1e-12)

    def test_phi_table_matches_exact_phi(self, spec_a):
        l, eps = (1.0, -1.0), 0.7
        tab = limits.phi_table(spec_a, l, eps, 3, 3)
        for j1 in range(4):
            for j2 in range(4):
                if j1 + j2 == 0:
                    continue
                want = limits.exact_phi(spec_a, (j1, j2), eps, l)
                assert tab[j1, j2] == pytest.approx(want, abs=1e-12)

    def test_phi_bounded_by_one(self, spec_a):
        tab = limits.phi_table(spec_a, (1.0, -1.0), 0.05, 6, 6)
        assert (tab <= 1.0 + 1e-12).all() and (tab >= 0.0).all()


class TestDeviationCurve:
    def test_probabilities_and_scaling(self, spec_a, spectral_a):
        curve = limits.exact_deviation_curve(
            spec_a, spectral_a, (1.0, -1.0), 1.5, [3, 4], i=0
        )
        assert curve.base == pytest.approx(0.2, abs=1e-12)
        for n, p, s in zip(curve.ns, curve.probs, curve.scaled):
            assert 0 < p < 1
            assert s == pytest.approx(p * curve.base**-n, rel=1e-12)
        assert curve.series_defect < 1e-9

    def test_needs_geometric_regime(self, spec_b, spectral_b):
        with pytest.raises(TheoremDisabledError):
            limits.exact_deviation_curve(spec_b, spectral_b, (1.0, -1.0), 0.5, [2])


class TestTheoremSums:
    def test_structure_on_a(self, spec_a, spectral_a):
        sums = limits.theorem1_sums(spec_a, spectral_a, 1.5, (1.0, -1.0), D=12, n=5)
        assert sums.k0 >= 1
        assert (sums.sum_next >= 0).all()
        assert (sums.sum_ratio >= 0).all()
        assert (sums.remainder >= 0).all()
        assert (sums.remainder >= sums.conv_gap).all()

    def test_equal_weight_vector_rejected(self, spec_a, spectral_a):
        with pytest.raises(ValueError):
            limits.theorem1_sums(spec_a, spectral_a, 0.5, (1.0, 1.0), D=8)

    def test_disabled_on_b(self, spec_b, spectral_b):
        with pytest.raises(TheoremDisabledError):
            limits.theorem1_sums(spec_b, spectral_b, 0.5, (1.0, -1.0), D=8)
