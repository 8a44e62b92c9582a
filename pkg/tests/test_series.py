"""Truncated series arithmetic against brute-force oracles."""

import numpy as np
import pytest

from bpimm.model import Pmf2
from bpimm import series


def law(pairs):
    return Pmf2.from_pairs(pairs)


def dense(pmf, D):
    out = np.zeros((D + 1, D + 1))
    for (a, b), w in zip(pmf.atoms, pmf.weights):
        if a <= D and b <= D:
            out[a, b] += w
    return out


def conv2(x, y):
    # plain quadratic 2-D convolution, the independent oracle
    out = np.zeros((x.shape[0] + y.shape[0] - 1, x.shape[1] + y.shape[1] - 1))
    for a in range(x.shape[0]):
        for b in range(x.shape[1]):
            if x[a, b] == 0:
                continue
            out[a : a + y.shape[0], b : b + y.shape[1]] += x[a, b] * y
    return out


class TestBasics:
    def test_unit(self):
        u = series.unit_series(6)
        assert u.coefficient(0, 0) == 1.0
        assert u.stored_mass == pytest.approx(1.0, abs=1e-15)
        assert u.residual == pytest.approx(0.0, abs=1e-15)

    def test_monomial_evaluate(self):
        m = series.monomial(6, 2, 1)
        assert m.coefficient(2, 1) == 1.0
        assert m.evaluate(0.5, 0.25) == pytest.approx(0.5**2 * 0.25)

    def test_from_pmf_mass(self, spec_a):
        s = series.from_pmf(spec_a.offspring[0], 8)
        assert s.stored_mass == pytest.approx(1.0, abs=1e-12)
        assert s.residual == pytest.approx(0.0, abs=1e-12)


class TestMultiply:
    def test_matches_brute_force(self):
        D = 10
        x = law([((1, 0), 0.25), ((0, 2), 0.5), ((2, 1), 0.25)])
        y = law([((0, 0), 0.4), ((1, 1), 0.6)])
        sx, sy = series.from_pmf(x, D), series.from_pmf(y, D)
        prod = series.series_multiply(sx, sy)
        want = conv2(dense(x, D), dense(y, D))[: D + 1, : D + 1]
        assert np.abs(prod.coef - want).max() < 1e-14

    def test_residual_tracks_lost_mass(self):
        # atoms at degree 3 squared spill over a degree-5 box corner
        x = law([((3, 3), 1.0)])
        s = series.from_pmf(x, 5)
        prod = series.series_multiply(s, s)
        assert prod.stored_mass == pytest.approx(0.0, abs=1e-15)
        assert prod.residual == pytest.approx(1.0, abs=1e-15)

    def test_mass_conservation(self, spec_a):
        D = 12
        a = series.from_pmf(spec_a.offspring[0], D)
        b = series.from_pmf(spec_a.immigration, D)
        prod = series.series_multiply(a, b)
        assert prod.stored_mass + prod.residual == pytest.approx(1.0, abs=1e-12)


class TestCompose:
    def test_against_two_generation_enumeration(self):
        # explicit two-step law: child counts drawn per parent, summed
        off1 = law([((1, 0), 0.3), ((0, 1), 0.3), ((2, 0), 0.4)])
        off2 = law([((0, 1), 0.5), ((1, 1), 0.5)])
        D = 8
        inner1 = series.from_pmf(off1, D)
        inner2 = series.from_pmf(off2, D)
        comp = series.compose_law(off1, inner1, inner2)

        want = np.zeros((D + 1, D + 1))
        for (a, b), w in zip(off1.atoms, off1.weights):
            # distribution of a type-1 children plus b type-2 children
            acc = np.zeros((D + 1, D + 1))
            acc[0, 0] = 1.0
            for _ in range(a):
                acc = conv2(acc, dense(off1, D))[: D + 1, : D + 1]
            for _ in range(b):
                acc = conv2(acc, dense(off2, D))[: D + 1, : D + 1]
            want += w * acc
        assert np.abs(comp.coef - want).max() < 1e-12

    def test_pgf_identity_at_point(self, spec_a):
        # f(g1(s), g2(s)) evaluated two ways
        D = 16
        inner1 = series.from_pmf(spec_a.offspring[0], D)
        inner2 = series.from_pmf(spec_a.offspring[1], D)
        comp = series.compose_law(spec_a.immigration, inner1, inner2)
        for s in ((0.3, 0.7), (0.9, 0.1), (0.5, 0.5)):
            direct = spec_a.immigration.pgf(
                spec_a.offspring[0].pgf(*s), spec_a.offspring[1].pgf(*s)
            )
            assert comp.evaluate(*s) == pytest.approx(direct, abs=comp.residual + 1e-12)


class TestIterateProcess:
    def test_step_zero_identity(self, spec_a):
        f_list, g_list = series.iterate_process(spec_a, 0, 6)
        assert f_list[0][0].coefficient(1, 0) == 1.0
        assert g_list[0][1].coefficient(0, 1) == 1.0

    def test_first_step_is_offspring_times_immigration(self, spec_a):
        D = 10
        _, g_list = series.iterate_process(spec_a, 1, D)
        want = conv2(dense(spec_a.offspring[0], D), dense(spec_a.immigration, D))
        assert np.abs(g_list[1][0].coef - want[: D + 1, : D + 1]).max() < 1e-14

    def test_recursion_identity_pointwise(self, spec_a):
        # one immigration factor and one offspring substitution advance n
        D = 30
        _, g_list = series.iterate_process(spec_a, 4, D)
        for s in ((0.2, 0.6), (0.7, 0.7)):
            f_s = (spec_a.offspring[0].pgf(*s), spec_a.offspring[1].pgf(*s))
            h_s = spec_a.immigration.pgf(*s)
            for n in (1, 2, 3):
                lhs = h_s * g_list[n][0].evaluate(*f_s)
                rhs = g_list[n + 1][0].evaluate(*s)
                slack = g_list[n + 1][0].residual + g_list[n][0].residual + 1e-12
                assert abs(lhs - rhs) <= slack

    def test_mass_accounting(self, spec_b):
        _, g_list = series.iterate_process(spec_b, 3, 20)
        for n in range(4):
            for i in range(2):
                g = g_list[n][i]
                assert g.stored_mass + g.residual == pytest.approx(1.0, abs=1e-12)

    def test_negative_n_rejected(self, spec_a):
        with pytest.raises(ValueError):
            series.iterate_process(spec_a, -1, 6)
