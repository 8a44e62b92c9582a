"""Perron data, Jacobian power limits, and the mean-ratio gap."""

import numpy as np
import pytest

from bpimm.model import Pmf2, ModelSpec
from bpimm import spectral


class TestPerron:
    @pytest.mark.parametrize(
        "M,rho",
        [([[1.0, 1.0], [1.0, 1.0]], 2.0), ([[1.0, 2.0], [2.0, 1.0]], 3.0)],
    )
    def test_symmetric_cases_exact(self, M, rho):
        M = np.array(M)
        got_rho, u, v = spectral.perron(M)
        assert abs(got_rho - rho) <= 1e-10
        assert np.abs(M @ u - got_rho * u).max() <= 1e-10
        assert np.abs(v @ M - got_rho * v).max() <= 1e-10
        assert abs(u.sum() - 1.0) <= 1e-12
        assert abs(v @ u - 1.0) <= 1e-12
        assert np.allclose(u, [0.5, 0.5], atol=1e-10)
        assert np.allclose(v, [1.0, 1.0], atol=1e-10)

    def test_fixture_means(self, spec_a, spec_b):
        rho_a, _, _ = spectral.perron(spec_a.mean_matrix)
        rho_b, _, _ = spectral.perron(spec_b.mean_matrix)
        assert rho_a == pytest.approx(1.6, abs=1e-10)
        assert rho_b == pytest.approx(2.55, abs=1e-10)

    def test_scaling_invariance(self):
        M = np.array([[1.3, 0.4], [0.7, 2.1]])
        rho, u, v = spectral.perron(M)
        rho_c, u_c, v_c = spectral.perron(3.7 * M)
        assert rho_c == pytest.approx(3.7 * rho, rel=1e-9)
        assert np.allclose(u, u_c, atol=1e-9)
        assert np.allclose(v, v_c, atol=1e-9)

    def test_reducible_rejected(self):
        with pytest.raises(spectral.SpectralError):
            spectral.perron(np.eye(2))

    def test_negative_rejected(self):
        with pytest.raises(spectral.SpectralError):
            spectral.perron(np.array([[1.0, -0.1], [0.2, 1.0]]))


class TestGammaP0:
    def test_fixture_a_jacobian(self, spec_a):
        A = spec_a.jacobian_zero
        lim = spectral.gamma_p0(A)
        assert lim.ok
        assert lim.gamma == pytest.approx(0.4, abs=1e-10)
        # oracle: scale a large explicit matrix power instead
        direct = np.linalg.matrix_power(A / lim.gamma, 40)
        assert np.abs(lim.p0 - direct).max() < 1e-9

    def test_zero_matrix(self):
        lim = spectral.gamma_p0(np.zeros((2, 2)))
        assert not lim.ok
        assert "zero" in lim.note

    def test_oscillating_powers(self):
        lim = spectral.gamma_p0(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert not lim.ok


class TestAnalyze:
    def test_fixture_a(self, spec_a, spectral_a):
        d = spectral_a
        assert d.rho == pytest.approx(1.6, abs=1e-10)
        assert np.allclose(d.u, [0.5, 0.5], atol=1e-10)
        assert np.allclose(d.v, [1.0, 1.0], atol=1e-10)
        assert d.gamma == pytest.approx(0.4, abs=1e-10)
        assert d.jacobian_ok

    def test_fixture_b(self, spectral_b):
        assert spectral_b.rho == pytest.approx(2.55, abs=1e-10)
        assert not spectral_b.jacobian_ok

    def test_as_dict_serializes(self, spectral_a):
        import json

        json.dumps(spectral_a.as_dict())


class TestMeanRatioSup:
    def test_decreases_on_a(self, spec_a, spectral_a):
        grid = [(a, b) for a in range(1, 6) for b in range(1, 6)]
        g5 = spectral.mean_ratio_sup(spec_a, spectral_a, 5, grid)
        g15 = spectral.mean_ratio_sup(spec_a, spectral_a, 15, grid)
        assert g15 < g5

    def test_eigen_aligned_exactly_zero(self):
        one = Pmf2.from_pairs([((1, 1), 1.0)])
        spec = ModelSpec(offspring=(one, one), immigration=one, name="aligned")
        d = spectral.analyze(spec)
        grid = [(a, b) for a in range(1, 21) for b in range(1, 21)]
        assert spectral.mean_ratio_sup(spec, d, 10, grid) == 0.0

    def test_needs_supercritical(self, critical_spec):
        d = spectral.analyze(critical_spec)
        with pytest.raises(spectral.SpectralError):
            spectral.mean_ratio_sup(critical_spec, d, 5, [(1, 1)])

    def test_empty_grid(self, spec_a, spectral_a):
        with pytest.raises(ValueError):
            spectral.mean_ratio_sup(spec_a, spectral_a, 5, [])
