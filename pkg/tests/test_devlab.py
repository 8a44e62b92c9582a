"""Rate fitting, trend testing, and verdict gating."""

import json

import numpy as np
import pytest

from bpimm.model import validate
from bpimm import devlab


def geometric_points(c, base, ns, se=None):
    return [(n, c * base**n, se) for n in ns]


class TestFitGeometric:
    def test_noiseless_exact(self):
        fit = devlab.fit_geometric(geometric_points(0.7, 0.12, range(1, 8)))
        assert fit.base == pytest.approx(0.12, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(2024)
        pts = [
            (n, 0.7 * 0.12**n * float(np.exp(rng.normal(0, 0.05))), None)
            for n in range(1, 9)
        ]
        fit = devlab.fit_geometric(pts)
        assert 0.11 <= fit.base <= 0.13

    def test_scale_invariance(self):
        a = devlab.fit_geometric(geometric_points(0.3, 0.45, range(2, 9)))
        b = devlab.fit_geometric(geometric_points(0.3 * 17.0, 0.45, range(2, 9)))
        assert abs(a.base - b.base) < 1e-12

    def test_too_few_points(self):
        with pytest.raises(devlab.FitError):
            devlab.fit_geometric(geometric_points(0.5, 0.3, range(3)))

    def test_zero_points_dropped_and_reported(self):
        pts = geometric_points(0.5, 0.3, range(1, 7))
        pts[4] = (5, 0.0, None)
        fit = devlab.fit_geometric(pts)
        assert [n for n, _ in fit.dropped] == [5]
        assert fit.base == pytest.approx(0.3, abs=1e-9)

    def test_wide_interval_gated(self):
        pts = [(n, 0.5 * 0.3**n, 0.5 * 0.3**n * 0.5) for n in range(1, 7)]
        with pytest.raises(devlab.FitError):
            devlab.fit_geometric(pts)


class TestFitSupergeometric:
    def test_noiseless_exact(self):
        pts = [(n, 0.9 ** (2.0**n), None) for n in range(1, 7)]
        fit = devlab.fit_supergeometric(pts)
        assert fit.base == pytest.approx(2.0, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)

    def test_intercept_absorbs_prefactor(self):
        pts = [(n, 0.5 * 0.8 ** (3.0**n), None) for n in range(1, 9)]
        fit = devlab.fit_supergeometric(pts)
        assert fit.base == pytest.approx(3.0, rel=0.02)

    def test_probability_one_rejected(self):
        pts = [(1, 1.0, None)] + [(n, 0.5 ** (2.0**n), None) for n in range(2, 6)]
        with pytest.raises(ValueError):
            devlab.fit_supergeometric(pts)

    def test_zeros_excluded(self):
        pts = [(n, 0.9 ** (2.0**n), None) for n in range(1, 7)]
        pts[5] = (6, 0.0, None)
        fit = devlab.fit_supergeometric(pts)
        assert [n for n, _ in fit.dropped] == [6]
        assert fit.base == pytest.approx(2.0, abs=1e-9)


class TestMannKendall:
    def test_small_case_by_hand(self):
        # values 1,3,2,4: S = (+1+1+1) + (-1+1) + (+1) = 4
        t = devlab.mann_kendall([1.0, 3.0, 2.0, 4.0])
        assert t.s == 4
        var = 4 * 3 * (2 * 4 + 5) / 18.0
        assert t.z == pytest.approx((4 - 1) / np.sqrt(var))

    def test_strictly_increasing_flags(self):
        t = devlab.mann_kendall(list(np.linspace(1.0, 2.0, 12)))
        assert t.upward

    def test_alternating_does_not(self):
        t = devlab.mann_kendall([1.0, 0.9, 1.1, 0.95, 1.05, 0.9, 1.1, 0.97])
        assert not t.upward


class TestGating:
    def test_all_pass_gate_empty(self, spec_a):
        rep = validate(spec_a, growth_exponent=4.0)
        assert devlab.gate("geometric-next", rep) == []
        assert devlab.gate("conditional-next", rep) == []

    def test_geometric_gated_off_on_b(self, spec_b):
        rep = validate(spec_b)
        missing = devlab.gate("geometric-next", rep)
        assert "imm_zero_positive" in missing

    def test_supergeometric_gated_off_on_a(self, spec_a):
        rep = validate(spec_a)
        assert "offspring_floor" in devlab.gate("supergeometric-next", rep)

    def test_gating_is_declarative(self, spec_a):
        # flipping a flag on the report changes the gate with no rerun
        rep = validate(spec_a)
        before = devlab.gate("supergeometric-next", rep)
        rep.offspring_floor = True
        rep.offspring_axis = True
        after = devlab.gate("supergeometric-next", rep)
        assert "offspring_floor" in before and after == []


class TestVerdictPlumbing:
    def test_every_gate_flag_exists_on_report(self, spec_a):
        rep = validate(spec_a)
        for flags in devlab.GATE_FLAGS.values():
            for f in flags:
                assert hasattr(rep, f)

    def test_skip_verdicts_on_b_battery(self, spec_b, spectral_b):
        cfg = dict(devlab.DEFAULT_CONFIG)
        cfg.update(
            reps=4000,
            trend_reps=500,
            n_trend=6,
            ns_super=(1, 2, 3, 4),
            ns_tail=(1, 2, 3, 4),
            eps_next=0.1,
            eps_ratio=0.15,
            eps_tail=0.05,
        )
        vs, fits, record = devlab.verdicts(spec_b, spectral_b, cfg)
        by = {v.theorem: v for v in vs}
        assert by["geometric-next"].status == "skipped"
        assert "skipped" in by["geometric-next"].note
        assert by["supergeometric-next"].status in ("pass", "fail")
        assert by["mean-ratio-limit"].status == "pass"

    def test_report_assembles_to_json(self, spec_a, spectral_a):
        cfg = dict(devlab.DEFAULT_CONFIG)
        cfg.update(
            reps=4000,
            trend_reps=500,
            n_trend=6,
            ns_super=(1, 2, 3),
            ns_tail=(1, 2, 3),
        )
        vs, fits, record = devlab.verdicts(spec_a, spectral_a, cfg)
        cfg["growth_exponent"] = record["growth_exponent_used"]
        rep = devlab.assemble_report(spec_a, spectral_a, vs, fits, cfg)
        for key in ("model", "spectral", "hypotheses", "verdicts", "fits", "config"):
            assert key in rep
        dumped = json.dumps(rep, sort_keys=True)
        assert "geometric-next" in dumped

    def test_growth_exponent_auto_selected(self, spec_a, spectral_a):
        cfg = dict(devlab.DEFAULT_CONFIG)
        cfg.update(
            reps=4000,
            trend_reps=500,
            n_trend=4,
            ns_super=(1, 2, 3),
            ns_tail=(1, 2, 3),
            growth_exponent=None,
        )
        vs, _, record = devlab.verdicts(spec_a, spectral_a, cfg)
        # 0.2 * 1.6^d crosses 1 at d = 4
        assert record["growth_exponent_used"] == 4.0
        growth = next(v for v in vs if v.theorem == "geometric-growth")
        assert growth.status == "pass"
