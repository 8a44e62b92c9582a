"""Command-line surface: validate, spectral, exact, simulate, verdicts.

Reports are emitted as JSON (sorted keys) and RFC-style CSV so reruns
with the same seed and config are byte-identical.  Exit status is 0
even when hypotheses or verdicts fail; only malformed input exits
nonzero (2).
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import devlab, limits, series, simulate, spectral as spectral_mod
from .model import TheoremDisabledError, ValidationError, load_model, validate


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    # bool first: Python bools are ints and would serialize as 0/1
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _dump_json(obj, path=None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def cmd_validate(args):
    spec = load_model(args.model)
    report = validate(spec, growth_exponent=args.growth_exponent)
    d = report.as_dict()
    for key in (
        "no_death",
        "positively_regular",
        "supercritical",
        "imm_zero_positive",
        "jacobian_ok",
        "offspring_axis",
        "offspring_floor",
        "imm_axis",
        "imm_floor",
        "growth_product_gt1",
    ):
        print(f"{key:24s} {d[key]}")
    _dump_json(d, args.out)
    return 0


def cmd_spectral(args):
    spec = load_model(args.model)
    data = spectral_mod.analyze(spec)
    print(f"rho    {data.rho:.12g}")
    print(f"u      {data.u[0]:.12g} {data.u[1]:.12g}")
    print(f"v      {data.v[0]:.12g} {data.v[1]:.12g}")
    if data.jacobian_ok:
        print(f"gamma  {data.gamma:.12g}")
    else:
        print("gamma  unavailable (scaled Jacobian powers have no positive limit)")
    _dump_json(data.as_dict(), args.out)
    return 0


def cmd_exact(args):
    spec = load_model(args.model)
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    n_max = args.n_max
    D = args.degree_cap
    _, g_list = series.iterate_process(spec, n_max, D)
    rows = []
    for n, pair in enumerate(g_list):
        g1 = pair[0]
        res = g1.residual
        nz = np.argwhere(g1.coef > 0)
        for j1, j2 in nz:
            rows.append([n, int(j1), int(j2), repr(float(g1.coef[j1, j2])), repr(res)])
    if outdir:
        _write_csv(outdir / "pmf.csv", ["n", "j1", "j2", "p", "truncation_residual"], rows)
    print(f"pmf table: start type 1, {n_max + 1} generations, degree cap {D}, "
          f"final truncation residual {g_list[-1][0].residual:.3e}")

    spectral = None
    try:
        spectral = spectral_mod.analyze(spec)
    except (spectral_mod.SpectralError, spectral_mod.NumericError) as exc:
        print(f"spectral data unavailable: {exc}")
    if spectral is not None and spectral.jacobian_ok and spec.imm_zero_p > 0:
        rc = limits.r_coeffs(spec, spectral, n=max(n_max, 10), D=D)
        rrows = []
        for i in range(2):
            nz = np.argwhere(rc.r[i] > 0)
            for j1, j2 in nz:
                rrows.append(
                    [
                        i + 1,
                        int(j1),
                        int(j2),
                        repr(float(rc.r[i, j1, j2])),
                        repr(float(rc.rel_change[i, j1, j2])),
                    ]
                )
        if outdir:
            _write_csv(
                outdir / "rate_coeffs.csv",
                ["start_type", "j1", "j2", "r", "rel_change"],
                rrows,
            )
        print(f"limit coefficients at n={rc.n}, scaled residual mass "
              f"{float(np.max(rc.residual_mass)):.3e}")
        if args.l is not None and args.eps is not None:
            sums = limits.theorem1_sums(
                spec, spectral, args.eps, np.asarray(args.l, dtype=float),
                D=D, n=max(n_max, 6), k0=args.k0,
            )
            payload = {
                "sum_next": sums.sum_next.tolist(),
                "sum_ratio": sums.sum_ratio.tolist(),
                "remainder": sums.remainder.tolist(),
                "k0": sums.k0,
                "n": sums.n,
                "degree_cap": sums.D,
                "eps": args.eps,
                "l": list(args.l),
            }
            if outdir:
                _dump_json(payload, outdir / "sums.json")
            print(
                "deviation-limit sums: "
                f"next {sums.sum_next[0]:.6g} (+-{sums.remainder[0]:.2g}), "
                f"ratio {sums.sum_ratio[0]:.6g}"
            )
    else:
        print("rate-coefficient table skipped: geometric-regime hypotheses fail")
    return 0


def cmd_simulate(args):
    spec = load_model(args.model)
    if args.seed is None:
        raise ValidationError("--seed is mandatory for simulation commands")
    spectral = None
    try:
        spectral = spectral_mod.analyze(spec)
    except (spectral_mod.SpectralError, spectral_mod.NumericError):
        pass
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    if args.statistic is None:
        traj = simulate.simulate_path(
            spec,
            args.n_max,
            x0=tuple(args.x0),
            seed=args.seed,
            track_split=True,
            spectral=spectral if (spectral and spectral.rho > 1) else None,
        )
        rows = []
        for g in range(len(traj.states)):
            y = "" if traj.y is None else repr(float(traj.y[g]))
            rows.append(
                [
                    g,
                    int(traj.states[g, 0]),
                    int(traj.states[g, 1]),
                    int(traj.z_states[g, 0]),
                    int(traj.z_states[g, 1]),
                    y,
                ]
            )
        if outdir:
            _write_csv(outdir / "trajectory.csv", ["gen", "x1", "x2", "z1", "z2", "y"], rows)
        last = traj.states[-1]
        print(
            f"trajectory: {args.n_max} generations, final state ({last[0]}, {last[1]})"
            + ("" if traj.y is None else f", Y={traj.y[-1]:.6f}")
        )
        return 0
    if spectral is None:
        raise ValidationError("statistic estimation needs Perron data; model has none")
    params = {"n": args.n_max, "eps": args.eps, "x0": tuple(args.x0)}
    if args.l is not None:
        params["l"] = np.asarray(args.l, dtype=float)
    if args.n_ref is not None:
        params["n_ref"] = args.n_ref
    if args.alpha_quantile is not None:
        params["alpha_quantile"] = args.alpha_quantile
    est = simulate.estimate_event(
        spec, spectral, args.statistic, params, args.reps, args.seed, workers=args.workers
    )
    if args.statistic in ("dev-next", "dev-ratio") and args.l is not None:
        l = np.asarray(args.l, dtype=float)
        if l[0] == l[1]:
            print("warning: weight vector with equal entries projects out the deviation")
    payload = est.as_dict()
    if outdir:
        _dump_json(payload, outdir / "estimate.json")
    print(
        f"{est.statistic} at n={est.n}: {est.estimate:.6g} "
        f"(se {est.se:.2g}, 95% CI [{est.ci_low:.6g}, {est.ci_high:.6g}], reps {est.reps})"
    )
    if not outdir:
        _dump_json(payload)
    return 0


def cmd_verdicts(args):
    spec = load_model(args.model)
    if args.seed is None:
        raise ValidationError("--seed is mandatory for the verdict battery")
    data = spectral_mod.analyze(spec)
    cfg = {"seed": args.seed, "reps": args.reps, "workers": args.workers}
    if args.l is not None:
        cfg["l"] = tuple(args.l)
    if args.eps is not None:
        cfg["eps_next"] = cfg["eps_ratio"] = cfg["eps_tail"] = args.eps
    if args.eps_next is not None:
        cfg["eps_next"] = args.eps_next
    if args.eps_ratio is not None:
        cfg["eps_ratio"] = args.eps_ratio
    if args.eps_tail is not None:
        cfg["eps_tail"] = args.eps_tail
    if args.alpha_quantile is not None:
        cfg["alpha_quantile"] = args.alpha_quantile
    if args.beta is not None:
        cfg["beta"] = args.beta
    if args.k0 is not None:
        cfg["k0"] = args.k0
    if args.degree_cap is not None:
        cfg["degree_cap"] = args.degree_cap
    cfg["growth_exponent"] = args.growth_exponent
    verdict_list, fit_list, record = devlab.verdicts(spec, data, cfg)
    cfg["growth_exponent"] = record["growth_exponent_used"]
    report = devlab.assemble_report(spec, data, verdict_list, fit_list, cfg)
    print(f"{'theorem':22s} {'statistic':16s} {'predicted':>14s} {'measured':>12s}  status")
    for v in verdict_list:
        print(
            f"{v.theorem:22s} {v.statistic:16s} {_fmt(v.predicted):>14s} "
            f"{_fmt(v.measured):>12s}  {v.status}"
            + (f"  ({v.note})" if v.status == "skipped" else "")
        )
    _dump_json(report, args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="bpimm",
        description="Two-type branching process with immigration: exact "
        "generating-function tables, seeded simulation, and decay-rate verdicts.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=False):
        sp.add_argument("--model", required=True, help="model file (TOML)")
        sp.add_argument("--out", default=None, help="output file or directory")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="PRNG seed (required)")
            sp.add_argument("--workers", type=int, default=1, help="parallel workers")

    sp = sub.add_parser("validate", help="evaluate theorem hypotheses on a model")
    common(sp)
    sp.add_argument("--growth-exponent", type=float, default=1.0,
                    help="exponent d in the growth product h0*gamma*rho^d")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("spectral", help="Perron data and the Jacobian-power limit")
    common(sp)
    sp.set_defaults(fn=cmd_spectral)

    sp = sub.add_parser("exact", help="truncated-series pmf and limit tables")
    common(sp)
    sp.add_argument("--n-max", type=int, default=6)
    sp.add_argument("--degree-cap", type=int, default=limits.DEFAULT_D)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--l", type=float, nargs=2, default=None, metavar=("L1", "L2"))
    sp.add_argument("--k0", type=int, default=None)
    sp.set_defaults(fn=cmd_exact)

    sp = sub.add_parser("simulate", help="trajectories and tail-event estimates")
    common(sp, seed=True)
    sp.add_argument("--n-max", type=int, default=10)
    sp.add_argument("--reps", type=int, default=100_000)
    sp.add_argument("--statistic", choices=simulate.STATISTICS, default=None,
                    help="omit for a single split trajectory")
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--l", type=float, nargs=2, default=None, metavar=("L1", "L2"))
    sp.add_argument("--x0", type=int, nargs=2, default=(1, 0), metavar=("X1", "X2"))
    sp.add_argument("--n-ref", type=int, default=None)
    sp.add_argument("--alpha-quantile", type=float, default=None)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("verdicts", help="full decay-rate verdict battery")
    common(sp, seed=True)
    sp.add_argument("--reps", type=int, default=100_000)
    sp.add_argument("--l", type=float, nargs=2, default=None, metavar=("L1", "L2"))
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--eps-next", type=float, default=None)
    sp.add_argument("--eps-ratio", type=float, default=None)
    sp.add_argument("--eps-tail", type=float, default=None)
    sp.add_argument("--alpha-quantile", type=float, default=None)
    sp.add_argument("--beta", type=float, default=None)
    sp.add_argument("--k0", type=int, default=None)
    sp.add_argument("--degree-cap", type=int, default=None)
    sp.add_argument("--growth-exponent", type=float, default=None,
                    help="exponent d in the growth check; default picks the "
                    "smallest integer that can satisfy it")
    sp.set_defaults(fn=cmd_verdicts)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, TheoremDisabledError, limits.ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (spectral_mod.SpectralError, spectral_mod.NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
