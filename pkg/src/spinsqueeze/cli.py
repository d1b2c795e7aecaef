"""Command-line front end: reproducible runs with artifacts on disk.

Each subcommand writes a trajectory or contour CSV, a JSON manifest with
the fully resolved configuration, code version and wall time, and a short
plain-text summary. Configs are flat key=value files whose keys mirror the
long option names; `run --config` re-dispatches a stored config or an
emitted manifest, so every manifest reproduces its run. CSV and summary
bytes depend only on the configuration and seed; the manifest's wall-time
field is the one intentionally non-reproducible output.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import paraxial, qnd_ode
from .protocols import ProtocolParams, simulate
from .spin_algebra import embedded_basis_for

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _add_protocol_params(p, with_nl=True):
    p.add_argument("--f", type=float, required=True, help="spin quantum number")
    p.add_argument("--od", type=float, help="optical density N_A*sigma0/A")
    p.add_argument("--na", type=float, help="atom number")
    p.add_argument("--sigma0-over-a", type=float,
                   help="scattering cross-section over beam area")
    p.add_argument("--gamma-over-delta", type=float, default=1e-3,
                   help="linewidth over detuning")
    p.add_argument("--dt-gamma", type=float, default=1e-3,
                   help="step in gamma_s*t")
    p.add_argument("--g-f", type=float, help="Faraday g factor (default 1/f)")
    p.add_argument("--xi-step", type=float,
                   help="per-step coupling for unit-normalized coherent runs")
    if with_nl:
        p.add_argument("--nl", type=float,
                       help="photons per probe pulse, recorded in the manifest")


def _params_from(args, with_nl=True):
    return ProtocolParams(
        f=args.f, od=args.od, n_a=args.na,
        sigma0_over_a=args.sigma0_over_a,
        gamma_over_delta=args.gamma_over_delta,
        dt_gamma=args.dt_gamma, g_f=args.g_f,
        n_l_pulse=args.nl if with_nl else None,
        xi_step=args.xi_step)


def _config_dict(args, parser_dests):
    cfg = {}
    for dest in parser_dests:
        if dest in ("func", "config"):
            continue
        val = getattr(args, dest, None)
        if val is None:
            continue
        cfg[dest] = val
    return cfg


def _write_artifacts(outdir, kind, cfg, extra, summary_lines, wall):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": kind, "version": __version__,
                "wall_time_s": round(wall, 3), "config": cfg}
    manifest.update(extra)
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2, default=float) + "\n")
    (out / "summary.txt").write_text("".join(f"{ln}\n" for ln in summary_lines))
    for ln in summary_lines:
        print(ln)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise RuntimeError("non-finite values in the result")


def _cmd_simulate(args):
    t0 = time.perf_counter()
    params = _params_from(args)
    if params.n_a is None or params.sigma0_over_a is None:
        raise ValueError("simulate needs two of --od, --na, --sigma0-over-a; "
                         "--xi-step only overrides the per-step coupling. "
                         "Use --gamma-s 0 for coherent-limit runs.")
    keep = {"keep": True, "drop": False, "auto": None}[args.keep_transfer]
    traj = simulate(args.protocol, args.prep, params, args.t_max,
                    target=args.target, keep_transfer=keep,
                    alpha=args.alpha, record_every=args.record_every,
                    gamma_s=args.gamma_s)
    _check_finite(traj.zeta_m)
    traj.to_csv(_ensure(args.outdir))
    cfg = _config_dict(args, vars(args))
    basis = embedded_basis_for(args.prep, params.f, alpha=args.alpha)
    physical = params.sigma0_over_a is not None
    extra = {"chi": params.chi if physical else None,
             "n_l_step": params.n_l if physical else None,
             "n_l_pulse": params.n_l_pulse,
             "xi_step": params.xi_for(basis),
             "keep_transfer_resolved": bool(traj.keep_transfer)}
    summary = [f"protocol {args.protocol} prep {args.prep} f {args.f:g} "
               f"target {args.target}",
               f"peak_dB {traj.peak_db:.6f}",
               f"t_peak_gamma {traj.t_peak:.6f}"]
    _write_artifacts(args.outdir, "simulate", cfg, extra, summary,
                     time.perf_counter() - t0)
    return EXIT_OK


def _ensure(outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out / "trajectory.csv"


def _cmd_ode(args):
    t0 = time.perf_counter()
    params = _params_from(args, with_nl=False)
    basis = embedded_basis_for(args.prep, params.f)
    coeffs = qnd_ode.build_coefficients(basis, params)
    traj = qnd_ode.integrate(args.prep, params, args.t_max,
                             target=args.target, n_samples=args.n_samples,
                             rtol=args.rtol, atol=args.atol)
    _check_finite(traj.zeta_m)
    traj.to_csv(_ensure(args.outdir))
    cfg = _config_dict(args, vars(args))
    extra = {"kappa_over_gamma": params.kappa_over_gamma,
             "dropped_population_terms": coeffs.dropped_population_terms()}
    summary = [f"ode prep {args.prep} f {args.f:g} target {args.target}",
               f"peak_dB {traj.peak_db:.6f}",
               f"t_peak_gamma {traj.t_peak:.6f}"]
    _write_artifacts(args.outdir, "ode", cfg, extra, summary,
                     time.perf_counter() - t0)
    return EXIT_OK


def _cmd_oracle_f1(args):
    t0 = time.perf_counter()
    params = _params_from(args, with_nl=False)
    traj = qnd_ode.exact_f1_reference(params, t_max=args.t_max,
                                      n_samples=args.n_samples)
    _check_finite(traj.zeta_m)
    traj.to_csv(_ensure(args.outdir))
    cfg = _config_dict(args, vars(args))
    summary = [f"oracle-f1 peak_dB {traj.peak_db:.6f}",
               f"t_peak_gamma {traj.t_peak:.6f}"]
    _write_artifacts(args.outdir, "oracle-f1", cfg, {}, summary,
                     time.perf_counter() - t0)
    return EXIT_OK


def _cmd_optimize(args):
    t0 = time.perf_counter()
    params = _params_from(args, with_nl=False)
    best = qnd_ode.optimize_fiducial(
        args.f, params, n_seeds=args.n_seeds, target=args.target,
        t_max=args.t_max, seed=args.seed, workers=args.workers,
        dt=args.dt, top_k=args.top_k)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    state = np.asarray(best["state"])
    record = {"f": args.f, "target": args.target,
              "peak_dB": best["peak_db"], "t_peak_gamma": best["t_peak"],
              "seed_index": best["seed_index"], "entropy": best["entropy"],
              "state_re": [float(x) for x in state.real],
              "state_im": [float(x) for x in state.imag]}
    (out / "optimum.json").write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n")
    rows = np.array([[s["seed_index"], s["zeta_scan"], s["iterations"]]
                     for s in best["seeds"]])
    np.savetxt(out / "seeds.csv", rows, fmt="%.12e", delimiter=",",
               header="seed_index,zeta_scan,iterations", comments="")
    cfg = _config_dict(args, vars(args))
    summary = [f"optimize f {args.f:g} seeds {args.n_seeds}",
               f"peak_dB {best['peak_db']:.6f}",
               f"t_peak_gamma {best['t_peak']:.6f}"]
    _write_artifacts(args.outdir, "optimize", cfg, {}, summary,
                     time.perf_counter() - t0)
    return EXIT_OK


def _parse_grid(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x != ""]
    except ValueError:
        raise ValueError(f"bad grid spec {text!r}; expected comma floats")
    if not vals:
        raise ValueError("empty grid spec")
    return vals


def _cmd_paraxial_scan(args):
    t0 = time.perf_counter()
    ars = _parse_grid(args.ar)
    waists = [w * 1e-4 for w in _parse_grid(args.w0_um)]
    rows = paraxial.geometry_scan(
        ars, waists, args.na, args.eta0, args.f, prep=args.prep,
        t_max=args.t_max, p_max=args.p_max, n_slices=args.n_slices,
        dt=args.dt, wavelength=args.wavelength_um * 1e-4,
        workers=args.workers)
    _check_finite([r["peak_db"] for r in rows])
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    paraxial.scan_to_csv(rows, out / "contour.csv")
    best = max(rows, key=lambda r: r["peak_db"])
    cfg = _config_dict(args, vars(args))
    summary = [f"paraxial-scan f {args.f:g} points {len(rows)}",
               f"best peak_dB {best['peak_db']:.6f} at AR {best['aspect_ratio']:g} "
               f"w0_um {best['w0_um']:.3f}",
               f"best od_eff {best['od_eff']:.6f}"]
    _write_artifacts(args.outdir, "paraxial-scan", cfg, {"n_points": len(rows)},
                     summary, time.perf_counter() - t0)
    return EXIT_OK


def _load_traj_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    if names is None or len(names) < 2:
        raise ValueError(f"{path}: not a trajectory CSV")
    tcol = names[0]
    dbcol = "zeta_m_dB" if "zeta_m_dB" in names else names[-1]
    return np.atleast_1d(data[tcol]), np.atleast_1d(data[dbcol])


def _cmd_compare(args):
    ta, dba = _load_traj_csv(args.run_a)
    tb, dbb = _load_traj_csv(args.run_b)
    lo, hi = max(ta.min(), tb.min()), min(ta.max(), tb.max())
    if hi <= lo:
        raise ValueError("time grids do not overlap")
    sel = (ta >= lo) & (ta <= hi)
    idx = np.searchsorted(tb, ta[sel])
    idx = np.clip(idx, 0, tb.size - 1)
    left = np.clip(idx - 1, 0, tb.size - 1)
    nearer = np.where(np.abs(tb[idx] - ta[sel])
                      <= np.abs(tb[left] - ta[sel]), idx, left)
    diff = np.abs(dba[sel] - dbb[nearer])
    peak_a, peak_b = float(np.max(dba)), float(np.max(dbb))
    lines = [f"overlap t [{lo:.6g}, {hi:.6g}] points {int(sel.sum())}",
             f"max_abs_dB_diff {float(diff.max()):.6f}",
             f"peak_dB_a {peak_a:.6f}",
             f"peak_dB_b {peak_b:.6f}",
             f"peak_dB_diff {abs(peak_a - peak_b):.6f}"]
    text = "".join(f"{ln}\n" for ln in lines)
    if args.output:
        Path(args.output).write_text(text)
    print(text, end="")
    return EXIT_OK


def _cmd_run(args):
    path = Path(args.config)
    if not path.exists():
        raise ValueError(f"config file not found: {path}")
    if path.suffix == ".json":
        blob = json.loads(path.read_text())
        cfg = dict(blob.get("config", blob))
        kind = blob.get("kind", cfg.get("kind"))
    else:
        cfg = {}
        for raw in path.read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (need key=value): {line!r}")
            key, val = line.split("=", 1)
            cfg[key.strip()] = val.strip()
        kind = cfg.get("kind")
    cfg.pop("kind", None)
    if kind is None:
        raise ValueError("config is missing the 'kind' key")
    argv = [str(kind)]
    for key, val in sorted(cfg.items()):
        if val is None:
            continue
        if isinstance(val, bool):
            val = str(val).lower()
        elif isinstance(val, (list, tuple)):
            val = ",".join(str(x) for x in val)
        argv.append(f"--{str(key).replace('_', '-')}={val}")
    argv.extend(args.overrides)
    return main(argv)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spinsqueeze",
        description="Collective spin squeezing simulations")
    sub = parser.add_subparsers(dest="kind", required=True)

    p = sub.add_parser("simulate", help="plane-wave protocol run")
    _add_protocol_params(p)
    p.add_argument("--protocol", required=True,
                   choices=("qnd", "double_pass", "eraser", "phase_matching"))
    p.add_argument("--prep", default="scs")
    p.add_argument("--target", default="scs",
                   choices=("scs", "yurke", "half_yurke"))
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--keep-transfer", default="auto",
                   choices=("keep", "drop", "auto"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--gamma-s", type=float, default=1.0)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ode", help="continuous-probing covariance ODE run")
    _add_protocol_params(p, with_nl=False)
    p.add_argument("--prep", default="scs")
    p.add_argument("--target", default="scs")
    p.add_argument("--t-max", type=float, default=2.5)
    p.add_argument("--n-samples", type=int, default=801)
    p.add_argument("--rtol", type=float, default=qnd_ode.RTOL)
    p.add_argument("--atol", type=float, default=qnd_ode.ATOL)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=_cmd_ode)

    p = sub.add_parser("oracle-f1", help="exact f=1 reference trajectory")
    _add_protocol_params(p, with_nl=False)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--n-samples", type=int, default=1601)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=_cmd_oracle_f1)

    p = sub.add_parser("optimize", help="fiducial-state search")
    _add_protocol_params(p, with_nl=False)
    p.add_argument("--target", default="scs")
    p.add_argument("--t-max", type=float, default=2.5)
    p.add_argument("--dt", type=float, default=4e-3)
    p.add_argument("--n-seeds", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("paraxial-scan", help="focused-probe geometry scan")
    p.add_argument("--f", type=float, required=True)
    p.add_argument("--prep", default="scs")
    p.add_argument("--na", type=float, required=True)
    p.add_argument("--eta0", type=float, required=True,
                   help="peak density in cm^-3")
    p.add_argument("--ar", required=True,
                   help="aspect-ratio grid, comma-separated")
    p.add_argument("--w0-um", required=True,
                   help="waist grid in microns, comma-separated")
    p.add_argument("--wavelength-um", type=float,
                   default=paraxial.LAMBDA_D2 * 1e4)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--p-max", type=int, default=6)
    p.add_argument("--n-slices", type=int, default=61)
    p.add_argument("--dt", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=_cmd_paraxial_scan)

    p = sub.add_parser("compare", help="diff two trajectory CSVs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("run", help="dispatch a stored config or manifest")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if extras and getattr(args, "kind", None) != "run":
            parser.error(f"unrecognized arguments: {' '.join(extras)}")
        args.overrides = extras
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
