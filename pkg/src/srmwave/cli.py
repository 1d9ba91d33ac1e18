"""srmwave command line.

    srmwave solve    --model example --rpm 1000 --torque 10 --alpha 3 -T 40 --out run/
    srmwave sweep    --model example --rpm 0:4000:5 --torque 0:15:5 -T 20 --table lut.json
    srmwave plotdata run/waveform.csv --out plots/
    srmwave fit      --model example -T 40 --out pwa.json
    srmwave verify   run/waveform.csv --model example

Exit codes: 0 optimal (gap within tolerance), 1 error, 2 infeasible,
3 time/node limit reached.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bnb
from .lut import (RPM, LutError, SweepSettings, default_breakpoints, read_waveform_csv, solve_point, sweep,
                  write_plotdata, write_waveform_csv)
from .modelfile import MODEL_PATH_ENV, model_hash, resolve_model
from .motor import ModelError
from .pwa import export_curves_csv, fit_model, implied_torque_mismatch
from .transcription import Grid, waveform_metrics
from .verify import evaluate_waveforms, glue_mismatch

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3

log = logging.getLogger("srmwave")


def parse_grid(text: str) -> list[float]:
    """``a:b:n`` (n evenly spaced values, ends included) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range {text!r} must be start:stop:count")
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise argparse.ArgumentTypeError("range count must be >= 1")
        return np.linspace(a, b, n).tolist()
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as numbers") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


def _breakpoints(text):
    return tuple(parse_grid(text)) if text else None


def _config(args) -> bnb.BnbConfig:
    return bnb.BnbConfig(gap_tol=args.gap_tol, time_limit=args.time_limit, perspective_on=not args.no_perspective,
                         workers=args.workers, log_every=args.log_every)


def _add_model(p):
    p.add_argument("--model", default="example",
                   help=f"built-in name (example, toy) or model JSON; searched along ${MODEL_PATH_ENV}")


def _add_problem(p, T_default):
    p.add_argument("--alpha", type=float, default=3.0, help="ripple weight (W per N^2 m^2)")
    p.add_argument("-T", "--grid", dest="T", type=int, default=T_default, help="grid points per reduced interval")
    p.add_argument("--breakpoints", help="PWA breakpoints in At, comma list (default from the model)")
    p.add_argument("--gap-tol", type=float, default=1e-3, help="relative optimality gap tolerance")
    p.add_argument("--time-limit", type=float, default=None, help="seconds (per cell for sweeps)")
    p.add_argument("--no-perspective", action="store_true", help="disable perspective cuts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log-every", type=int, default=100, help="progress line every N nodes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srmwave", description="Optimal SRM current waveforms.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", help="solve one operating point")
    _add_model(p)
    p.add_argument("--rpm", type=float, required=True, help="rotor speed, rpm")
    p.add_argument("--torque", type=float, required=True, help="desired average torque, N m")
    _add_problem(p, 40)
    p.add_argument("--out", default=".", help="output directory for waveform.csv and summary.json")

    p = sub.add_parser("sweep", help="build a (speed, torque) lookup table")
    _add_model(p)
    p.add_argument("--rpm", type=parse_grid, required=True, help="speeds in rpm: a:b:n or comma list")
    p.add_argument("--torque", type=parse_grid, required=True, help="torques in N m: a:b:n or comma list")
    _add_problem(p, 20)
    p.set_defaults(time_limit=60.0)
    p.add_argument("--table", required=True, help="lookup table JSON (resumed when it exists)")

    p = sub.add_parser("plotdata", help="unfold a waveform file into per-quantity plot tables")
    p.add_argument("waveform")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit the piecewise-affine characteristic")
    _add_model(p)
    p.add_argument("-T", "--grid", dest="T", type=int, default=40)
    p.add_argument("--breakpoints")
    p.add_argument("--out", required=True, help="PWA JSON")
    p.add_argument("--curves", help="also write sampled fit curves to this CSV")

    p = sub.add_parser("verify", help="re-evaluate a waveform file against the model")
    _add_model(p)
    p.add_argument("waveform")
    p.add_argument("--breakpoints", help="PWA breakpoints in At (default: those stored in the file)")
    p.add_argument("--tol", type=float, default=1e-6, help="tolerance on recomputed metrics")
    return ap


def _status_line(res, tol) -> tuple[str, int]:
    if res.status == "infeasible":
        return "infeasible", EXIT_INFEASIBLE
    if res.status == "optimal" and res.gap <= tol:
        return "optimal", EXIT_OK
    return "limit", EXIT_LIMIT


def cmd_solve(args) -> int:
    model = resolve_model(args.model)
    np.random.seed(args.seed)
    bp = _breakpoints(args.breakpoints) or default_breakpoints(model)
    omega = args.rpm * RPM
    cfg = _config(args)
    problem, res = solve_point(model, omega, args.torque, args.alpha, args.T, bp, cfg)
    word, code = _status_line(res, cfg.gap_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "status": word, "message": res.message, "rpm": args.rpm, "omega_rad_s": omega, "tau_des_Nm": args.torque,
        "alpha": args.alpha, "T": args.T, "breakpoints_At": list(bp), "model_hash": model_hash(model),
        "objective_W": res.upper_bound if np.isfinite(res.upper_bound) else None,
        "lower_bound_W": res.lower_bound if np.isfinite(res.lower_bound) else None,
        "gap": res.gap if np.isfinite(res.gap) else None, "gap_tol": cfg.gap_tol,
        "nodes": res.nodes, "wall_time_s": res.wall_time,
    }
    if res.incumbent is not None:
        sol = res.incumbent
        summary.update(avg_torque_Nm=sol.avg_torque, ripple_Nm2=sol.ripple, loss_W=sol.loss,
                       max_abs_v_V=sol.max_abs_v, min_current_A=float(sol.i.min()))
        write_waveform_csv(out / "waveform.csv", sol,
                           {"status": word, "gap": summary["gap"], "breakpoints_At": list(bp),
                            "model_hash": summary["model_hash"]})
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(f"status: {word}")
    if res.status == "infeasible":
        print(f"infeasible: {res.message}")
    else:
        print(f"objective: {res.upper_bound:.9g} W  lower bound: {res.lower_bound:.9g} W  gap: {res.gap:.3g}")
    if res.incumbent is not None:
        print(f"avg torque: {sol.avg_torque:.9g} N m  ripple: {sol.ripple:.6g} N^2 m^2  "
              f"loss: {sol.loss:.6g} W  max |v|: {sol.max_abs_v:.6g} V")
    return code


def cmd_sweep(args) -> int:
    model = resolve_model(args.model)
    cfg = _config(args)
    cfg.log_every = 10 ** 9
    settings = SweepSettings(alpha=args.alpha, T=args.T, breakpoints=_breakpoints(args.breakpoints),
                             config=cfg, seed=args.seed)

    def progress(c):
        gap = "n/a" if c["gap"] is None else f"{c['gap']:.3g}"
        print(f"{c['omega_rpm']:g} rpm  {c['tau_des_Nm']:g} N m  {c['status']}  gap {gap}"
              + ("  [flagged]" if c["flagged"] else ""), flush=True)

    table = sweep(model, args.rpm, args.torque, args.table, settings, workers=args.workers, progress=progress)
    cells = list(table.cells.values())
    errors = sum(c["status"] == "error" for c in cells)
    limits = sum(c["status"] == "limit" for c in cells)
    print(f"cells: {len(cells)}  flagged: {len(table.flagged())}  errors: {errors}  table: {table.path}")
    return EXIT_ERROR if errors else (EXIT_LIMIT if limits else EXIT_OK)


def cmd_plotdata(args) -> int:
    sol, _ = read_waveform_csv(args.waveform)
    for p in write_plotdata(sol, args.out):
        print(p)
    return EXIT_OK


def cmd_fit(args) -> int:
    model = resolve_model(args.model)
    bp = _breakpoints(args.breakpoints) or default_breakpoints(model)
    pwa = fit_model(model, Grid.for_model(model, args.T).theta, bp)
    Path(args.out).write_text(json.dumps(pwa.to_dict()))
    if args.curves:
        export_curves_csv(pwa, args.curves)
    print(f"regions: {pwa.n_regions}  angles: {pwa.n_angles}")
    print(f"max flux error: {pwa.f_max_error.max():.4g} Wb  max torque error: {pwa.g_max_error.max():.4g} N m")
    print(f"continuity error: {pwa.continuity_error():.3g}  implied torque mismatch: "
          f"{implied_torque_mismatch(pwa):.4g} N m")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = resolve_model(args.model)
    sol, meta = read_waveform_csv(args.waveform)
    bp = _breakpoints(args.breakpoints) or meta.get("breakpoints_At") or default_breakpoints(model)
    pwa = fit_model(model, Grid(sol.T, model.span).theta, bp)
    ev = evaluate_waveforms(model, sol, use_pwa=True, pwa=pwa)
    glue = glue_mismatch(sol)
    ok = abs(ev.objective - sol.objective) <= args.tol * max(1.0, abs(sol.objective)) and glue <= 1e-9 * max(
        1.0, float(np.abs(sol.lam).max(initial=0.0)))
    print(f"objective (file): {sol.objective:.9g}  recomputed (PWA): {ev.objective:.9g}  "
          f"with sampled torque: {waveform_metrics(sol.i, ev.tau_true, model.resistance, sol.alpha, sol.tau_des)[3]:.9g}")
    print(f"avg torque: {ev.avg_torque:.9g} N m  max |v|: {ev.max_abs_v:.6g} V  glue mismatch: {glue:.3g} Wb")
    print(f"PWA vs sampled torque: max {ev.torque_discrepancy:.4g} N m "
          f"(fit envelope {np.max(ev.torque_envelope):.4g} N m)")
    print("verify: " + ("pass" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "plotdata": cmd_plotdata, "fit": cmd_fit, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
    except (LutError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
