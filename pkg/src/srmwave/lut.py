"""Waveform CSV files, plot-data bundles and (speed, torque) lookup tables.

A waveform file is plain CSV preceded by comment lines: the version tag, then
``# key: <json>`` metadata (operating point, symmetry, metrics). Column
headers carry units. Lookup tables are JSON (format tag ``srm-lut/1``) with
one waveform CSV per solved cell in a sibling ``<table>.cells`` directory.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import bnb
from .modelfile import model_hash
from .motor import MotorModel
from .pwa import PwaCharacteristic, fit_model
from .transcription import Grid, WaveformSolution, transcribe, waveform_metrics
from .verify import unfold

WAVEFORM_TAG = "# srmwave-waveform v1"
TABLE_FORMAT = "srm-lut/1"
RPM = 2.0 * math.pi / 60.0  # rad/s per rpm

# family, unit, symmetry used when unfolding
_FAMILIES = (("i", "A", "winding"), ("v", "V", "winding"), ("lam", "Wb", "winding"),
             ("F", "At", "element"), ("psi", "Wb", "element"), ("phi", "Wb", "mesh"))


class LutError(ValueError):
    pass


def default_breakpoints(model: MotorModel) -> tuple[float, ...]:
    """Breakpoints stored with the model, else four regions at 0, 1/6, 1/3 and
    7/12 of the sampled MMF range."""
    bp = model.notes.get("breakpoints") if model.notes else None
    if bp is not None:
        return tuple(float(b) for b in bp)
    top = float(model.flux[0].mmf_grid[-1])
    return (0.0, top / 6, top / 3, 7 * top / 12, top)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# waveform CSV
def waveform_columns(n: int, m: int, l: int) -> list[str]:
    size = {"winding": n, "element": m, "mesh": l}
    cols = ["t_s", "theta_rad"]
    for fam, unit, kind in _FAMILIES:
        cols += [f"{fam}_{j + 1}_{unit}" for j in range(size[kind])]
    return cols + ["tau_Nm"]


def _metadata(sol: WaveformSolution) -> dict:
    return {
        "omega_rad_s": sol.omega, "tau_des_Nm": sol.tau_des, "alpha": sol.alpha, "span_rad": sol.span,
        "pole_pairs": sol.pole_pairs, "phase_count": sol.phase_count,
        "winding_perm": list(sol.winding_perm), "element_perm": list(sol.element_perm),
        "mesh_perm": list(sol.mesh_perm),
        "resistance_ohm": np.asarray(sol.resistance).tolist(),
        "avg_torque_Nm": sol.avg_torque, "ripple_Nm2": sol.ripple, "loss_W": sol.loss,
        "objective": sol.objective, "max_abs_v_V": sol.max_abs_v,
    }


def waveform_text(sol: WaveformSolution, extra: dict | None = None) -> str:
    n, m, l = sol.i.shape[1], sol.F.shape[1], sol.phi.shape[1]
    buf = io.StringIO()
    buf.write(WAVEFORM_TAG + "\n")
    for k, v in {**_metadata(sol), **(extra or {})}.items():
        buf.write(f"# {k}: {json.dumps(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(waveform_columns(n, m, l))
    t = sol.theta / sol.omega if sol.omega > 0 else np.full(sol.T, np.nan)
    data = np.column_stack([t, sol.theta, sol.i, sol.v, sol.lam, sol.F, sol.psi, sol.phi, sol.tau])
    for row in data:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_waveform_csv(path, sol: WaveformSolution, extra: dict | None = None) -> None:
    _atomic_write(path, waveform_text(sol, extra))


def _count(header, fam, unit):
    pre, suf = f"{fam}_", f"_{unit}"
    return sum(1 for h in header if h.startswith(pre) and h.endswith(suf) and h[len(pre):-len(suf)].isdigit())


def read_waveform_csv(path) -> tuple[WaveformSolution, dict]:
    """Parse a waveform file; returns the solution (metrics recomputed) and all metadata."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != WAVEFORM_TAG:
        raise LutError(f"{path}: line 1: expected {WAVEFORM_TAG!r}")
    meta = {}
    k = 1
    while k < len(lines) and lines[k].startswith("#"):
        key, sep, val = lines[k][1:].partition(":")
        if not sep:
            raise LutError(f"{path}: line {k + 1}: metadata line needs 'key: value'")
        try:
            meta[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            raise LutError(f"{path}: line {k + 1}: metadata value is not JSON") from None
        k += 1
    for key in ("omega_rad_s", "tau_des_Nm", "alpha", "span_rad", "pole_pairs", "phase_count",
                "winding_perm", "element_perm", "mesh_perm", "resistance_ohm"):
        if key not in meta:
            raise LutError(f"{path}: missing metadata {key!r}")
    rows = list(csv.reader(lines[k:]))
    if not rows:
        raise LutError(f"{path}: no column header")
    header = rows[0]
    n, m, l = _count(header, "i", "A"), _count(header, "F", "At"), _count(header, "phi", "Wb")
    expect = waveform_columns(n, m, l)
    if header != expect:
        raise LutError(f"{path}: line {k + 1}: columns {header} do not match {expect}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(expect))
    except ValueError as exc:
        raise LutError(f"{path}: malformed number ({exc})") from None
    if data.shape[0] == 0:
        raise LutError(f"{path}: no samples")
    _, _, i, v, lam, F, psi, phi, tau = np.split(data, np.cumsum([1, 1, n, n, n, m, m, l]), axis=1)
    R = np.atleast_2d(np.asarray(meta["resistance_ohm"], dtype=float))
    sol = WaveformSolution(
        theta=data[:, 1].copy(), i=i, v=v, lam=lam, F=F, psi=psi, phi=phi, tau=tau[:, 0].copy(),
        omega=float(meta["omega_rad_s"]), tau_des=float(meta["tau_des_Nm"]), alpha=float(meta["alpha"]),
        span=float(meta["span_rad"]), pole_pairs=int(meta["pole_pairs"]), phase_count=int(meta["phase_count"]),
        winding_perm=tuple(meta["winding_perm"]), element_perm=tuple(meta["element_perm"]),
        mesh_perm=tuple(meta["mesh_perm"]), resistance=R,
    )
    _remeasure(sol)
    return sol, meta


def _remeasure(sol: WaveformSolution) -> None:
    sol.avg_torque, sol.ripple, sol.loss, sol.objective = waveform_metrics(
        sol.i, sol.tau, sol.resistance, sol.alpha, sol.tau_des)
    sol.max_abs_v = float(np.max(np.abs(sol.v))) if sol.v.size else 0.0


# ---------------------------------------------------------------------------
# plot data
def unfold_solution(sol: WaveformSolution) -> WaveformSolution:
    """Extend reduced-interval trajectories to one electrical period
    (K*T samples on [0, 2*pi/Np)) using the phase-shift symmetry."""
    K = sol.phase_count
    perms = {"winding": sol.winding_perm, "element": sol.element_perm, "mesh": sol.mesh_perm}
    full = {fam: unfold(getattr(sol, fam), perms[kind], K) for fam, _, kind in _FAMILIES}
    theta = np.concatenate([sol.theta + s * sol.span for s in range(K)])
    ident = lambda p: tuple(range(len(p)))  # noqa: E731
    out = replace(sol, theta=theta, tau=np.tile(sol.tau, K), z=None, s=None, span=sol.span * K, phase_count=1,
                  winding_perm=ident(sol.winding_perm), element_perm=ident(sol.element_perm),
                  mesh_perm=ident(sol.mesh_perm), **full)
    _remeasure(out)
    return out


def restrict_solution(full: WaveformSolution, T: int, phase_count: int, winding_perm, element_perm,
                      mesh_perm) -> WaveformSolution:
    """Inverse of :func:`unfold_solution`: keep the first reduced interval."""
    if full.T != T * phase_count:
        raise LutError(f"{full.T} samples cannot hold {phase_count} intervals of {T}")
    arrays = {fam: getattr(full, fam)[:T].copy() for fam, _, _ in _FAMILIES}
    out = replace(full, theta=full.theta[:T].copy(), tau=full.tau[:T].copy(), span=full.span / phase_count,
                  phase_count=phase_count, winding_perm=tuple(winding_perm), element_perm=tuple(element_perm),
                  mesh_perm=tuple(mesh_perm), **arrays)
    _remeasure(out)
    return out


_SERIES = (("current", "i", "A"), ("voltage", "v", "V"), ("flux_linkage", "lam", "Wb"),
           ("mmf", "F", "At"), ("torque", "tau", "Nm"))


def plot_series(sol: WaveformSolution) -> dict:
    """Tidy (long) tables per quantity over the full period:
    name -> (header, rows) with rows (theta_rad, channel, value)."""
    full = unfold_solution(sol)
    out = {}
    for name, fam, unit in _SERIES:
        vals = getattr(full, fam)
        vals = vals[:, None] if vals.ndim == 1 else vals
        rows = [(float(th), "total" if fam == "tau" else str(j + 1), float(vals[t, j]))
                for j in range(vals.shape[1]) for t, th in enumerate(full.theta)]
        out[name] = (["theta_rad", "channel", f"{name}_{unit}"], rows)
    return out


def write_plotdata(sol: WaveformSolution, outdir) -> list[Path]:
    """Write one tidy CSV per quantity plus the unfolded waveform file."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, rows) in plot_series(sol).items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([(repr(a), c, repr(b)) for a, c, b in rows])
        p = outdir / f"{name}.csv"
        _atomic_write(p, buf.getvalue())
        paths.append(p)
    reduced = {"T": sol.T, "phase_count": sol.phase_count, "winding_perm": list(sol.winding_perm),
               "element_perm": list(sol.element_perm), "mesh_perm": list(sol.mesh_perm)}
    p = outdir / "waveform_full.csv"
    write_waveform_csv(p, unfold_solution(sol), {"reduced": reduced})
    paths.append(p)
    return paths


def restrict_csv(path) -> WaveformSolution:
    """Reduced-interval solution from a ``waveform_full.csv`` written by :func:`write_plotdata`."""
    full, meta = read_waveform_csv(path)
    r = meta.get("reduced")
    if not r:
        raise LutError(f"{path}: not an unfolded waveform (no 'reduced' metadata)")
    return restrict_solution(full, r["T"], r["phase_count"], r["winding_perm"], r["element_perm"], r["mesh_perm"])


# ---------------------------------------------------------------------------
# lookup tables
@dataclass
class SweepSettings:
    alpha: float = 3.0
    T: int = 20
    breakpoints: tuple | None = None  # default_breakpoints(model) when None
    config: bnb.BnbConfig = field(default_factory=lambda: bnb.BnbConfig(time_limit=60.0))
    seed: int = 0

    def config_dict(self) -> dict:
        d = asdict(self.config)
        d.pop("trace_path", None)
        d.pop("log_every", None)
        return d


def cell_key(mhash: str, omega: float, tau_des: float, settings: SweepSettings, breakpoints) -> str:
    payload = json.dumps({"model": mhash, "omega": repr(float(omega)), "tau": repr(float(tau_des)),
                          "alpha": repr(float(settings.alpha)), "T": settings.T,
                          "bp": [repr(float(b)) for b in breakpoints], "config": settings.config_dict(),
                          "seed": settings.seed}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def solve_point(model: MotorModel, omega: float, tau_des: float, alpha: float, T: int, breakpoints=None,
                config: bnb.BnbConfig | None = None, pwa: PwaCharacteristic | None = None):
    """Fit (unless ``pwa`` is given), transcribe and solve one operating point (omega in rad/s)."""
    grid = Grid.for_model(model, T)
    if pwa is None:
        pwa = fit_model(model, grid.theta, breakpoints if breakpoints is not None else default_breakpoints(model))
    problem = transcribe(model, pwa, grid, omega, tau_des, alpha)
    return problem, bnb.solve(problem, config or bnb.BnbConfig())


def _cell_job(model, pwa, omega, tau_des, settings: SweepSettings):
    np.random.seed(settings.seed)
    t0 = time.perf_counter()
    cell = {"omega_rad_s": omega, "tau_des_Nm": tau_des}
    try:
        _, res = solve_point(model, omega, tau_des, settings.alpha, settings.T, config=settings.config, pwa=pwa)
    except Exception as exc:  # recorded per cell, the sweep goes on
        cell.update(status="error", message=f"{type(exc).__name__}: {exc}", objective=None, lower_bound=None,
                    gap=None, flagged=True, nodes=0, wall_time=time.perf_counter() - t0)
        return cell, None
    cell.update(status=res.status, message=res.message, objective=_finite(res.upper_bound),
                lower_bound=_finite(res.lower_bound), gap=_finite(res.gap),
                flagged=not (res.status == "optimal" and res.gap <= settings.config.gap_tol),
                nodes=res.nodes, wall_time=res.wall_time)
    return cell, (waveform_text(res.incumbent, {"status": res.status, "gap": _finite(res.gap)})
                  if res.incumbent is not None else None)


class LookupTable:
    """JSON-backed table of solved cells keyed by a hash of their inputs."""

    def __init__(self, path, data: dict):
        self.path = Path(path)
        self.data = data

    @property
    def cells(self) -> dict:
        return self.data["cells"]

    @property
    def cell_dir(self) -> Path:
        return self.path.with_name(self.path.stem + ".cells")

    @classmethod
    def load(cls, path) -> "LookupTable":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise LutError(f"{path}: invalid JSON at line {exc.lineno}") from None
        if data.get("format") != TABLE_FORMAT:
            raise LutError(f"{path}: not a {TABLE_FORMAT} table")
        return cls(path, data)

    def save(self) -> None:
        self.data["updated"] = _now()
        _atomic_write(self.path, json.dumps(self.data, indent=1, allow_nan=False))

    def cell(self, omega: float, tau_des: float) -> dict | None:
        for c in self.cells.values():
            if c["omega_rad_s"] == omega and c["tau_des_Nm"] == tau_des:
                return c
        return None

    def waveform(self, key: str) -> WaveformSolution | None:
        ref = self.cells[key].get("waveform")
        return None if ref is None else read_waveform_csv(self.path.parent / ref)[0]

    def flagged(self) -> list[dict]:
        return [c for c in self.cells.values() if c["flagged"]]


DONE = ("optimal", "limit", "infeasible")


def sweep(model: MotorModel, rpm_grid, tau_grid, path, settings: SweepSettings | None = None, workers: int = 1,
          progress=None) -> LookupTable:
    """Solve every (speed, torque) cell and persist the table after each one.

    Speeds are given in rpm and stored in rad/s. Cells already present with a
    final status are skipped, so an interrupted sweep resumes where it
    stopped. ``progress(cell)`` is called after each new cell.
    """
    settings = settings or SweepSettings()
    rpm_grid = [float(r) for r in rpm_grid]
    tau_grid = [float(t) for t in tau_grid]
    if not rpm_grid or not tau_grid:
        raise LutError("speed and torque grids must be nonempty")
    bp = tuple(settings.breakpoints or default_breakpoints(model))
    mhash = model_hash(model)
    head = {"model_hash": mhash, "model_name": model.name, "alpha": settings.alpha, "T": settings.T,
            "breakpoints_At": list(bp), "config": settings.config_dict(), "seed": settings.seed}
    path = Path(path)
    if path.exists():
        table = LookupTable.load(path)
        for k, v in head.items():
            if table.data.get(k) != json.loads(json.dumps(v)):
                raise LutError(f"{path}: existing table has a different {k}; use a new file")
    else:
        table = LookupTable(path, {"format": TABLE_FORMAT, **head, "created": _now(), "updated": _now(),
                                   "axes": {}, "cells": {}})
    axes = table.data["axes"]
    axes["omega_rpm"] = sorted(set(axes.get("omega_rpm", [])) | set(rpm_grid))
    axes["omega_rad_s"] = [r * RPM for r in axes["omega_rpm"]]
    axes["tau_des_Nm"] = sorted(set(axes.get("tau_des_Nm", [])) | set(tau_grid))
    table.save()

    todo = []
    for r in rpm_grid:
        for tq in tau_grid:
            key = cell_key(mhash, r * RPM, tq, settings, bp)
            if table.cells.get(key, {}).get("status") not in DONE:
                todo.append((key, r, tq))
    if not todo:
        return table
    pwa = fit_model(model, Grid.for_model(model, settings.T).theta, bp)

    def record(key, rpm, cell, text):
        cell["omega_rpm"] = rpm
        cell["solved_at"] = _now()
        cell["waveform"] = None
        if text is not None:
            ref = Path(table.cell_dir.name) / f"{key}.csv"
            _atomic_write(table.path.parent / ref, text)
            cell["waveform"] = ref.as_posix()
        table.cells[key] = cell
        table.save()
        if progress:
            progress(cell)

    if workers <= 1:
        for key, r, tq in todo:
            record(key, r, *_cell_job(model, pwa, r * RPM, tq, settings))
    else:
        with ProcessPoolExecutor(workers) as ex:
            futs = {ex.submit(_cell_job, model, pwa, r * RPM, tq, settings): (key, r) for key, r, tq in todo}
            for f in as_completed(futs):
                key, r = futs[f]
                record(key, r, *f.result())
    return table


def resolve_cell(table: LookupTable, key: str, model: MotorModel):
    """Re-solve a stored cell with the table's settings (single worker)."""
    d = table.data
    if model_hash(model) != d["model_hash"]:
        raise LutError("model does not match the table's model hash")
    cfg = bnb.BnbConfig(**{**d["config"], "workers": 1})
    c = table.cells[key]
    return solve_point(model, c["omega_rad_s"], c["tau_des_Nm"], d["alpha"], d["T"], d["breakpoints_At"], cfg)[1]
