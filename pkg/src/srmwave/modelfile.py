"""Motor model files (JSON, format tag ``srm-model/1``).

Units: ohm, volt, ampere, ampere-turns (At), mechanical radians, weber and
newton-metres. Matrices are row-major nested lists. The flux characteristic is
either fully sampled or given by a generator (``saturating`` or ``affine``)
that is re-sampled on load. Phase torque is derived from the flux unless a
sampled torque surface is supplied.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import jsonschema
import numpy as np

from .motor import (
    SATURATING_DEFAULTS,
    ModelError,
    MotorModel,
    SampledSurface,
    affine_surfaces,
    example_motor,
    mmf_samples,
    saturating_surfaces,
    toy_motor,
    with_derived_torque,
)

FORMAT = "srm-model/1"
MODEL_PATH_ENV = "SRMWAVE_MODEL_PATH"
BUILTIN = {"example": example_motor, "toy": toy_motor}

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_perm = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_grid = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_sampled = {
    "type": "object",
    "required": ["kind", "mmf_grid", "theta_grid", "values"],
    "properties": {
        "kind": {"const": "sampled"},
        "mmf_grid": {**_grid, "description": "ascending MMF samples, At"},
        "theta_grid": {**_grid, "description": "uniform angles on [0, 2*pi/(K*Np)], rad"},
        "values": {"type": "array", "minItems": 1, "items": _matrix,
                   "description": "one (len(mmf_grid) x len(theta_grid)) matrix per element"},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "switched reluctance motor model",
    "type": "object",
    "required": ["format", "resistance", "mesh_matrix", "geometry_matrix", "limits", "symmetry", "flux"],
    "properties": {
        "format": {"const": FORMAT},
        "name": {"type": "string"},
        "resistance": {**_matrix, "description": "diagonal winding resistance, ohm (n x n)"},
        "mesh_matrix": {**_matrix, "description": "magnetic mesh incidence, entries -1/0/1 (l x m)"},
        "geometry_matrix": {**_matrix, "description": "winding turns per mesh (l x n)"},
        "limits": {
            "type": "object",
            "required": ["v_max"],
            "properties": {
                "v_max": {"type": "number", "exclusiveMinimum": 0, "description": "V"},
                "i_max": {"type": ["number", "null"], "description": "A, optional"},
            },
            "additionalProperties": False,
        },
        "symmetry": {
            "type": "object",
            "required": ["pole_pairs", "phase_count"],
            "properties": {
                "pole_pairs": {"type": "integer", "minimum": 1},
                "phase_count": {"type": "integer", "minimum": 1},
                "winding_perm": _perm,
                "element_perm": _perm,
                "mesh_perm": _perm,
            },
            "additionalProperties": False,
        },
        "remanent": {"type": "boolean", "description": "allow nonzero flux at zero MMF"},
        "flux": {
            "oneOf": [
                _sampled,
                {
                    "type": "object",
                    "required": ["kind", "mmf_max", "mmf_step", "n_theta"],
                    "properties": {
                        "kind": {"const": "saturating"},
                        "mmf_max": {"type": "number", "exclusiveMinimum": 0},
                        "mmf_step": {"type": "number", "exclusiveMinimum": 0},
                        "n_theta": {"type": "integer", "minimum": 2},
                        "params": {"type": "object", "additionalProperties": {"type": "number"}},
                    },
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "required": ["kind", "mmf_max", "mmf_samples", "n_theta", "params"],
                    "properties": {
                        "kind": {"const": "affine"},
                        "mmf_max": {"type": "number", "exclusiveMinimum": 0},
                        "mmf_samples": {"type": "integer", "minimum": 2},
                        "n_theta": {"type": "integer", "minimum": 2},
                        "params": {
                            "type": "object",
                            "required": ["slope", "offset", "swing"],
                            "properties": {k: {"type": "number"} for k in ("slope", "offset", "swing", "phase")},
                            "additionalProperties": False,
                        },
                    },
                    "additionalProperties": False,
                },
            ]
        },
        "torque": {"oneOf": [{"type": "object", "properties": {"kind": {"const": "derived"}},
                              "required": ["kind"], "additionalProperties": False}, _sampled]},
        "notes": {"type": "object"},
    },
    "additionalProperties": False,
}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate(data: dict) -> None:
    """Raise :class:`ModelError` for the first schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        # oneOf failures are more useful when reported through their closest branch
        if err.context:
            branches = {}
            for e in err.context:
                branches.setdefault(e.schema_path[0], []).append(e)
            # the branch whose "kind" matched is the one the author meant
            matched = [errs for errs in branches.values()
                       if not any(list(e.relative_path) == ["kind"] or e.validator == "const" for e in errs)]
            pool = matched[0] if matched else err.context
            err = min(pool, key=lambda e: (-len(e.absolute_path), str(e.message)))
        raise ModelError(_path(err.absolute_path), err.message)


def _surfaces(entry: dict, path: str) -> tuple[SampledSurface, ...]:
    F = np.asarray(entry["mmf_grid"], dtype=float)
    th = np.asarray(entry["theta_grid"], dtype=float)
    out = []
    for k, vals in enumerate(entry["values"]):
        arr = np.asarray(vals, dtype=float)
        try:
            out.append(SampledSurface(F, th, arr))
        except ModelError as exc:
            raise ModelError(f"{path}[{k}].{exc.path}", exc.message) from None
    return tuple(out)


def model_from_dict(data: dict) -> MotorModel:
    validate(data)
    sym, lim = data["symmetry"], data["limits"]
    M = np.asarray(data["mesh_matrix"], dtype=float)
    m = M.shape[1] if M.ndim == 2 else 0
    Np, K = int(sym["pole_pairs"]), int(sym["phase_count"])
    fx = data["flux"]
    notes = dict(data.get("notes", {}))
    if fx["kind"] == "sampled":
        flux = _surfaces(fx, "flux.values")
    elif fx["kind"] == "saturating":
        params = dict(SATURATING_DEFAULTS, **fx.get("params", {}))
        flux = saturating_surfaces(m, Np, K, mmf_samples(fx["mmf_max"], fx["mmf_step"]), fx["n_theta"], params)
        notes["flux"] = {**fx, "params": params}
    else:
        F = np.linspace(0.0, fx["mmf_max"], fx["mmf_samples"])
        p = fx["params"]
        flux = affine_surfaces(m, Np, K, F, fx["n_theta"], p["slope"], p["offset"], p["swing"], p.get("phase", 0.0))
        notes["flux"] = dict(fx)
    tq = data.get("torque", {"kind": "derived"})
    torque = None if tq["kind"] == "derived" else _surfaces(tq, "torque.values")
    for key in ("resistance", "mesh_matrix", "geometry_matrix"):
        rows = data[key]
        if len({len(r) for r in rows}) != 1:
            raise ModelError(key, "rows have different lengths")
    model = MotorModel(
        resistance=np.asarray(data["resistance"], dtype=float),
        mesh_matrix=M,
        geometry_matrix=np.asarray(data["geometry_matrix"], dtype=float),
        v_max=float(lim["v_max"]),
        i_max=None if lim.get("i_max") is None else float(lim["i_max"]),
        pole_pairs=Np,
        phase_count=K,
        flux=flux,
        torque=torque,
        winding_perm=sym.get("winding_perm"),
        element_perm=sym.get("element_perm"),
        mesh_perm=sym.get("mesh_perm"),
        remanent=bool(data.get("remanent", False)),
        name=data.get("name", ""),
        notes=notes,
    )
    return with_derived_torque(model) if torque is None else model


def _sampled_dict(surfaces) -> dict:
    return {
        "kind": "sampled",
        "mmf_grid": surfaces[0].mmf_grid.tolist(),
        "theta_grid": surfaces[0].theta_grid.tolist(),
        "values": [s.values.tolist() for s in surfaces],
    }


def model_to_dict(model: MotorModel, sampled: bool = False) -> dict:
    """Generator form when the model records one (and ``sampled`` is False)."""
    gen = model.notes.get("flux", {}) if isinstance(model.notes, dict) else {}
    if not sampled and gen.get("kind") == "saturating" and {"mmf_max", "mmf_step", "n_theta"} <= gen.keys():
        flux = {k: gen[k] for k in ("kind", "mmf_max", "mmf_step", "n_theta")}
        flux["params"] = dict(gen.get("params", {}))
        torque = {"kind": "derived"}
    elif not sampled and gen.get("kind") == "affine" and {"mmf_max", "mmf_samples", "n_theta", "params"} <= gen.keys():
        flux = {k: gen[k] for k in ("kind", "mmf_max", "mmf_samples", "n_theta", "params")}
        torque = {"kind": "derived"}
    else:
        flux = _sampled_dict(model.flux)
        torque = _sampled_dict(model.torque) if model.torque is not None else {"kind": "derived"}
    notes = {k: v for k, v in (model.notes or {}).items() if k != "flux"}
    return {
        "format": FORMAT,
        "name": model.name,
        "resistance": model.resistance.tolist(),
        "mesh_matrix": model.mesh_matrix.tolist(),
        "geometry_matrix": model.geometry_matrix.tolist(),
        "limits": {"v_max": model.v_max, "i_max": model.i_max},
        "symmetry": {
            "pole_pairs": model.pole_pairs,
            "phase_count": model.phase_count,
            "winding_perm": list(model.winding_perm),
            "element_perm": list(model.element_perm),
            "mesh_perm": list(model.mesh_perm),
        },
        "remanent": bool(model.remanent),
        "flux": flux,
        "torque": torque,
        "notes": _jsonable(notes),
    }


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def load_model(path) -> MotorModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return model_from_dict(data)


def dump_model(model: MotorModel, path, sampled: bool = False) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, sampled), indent=1))


def model_hash(model: MotorModel) -> str:
    """sha256 over the numeric content (matrices, limits, symmetry, surfaces)."""
    h = hashlib.sha256()

    def add(a):
        arr = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())

    for a in (model.resistance, model.mesh_matrix, model.geometry_matrix,
              [model.v_max, -1.0 if model.i_max is None else model.i_max, model.pole_pairs, model.phase_count],
              model.winding_perm, model.element_perm, model.mesh_perm, [float(model.remanent)]):
        add(a)
    for group in (model.flux, model.torque or ()):
        for s in group:
            add(s.mmf_grid)
            add(s.theta_grid)
            add(s.values)
    return h.hexdigest()


def resolve_model(name) -> MotorModel:
    """A built-in name (``example``, ``toy``) or a file, looked up relative to the
    working directory and then along ``SRMWAVE_MODEL_PATH``."""
    name = str(name)
    if name in BUILTIN:
        return BUILTIN[name]()
    p = Path(name)
    if p.is_file():
        return load_model(p)
    if not p.is_absolute():
        for d in os.environ.get(MODEL_PATH_ENV, "").split(os.pathsep):
            if d and (Path(d) / name).is_file():
                return load_model(Path(d) / name)
    raise FileNotFoundError(f"model {name!r} not found (searched the working directory and ${MODEL_PATH_ENV})")
