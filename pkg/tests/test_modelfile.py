import json

import numpy as np
import pytest

from srmwave.modelfile import (
    FORMAT,
    MODEL_PATH_ENV,
    dump_model,
    load_model,
    model_from_dict,
    model_hash,
    model_to_dict,
    resolve_model,
)
from srmwave.motor import ModelError, example_motor, toy_motor
from srmwave.verify import affine_motor


def same_surfaces(a, b):
    return all(np.array_equal(x.values, y.values) and np.array_equal(x.mmf_grid, y.mmf_grid)
               for x, y in zip(a, b))


@pytest.mark.parametrize("make", [example_motor, toy_motor, affine_motor])
@pytest.mark.parametrize("sampled", [False, True])
def test_roundtrip(make, sampled, tmp_path):
    model = make()
    path = tmp_path / "m.json"
    dump_model(model, path, sampled=sampled)
    again = load_model(path)
    assert model_hash(again) == model_hash(model)
    assert same_surfaces(again.flux, model.flux)
    assert again.winding_perm == model.winding_perm
    kind = json.loads(path.read_text())["flux"]["kind"]
    assert kind == "sampled" if sampled else kind != "sampled"


def test_hash_sensitivity():
    a = example_motor()
    d = model_to_dict(a)
    d["limits"]["v_max"] = 601.0
    assert model_hash(model_from_dict(d)) != model_hash(a)
    assert model_hash(example_motor()) == model_hash(a)


@pytest.mark.parametrize("edit, where", [
    (lambda d: d.pop("flux"), "<root>"),
    (lambda d: d.__setitem__("format", "srm-model/2"), "format"),
    (lambda d: d["limits"].__setitem__("v_max", -1), "limits.v_max"),
    (lambda d: d["symmetry"].__setitem__("pole_pairs", 0), "symmetry.pole_pairs"),
    (lambda d: d["flux"].__setitem__("n_theta", 1), "flux.n_theta"),
    (lambda d: d.__setitem__("extra", 1), "<root>"),
])
def test_schema_errors_name_the_item(edit, where):
    d = model_to_dict(example_motor())
    edit(d)
    with pytest.raises(ModelError) as exc:
        model_from_dict(d)
    assert exc.value.path == where


def test_sampled_surface_errors_carry_the_element():
    d = model_to_dict(toy_motor(), sampled=True)
    d["flux"]["values"][0][3][2] = float(d["flux"]["values"][0][3][2]) - 1.0
    with pytest.raises(ModelError) as exc:
        model_from_dict(d)
    assert exc.value.path == "flux[0].values[3][2]"
    assert "increasing" in exc.value.message


def test_ragged_matrix_rejected():
    d = model_to_dict(example_motor())
    d["resistance"][1] = [0.0, 1.0]
    with pytest.raises(ModelError, match="resistance"):
        model_from_dict(d)


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "format": "srm-model/1",\n oops\n}')
    with pytest.raises(ModelError, match="line 3"):
        load_model(p)


def test_resolve_builtin_file_and_search_path(tmp_path, monkeypatch):
    assert resolve_model("example").name == example_motor().name
    sub = tmp_path / "models"
    sub.mkdir()
    dump_model(toy_motor(), sub / "t.json")
    assert model_hash(resolve_model(sub / "t.json")) == model_hash(toy_motor())
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(MODEL_PATH_ENV, str(sub))
    assert model_hash(resolve_model("t.json")) == model_hash(toy_motor())
    with pytest.raises(FileNotFoundError, match=MODEL_PATH_ENV):
        resolve_model("missing.json")


def test_format_tag():
    assert model_to_dict(toy_motor())["format"] == FORMAT == "srm-model/1"
