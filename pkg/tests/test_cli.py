import json

import numpy as np
import pytest

from ahflow import cli
from ahflow import presets as P

GRID_SPEC = {
    "n": 4, "N": 4,
    "backend": {"kind": "grid", "resolution": [8, 8, 8], "derivative": "spectral"},
    "h0": [[{"const": 1.0, "fourier": [{"k": [1, 0, 0], "cos": 0.1, "sin": 0.0}]}, 0, 0],
           [0, 1, 0], [0, 0, 1]],
    "coefficients": [
        {"power": 2, "block": "ab", "value": [[0.2, 0, 0], [0, -0.1, 0], [0, 0, 0.05]]},
        {"power": 3, "block": "xx", "value": 0.3},
    ],
}
CONST_SPEC = {
    "n": 4, "N": 5,
    "coefficients": [
        {"power": 3, "block": "ab", "value": [[0.4, 0.1, 0], [0.1, -0.4, 0], [0, 0, 0]]},
        {"power": 2, "block": "ab", "value": [[0.3, 0, 0], [0, 0.1, 0], [0, 0, -0.1]]},
    ],
}


def write(tmp_path, doc, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("doc", [GRID_SPEC, CONST_SPEC, {"preset": "pe-model", "n": 6, "N": 7}])
def test_spec_round_trip_is_value_identical(doc):
    spec = cli.MetricSpec.from_dict(doc)
    again = cli.MetricSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again.to_dict() == spec.to_dict()
    assert np.array_equal(again.to_metric().data, spec.to_metric().data)


def test_spec_from_metric_round_trip():
    g = P.random_even_metric(np.random.default_rng(0), 4, 5, 2)
    spec = cli.MetricSpec.from_metric(g)
    back = cli.MetricSpec.from_dict(json.loads(json.dumps(spec.to_dict()))).to_metric()
    assert np.array_equal(back.data, g.data)


def test_normal_form_command_re_emits_loadable_spec(tmp_path, capsys):
    code, out, _ = run(["normal-form", "--spec", write(tmp_path, CONST_SPEC)], capsys)
    assert code == 0
    doc = json.loads(out)
    g = cli.MetricSpec.from_dict(doc).to_metric()
    assert g.normal_form
    assert np.allclose(g.data, cli.MetricSpec.from_dict(CONST_SPEC).to_metric().data)


@pytest.mark.parametrize("doc, path", [
    ({"n": 5}, "n"),
    ({"n": 4, "N": 0}, "N"),
    ({"n": 4, "extra": 1}, ""),
    ({"preset": "sphere"}, "preset"),
    ({"preset": "cusp", "h0": [[1]]}, "preset"),
    ({"n": 4, "N": 3, "coefficients": [{"power": 4, "block": "ab", "value": 0}]},
     "coefficients[0].power"),
    ({"n": 4, "coefficients": [{"power": 1, "block": "yy", "value": 0}]},
     "coefficients[0].block"),
    ({"n": 4, "coefficients": [{"power": 0, "block": "ab", "value": 0}]}, "coefficients[0]"),
    ({"n": 4, "coefficients": [{"power": 2, "block": "xx", "value": 1},
                               {"power": 2, "block": "xx", "value": 2}]}, "coefficients[1]"),
    ({"n": 4, "h0": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]}, "h0"),
    ({"n": 4, "backend": {"kind": "grid", "resolution": [8, 8]}}, "backend.resolution"),
    ({"n": 4, "backend": {"kind": "grid", "resolution": [7, 8, 8]}}, "backend"),
])
def test_spec_errors_name_the_field(doc, path):
    with pytest.raises(cli.SpecError) as e:
        cli.MetricSpec.from_dict(doc)
    assert e.value.path == path


def test_parse_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"n": 4,\n  "N": }')
    code, _, err = run(["classify", "--spec", str(p)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "line 2" in err


@pytest.mark.parametrize("name, vr, ape", [
    ("cusp", True, True), ("pe-model", True, True),
    ("vr-generic", True, False), ("odd-seeded", False, False),
])
def test_classify_presets(name, vr, ape, capsys):
    code, out, err = run(["classify", "--preset", name], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["is_AH"] and rep["is_VR"] == vr and rep["is_APE"] == ape
    assert rep["summary"] in err
    if name == "vr-generic":
        assert rep["ape_defect_order"] in (2, 3)
        assert rep["vr_trace_norm"] <= 1e-9
    if name == "odd-seeded":
        assert not rep["is_partially_even"]


def test_classify_grid_spec(tmp_path, capsys):
    code, out, _ = run(["classify", "--spec", write(tmp_path, GRID_SPEC)], capsys)
    assert code == 0
    assert json.loads(out)["is_AH"]


def test_renvol_cusp(capsys):
    code, out, _ = run(["renvol", "--preset", "cusp"], capsys)
    assert code == 0
    assert json.loads(out)["renv"] == pytest.approx(-(2 * np.pi) ** 3 / 3)


def test_strict_renvol_on_non_vr_is_invariant_failure(capsys):
    code, _, err = run(["renvol", "--preset", "odd-seeded", "--strict"], capsys)
    assert code == cli.EXIT_INVARIANT
    assert "volume_renormalizable" in err


def test_discrepancy_command(capsys):
    code, out, _ = run(["discrepancy", "--spec", "-", "--preset", "vr-generic"], capsys)
    assert code == cli.EXIT_CONFIG
    code, out, _ = run(["discrepancy", "--preset", "vr-generic", "--omega0", "0.3"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert abs(rep["route_a"]) <= 1e-9 and abs(rep["route_b"]) <= 1e-9


def test_appendix_check(capsys):
    code, out, _ = run(["appendix-check", "--seed", "3"], capsys)
    assert code == 0


def test_flow_cusp_rows_constant(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["flow", "--preset", "cusp", "--T", "0.5", "--dt", "1e-2", "--out", str(out)],
                     capsys)
    assert code == 0
    lines = (out / "flow_jet.csv").read_text().splitlines()
    assert lines[0] == "t,mu,nu,renv,residual,evenness_order,vr_trace_norm"
    assert len({ln.split(",", 1)[1] for ln in lines[1:]}) == 1


def test_flow_vr_generic_keeps_vr(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["flow", "--preset", "vr-generic", "--T", "0.05", "--dt", "1e-3",
                      "--out", str(out)], capsys)
    assert code == 0
    rows = (out / "flow_jet.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[6]) <= 1e-9 for r in rows)


def test_flow_both_engines_and_manifest(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["flow", "--preset", "vr-generic", "--engine", "grid", "--engine", "jet",
                      "--T", "0.002", "--dt", "5e-5", "--out", str(out)], capsys)
    assert code == 0
    jet = (out / "flow_jet.csv").read_text()
    grid = (out / "flow_grid.csv").read_text()
    assert jet.splitlines()[0].endswith(",xval_gap")
    assert grid.splitlines()[0].endswith(",xval_gap")
    man = json.loads((out / "manifest.json").read_text())
    assert man["outputs"]["flow_jet.csv"] == cli._sha256(jet)
    assert man["outputs"]["flow_grid.csv"] == cli._sha256(grid)
    assert all(c["ok"] for c in man["checks"].values())
    gaps = [float(r.split(",")[-1]) for r in jet.splitlines()[1:]]
    assert max(gaps) <= 1e-6


def test_flow_output_is_deterministic(tmp_path, capsys):
    texts = []
    for d in ("a", "b"):
        out = tmp_path / d
        run(["flow", "--preset", "vr-generic", "--T", "0.02", "--dt", "1e-3", "--seed", "5",
             "--out", str(out)], capsys)
        texts.append(((out / "flow_jet.csv").read_bytes(), (out / "manifest.json").read_bytes()))
    assert texts[0] == texts[1]


def test_flow_json_format(capsys):
    code, out, _ = run(["flow", "--preset", "cusp", "--T", "0.01", "--dt", "1e-3",
                        "--format", "json"], capsys)
    assert code == 0
    rows = json.loads(out)
    assert [r["t"] for r in rows] == pytest.approx(np.linspace(0, 0.01, 11))


def test_flow_blow_up_exit_code(tmp_path, capsys):
    doc = {"n": 4, "N": 8, "coefficients": [
        {"power": 8, "block": "ab", "value": [[1, 0, 0], [0, -1, 0], [0, 0, 0]]}]}
    code, _, err = run(["flow", "--spec", write(tmp_path, doc), "--T", "1", "--dt", "1e-3"], capsys)
    assert code == cli.EXIT_BLOWUP
    assert "blow-up" in err


@pytest.mark.parametrize("argv", [
    ["flow", "--preset", "cusp", "--dt", "-1"],
    ["flow", "--preset", "cusp", "--T", "0.1", "--dt", "0.03"],
    ["flow", "--preset", "cusp", "--x-cut", "0.6"],
    ["flow", "--preset", "cusp", "--engine", "grid", "--dt", "1e-2"],
    ["classify"],
    ["classify", "--preset", "nope"],
    ["classify", "--spec", "/nonexistent.json"],
])
def test_config_errors_exit_4(argv, capsys):
    with pytest.raises(SystemExit) as e:
        raise SystemExit(cli.main(argv))
    assert e.value.code == cli.EXIT_CONFIG


def test_verify_subset(capsys):
    code, out, _ = run(["verify", "--only", "5,8"], capsys)
    assert code == 0
    lines = [ln for ln in out.splitlines() if ln.startswith("[")]
    assert len(lines) == 2 and all(ln.startswith("[PASS]") for ln in lines)
