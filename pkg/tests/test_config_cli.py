import json
import os

import numpy as np
import pytest

from degenpde.cli import main
from degenpde.config import load_config, parse_family
from degenpde.errors import ConfigurationError, StabilityError
from degenpde.reporting import (
    dumps_json,
    format_float,
    read_field_csv,
    write_field_csv,
)
from degenpde.solver import GridSpec, SolutionField

BENCH_INI = """
[model]
kind = mbs
dim = 1
horizon = 1.0
rho = 0.5
coupon_tau = 0.06
rate = constant:0.03
principal = gaussian_bump:amplitude=1,center=0,width=1,ramp=3
sigma = constant:1
mu = zero
value_interval = -0.5,1.5
initial = constant:0

[grid]
half_width = 8.0
nodes = 101
steps = auto
theta = 0.45
collar = 4

[mc]
paths = 4000
steps = 100
seed = 7
mode = both
x0 = 0.0
price_time = 0.0
chunk = 2000

[diagnostics]
regularity = true

[transform]
mode = semiconvex
l = 4
lambda = reciprocal:0.5
eta = reciprocal:-1.0
interval = 1.0,2.0
tau_max = 5.0
"""

GENERAL_INI = """
[model]
kind = general
dim = 1
horizon = 0.5
sigma = constant:1
mu = zero
lambda = zero
eta = zero
value_interval = -0.5,1.5
initial = gaussian:1,0,1

[grid]
half_width = 6.0
nodes = 121
steps = auto
"""


@pytest.fixture()
def bench_config(tmp_path):
    path = tmp_path / "bench.ini"
    path.write_text(BENCH_INI)
    return str(path)


@pytest.fixture()
def general_config(tmp_path):
    path = tmp_path / "general.ini"
    path.write_text(GENERAL_INI)
    return str(path)


class TestParsing:
    def test_family_grammar(self):
        assert parse_family("constant:0.03") == ("constant", [0.03], {})
        name, pos, kw = parse_family("gaussian_bump:amplitude=1,center=0,width=2,ramp=3")
        assert name == "gaussian_bump"
        assert kw == {"amplitude": 1.0, "center": 0.0, "width": 2.0, "ramp": 3.0}
        assert parse_family("zero") == ("zero", [], {})

    def test_unknown_family_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text(BENCH_INI.replace("rate = constant:0.03", "rate = mystery:1"))
        with pytest.raises(ConfigurationError):
            load_config(str(path))

    def test_missing_file(self):
        with pytest.raises(ConfigurationError):
            load_config("/no/such/config.ini")

    def test_stability_fail_fast(self, tmp_path):
        path = tmp_path / "unstable.ini"
        path.write_text(BENCH_INI.replace("steps = auto", "steps = 10"))
        with pytest.raises(StabilityError):
            load_config(str(path))

    def test_resolved_benchmark(self, bench_config):
        cfg = load_config(bench_config)
        assert cfg.kind == "mbs"
        assert cfg.model.rho == 0.5
        assert cfg.grid.nodes == (101,)
        assert cfg.mc["paths"] == 4000
        assert cfg.transform["mode"] == "semiconvex"

    def test_general_kind(self, general_config):
        cfg = load_config(general_config)
        assert cfg.kind == "general"
        assert cfg.model is None
        assert cfg.problem.label == "general"

    def test_matrix_sigma_parsing(self, tmp_path):
        ini = GENERAL_INI.replace("dim = 1", "dim = 2").replace(
            "sigma = constant:1", "sigma = constant:0;1"
        ).replace("initial = gaussian:1,0,1", "initial = constant:0").replace(
            "nodes = 121", "nodes = 41"
        )
        path = tmp_path / "mat.ini"
        path.write_text(ini)
        cfg = load_config(str(path))
        np.testing.assert_array_equal(cfg.sigma(0.0), [[0.0], [1.0]])


class TestReporting:
    def test_float_formatting_round_trips(self):
        for v in (0.1, 1.0 / 3.0, 1e-300, 123456.789012345678, np.pi):
            assert float(format_float(v)) == v

    def test_json_deterministic_and_sorted(self):
        payload = {"b": 1.5, "a": [1, 2.25], "c": {"y": True, "x": None}}
        s1 = dumps_json(payload)
        s2 = dumps_json({"c": {"x": None, "y": True}, "a": [1, 2.25], "b": 1.5})
        assert s1 == s2
        parsed = json.loads(s1)
        assert parsed["a"] == [1, 2.25]

    def test_field_csv_round_trip(self, tmp_path):
        grid = GridSpec(1, 2.0, 5, 3, 0.3)
        rng = np.random.default_rng(1)
        values = rng.normal(size=(4, 5))
        field = SolutionField(values, grid, variable="U")
        path = str(tmp_path / "field.csv")
        write_field_csv(field, path)
        loaded = read_field_csv(path)
        np.testing.assert_array_equal(loaded.values, values)
        assert loaded.variable == "U"
        assert loaded.grid.nodes == (5,)
        assert loaded.grid.horizon == 0.3

    def test_field_csv_round_trip_2d(self, tmp_path):
        grid = GridSpec(2, (2.0, 3.0), (5, 7), 2, 0.5)
        rng = np.random.default_rng(2)
        values = rng.normal(size=(3, 5, 7))
        field = SolutionField(values, grid)
        path = str(tmp_path / "field2.csv")
        write_field_csv(field, path)
        loaded = read_field_csv(path)
        np.testing.assert_array_equal(loaded.values, values)
        assert loaded.grid.half_width == (2.0, 3.0)


class TestCli:
    def test_solve_writes_artifacts(self, bench_config, tmp_path, capsys):
        out = str(tmp_path / "run")
        assert main(["solve", "--config", bench_config, "--out", out]) == 0
        for name in ("field.csv", "summary.json", "manifest.json"):
            assert os.path.exists(os.path.join(out, name))
        summary = json.loads(open(os.path.join(out, "summary.json")).read())
        assert summary["variable"] == "U"
        assert summary["clamp_report"]["fraction_outside_tolerance"] == 0.0

    def test_verify_duality_pipeline(self, bench_config, tmp_path):
        out = str(tmp_path / "dual")
        assert main(["verify-duality", "--config", bench_config, "--out", out]) == 0
        pricing = json.loads(open(os.path.join(out, "pricing.json")).read())
        assert set(pricing) >= {"q", "pw", "agreement", "residual_max"}
        allowance = 3.0 * pricing["q"]["mc_se"] + 10.0 * pricing["residual_max"]
        assert pricing["q"]["abs_diff"] <= allowance
        agree = pricing["agreement"]
        assert agree["difference"] <= 3.0 * agree["combined_se"] + 1e-12
        reg = json.loads(open(os.path.join(out, "regularity.json")).read())
        assert reg["initial_deviation"]["ok"] is True

    def test_rerun_is_byte_identical(self, bench_config, tmp_path):
        out1 = str(tmp_path / "a")
        out2 = str(tmp_path / "b")
        main(["verify-duality", "--config", bench_config, "--out", out1])
        main(["verify-duality", "--config", bench_config, "--out", out2])
        for name in ("field.csv", "summary.json", "pricing.json", "regularity.json", "manifest.json"):
            b1 = open(os.path.join(out1, name), "rb").read()
            b2 = open(os.path.join(out2, name), "rb").read()
            assert b1 == b2, name

    def test_price_from_saved_field(self, bench_config, tmp_path, capsys):
        out = str(tmp_path / "run")
        main(["solve", "--config", bench_config, "--out", out])
        capsys.readouterr()
        code = main(
            [
                "price",
                "--config",
                bench_config,
                "--field",
                out,
                "--paths",
                "2000",
                "--mode",
                "q",
                "--seed",
                "5",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["mode"] == "q"
        assert payload["n_paths"] == 2000

    def test_transform_check_output(self, bench_config, tmp_path, capsys):
        out = str(tmp_path / "tr")
        assert main(["transform-check", "--config", bench_config, "--out", out]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["lambda_tilde"]["all_negative"] is True
        assert payload["round_trip_error"] <= 1e-10
        assert os.path.exists(os.path.join(out, "transform_tabulation.csv"))

    def test_counterexample_command(self, capsys):
        code = main(
            ["counterexample", "--T", "1.0", "--paths", "3000", "--steps", "100", "--seed", "2"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert abs(payload["estimate"] - 0.5) <= 4.0 * payload["se"]

    def test_diagnose_degeneracy_command(self, tmp_path, capsys):
        ini = """
[model]
kind = general
dim = 2
horizon = 1.0
sigma = constant:0;1
mu = zero
lambda = zero
eta = zero
value_interval = -0.5,1.5
initial = constant:0

[grid]
half_width = 6.0
nodes = 41
steps = auto

[mc]
paths = 2000
steps = 100
seed = 3
x0 = 0.0
"""
        path = tmp_path / "deg.ini"
        path.write_text(ini)
        assert main(["diagnose-degeneracy", "--config", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["kernel"]["m"] == 1
        assert payload["atom"]["verdict"] == "atomic"

    def test_diagnose_regularity_command(self, general_config, tmp_path, capsys):
        out = str(tmp_path / "reg")
        assert main(["diagnose-regularity", "--config", general_config, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "regularity_slices.csv"))
        report = json.loads(open(os.path.join(out, "regularity.json")).read())
        assert report["variable"] == "u"
        assert len(report["per_slice"]["t"]) == len(report["per_slice"]["L_minus"])

    def test_error_exit_code_and_payload(self, capsys):
        code = main(["solve", "--config", "/missing.ini", "--out", "/tmp/unused_out"])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "configuration_error"

    def test_manifest_covers_resolved_parameters(self, bench_config, tmp_path):
        out = str(tmp_path / "m")
        main(["verify-duality", "--config", bench_config, "--out", out])
        manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
        grid = manifest["grid"]
        for key in ("dt", "dx", "theta", "stability_ratio", "collar", "clamp_rel_tolerance"):
            assert key in grid
        mc = manifest["mc"]
        for key in ("paths", "steps", "seed", "mode", "x0", "price_time", "chunk", "positivity_floor_rel"):
            assert key in mc
        model = manifest["model"]
        for key in ("rho", "coupon_tau", "rate", "principal", "horizon", "value_interval"):
            assert key in model
        assert "artifacts" in manifest


def test_theta_cap_enforced(tmp_path):
    path = tmp_path / "theta.ini"
    path.write_text(BENCH_INI.replace("theta = 0.45", "theta = 0.9"))
    with pytest.raises(ConfigurationError):
        load_config(str(path))


def test_affine_initial_family(tmp_path):
    ini = GENERAL_INI.replace("initial = gaussian:1,0,1", "initial = affine:slope=0.05,intercept=0.2")
    path = tmp_path / "affine.ini"
    path.write_text(ini)
    cfg = load_config(str(path))
    mesh = cfg.grid.mesh()
    vals = cfg.u0(mesh)
    np.testing.assert_allclose(vals, 0.05 * mesh[..., 0] + 0.2, atol=1e-14)


def test_time_lipschitz_flag_for_general_kind(general_config, tmp_path):
    out = str(tmp_path / "tl")
    assert main(["diagnose-regularity", "--config", general_config, "--out", out]) == 0
    report = json.loads(open(os.path.join(out, "regularity.json")).read())
    tl = report["time_lipschitz"]
    assert tl["b1"] == 0 and tl["b2"] == 0
    assert tl["lip_t"] <= tl["bound"]
    assert tl["flag_exceeded"] is False


def test_zero_principal_pipeline_reports_zero(tmp_path):
    ini = BENCH_INI.replace(
        "principal = gaussian_bump:amplitude=1,center=0,width=1,ramp=3",
        "principal = gaussian_bump:amplitude=0,center=0,width=1,ramp=3",
    )
    config = tmp_path / "zero.ini"
    config.write_text(ini)
    out = str(tmp_path / "zero_out")
    assert main(["verify-duality", "--config", str(config), "--out", out]) == 0
    pricing = json.loads(open(os.path.join(out, "pricing.json")).read())
    for mode in ("q", "pw"):
        assert pricing[mode]["mc_mean"] == 0.0
        assert pricing[mode]["pde_value"] == 0.0
        assert pricing[mode]["z_score"] == 0.0
