"""Command-line dispatch: reports, config merging and exit codes."""

from __future__ import annotations

import json

import pytest

from src.gamma_calc.cli import dispatch


def _report(tmp_path, argv: list[str], expect: int = 0) -> dict:
    out = tmp_path / "report.json"
    assert dispatch(argv + ["--out", str(out)]) == expect
    return json.loads(out.read_text(encoding="utf-8"))


class TestBuild:
    def test_build_report(self, tmp_path) -> None:
        report = _report(tmp_path, ["build", "--space", "path:3"])
        assert report["command"] == "build"
        assert report["n"] == 3
        assert report["components"] == 1
        assert report["total_mass"] == pytest.approx(3.0)

    def test_space_document_round_trips(self, tmp_path) -> None:
        doc = tmp_path / "space.json"
        _report(tmp_path, ["build", "--space", "cycle:5", "--space-out", str(doc)])
        again = _report(tmp_path, ["build", "--space", f"file:{doc}"])
        assert again["n"] == 5


class TestComputations:
    def test_differential_report(self, tmp_path) -> None:
        field = tmp_path / "f.json"
        field.write_text(json.dumps([0.0, 1.0, 3.0]), encoding="utf-8")
        report = _report(tmp_path, ["d", "--space", "path:3", "--f", str(field)])
        assert report["fields"]["gamma"] == pytest.approx([0.5, 2.5, 2.0])
        assert report["fields"]["laplacian"] == pytest.approx([1.0, 1.0, -2.0])
        assert report["scalars"]["dirichlet_energy"] == pytest.approx(2.5)

    def test_dimloc(self, tmp_path) -> None:
        report = _report(tmp_path, ["dimloc", "--space", "path:3"])
        assert report["dim_loc"] == [1, 2, 1]
        assert report["mode"] == "exact"

    def test_curvature_of_two_points(self, tmp_path) -> None:
        report = _report(tmp_path, ["curvature", "--space", "path:2"])
        assert report["K_star"] == pytest.approx(2.0)
        assert report["bound_kind"] == "exact"

    def test_hodge_on_a_cycle(self, tmp_path) -> None:
        report = _report(tmp_path, ["hodge", "--space", "cycle:6", "--degrees", "0"])
        assert report["betti_eigen"] == [1]

    def test_verify_exact_rules(self, tmp_path) -> None:
        report = _report(tmp_path, ["verify", "--space", "cycle:8", "--rules", "exact"])
        assert report["all_exact_passed"] is True
        assert {r["rule"] for r in report["rules"]} == {
            "weak_max",
            "functoriality_pullback",
            "ricci_total",
            "laplacian_leibniz",
            "adjointness",
        }

    def test_flow_report(self, tmp_path) -> None:
        report = _report(tmp_path, ["flow", "--space", "cycle:8", "--T", "0.2", "--snapshot-every", "1"])
        assert report["mass_drift"] <= 1e-12
        assert report["min_density"] >= 0.0
        assert "0" in report["snapshots"]


class TestFlagSpellings:
    def test_curvature_mode_cdn(self, tmp_path) -> None:
        report = _report(tmp_path, ["curvature", "--space", "path:3", "--mode", "cdn", "--N", "2"])
        assert report["mode"] == "cd_n"
        assert report["N"] == pytest.approx(2.0)

    def test_curvature_keeps_fiber_mode_under_its_own_name(self, tmp_path) -> None:
        report = _report(tmp_path, ["curvature", "--space", "path:2", "--fiber-mode", "exact"])
        assert report["K_star"] == pytest.approx(2.0)

    def test_hodge_k_and_report(self, tmp_path) -> None:
        out = tmp_path / "hodge.json"
        assert dispatch(["hodge", "--space", "cycle:6", "--k", "0", "--report", str(out)]) == 0
        assert json.loads(out.read_text(encoding="utf-8"))["betti_eigen"] == [1]

    def test_flow_field_and_dump(self, tmp_path) -> None:
        field = tmp_path / "X.json"
        field.write_text(json.dumps({"coeffs": [[1.0], [0.0, 0.0], [0.0]]}), encoding="utf-8")
        report = _report(
            tmp_path, ["flow", "--space", "path:3", "--field", str(field), "--T", "0.1", "--dump", "every=2"]
        )
        assert report["mass_drift"] <= 1e-12
        assert "0" in report["snapshots"]
        assert str(report["steps"]) in report["snapshots"]

    def test_bad_dump_spec(self) -> None:
        assert dispatch(["flow", "--space", "cycle:8", "--dump", "every=zero"]) == 2

    def test_study_res_and_csv_out(self, tmp_path) -> None:
        out = tmp_path / "orders.csv"
        argv = ["study", "--family", "cycle", "--res", "6,8,10", "--rules", "laplacian_leibniz", "--out", str(out)]
        assert dispatch(argv) == 0
        text = out.read_text(encoding="utf-8")
        assert text.splitlines()[0].startswith("rule")
        assert "laplacian_leibniz" in text

    def test_ricci_auto_fields(self, tmp_path) -> None:
        report = _report(tmp_path, ["ricci", "--space", "cycle:8", "--fields", "auto", "--K", "0"])
        assert [f["field"] for f in report["fields"]] == ["X", "Y"]

    def test_ricci_given_fields_need_inputs(self, tmp_path) -> None:
        argv = ["ricci", "--space", "cycle:8", "--fields", "inputs", "--K", "0", "--out", str(tmp_path / "r.json")]
        assert dispatch(argv) == 1


class TestConfig:
    def test_config_file_is_merged_under_flags(self, tmp_path) -> None:
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"space": "path:4", "seed": 5}), encoding="utf-8")
        report = _report(tmp_path, ["build", "--config", str(cfg), "--seed", "9"])
        assert report["n"] == 4
        assert report["seed"] == 9

    def test_tolerance_overrides_reach_the_report(self, tmp_path) -> None:
        report = _report(tmp_path, ["build", "--space", "path:3", "--tol", "TOL_RANK=1e-6"])
        assert report["tolerances"]["rank"] == pytest.approx(1e-6)


class TestExitCodes:
    def test_schema_lists_reports(self, tmp_path) -> None:
        out = tmp_path / "schema.json"
        assert dispatch(["schema", "--out", str(out)]) == 0
        text = out.read_text(encoding="utf-8")
        assert "betti_eigen" in text
        assert "K_ric" in text

    @pytest.mark.parametrize(
        "argv",
        [
            ["d"],
            ["build", "--space", "nope:3"],
            ["build", "--space", "path:3", "--tol", "TOL_RANK"],
            ["build", "--space", "path:3", "--tol", "TOL_RANKK=1e-6"],
            ["curvature", "--space", "path:3", "--curv-mode", "cd_n"],
            ["frobnicate"],
        ],
    )
    def test_usage_errors(self, argv: list[str]) -> None:
        assert dispatch(argv) == 2

    def test_computation_error_exits_one(self, tmp_path) -> None:
        assert dispatch(["flow", "--space", "cycle:8", "--T", "1000", "--steps", "1", "--out", str(tmp_path / "r.json")]) == 1
