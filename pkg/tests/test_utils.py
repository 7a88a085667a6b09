"""Formatters, validators, helpers and small linear-algebra utilities."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from src.gamma_calc.core.errors import UsageError
from src.gamma_calc.modules import FiberBundle
from src.gamma_calc.schemas.responses import CriterionResult
from src.gamma_calc.utils.formatters import (
    format_csv,
    format_json,
    read_field,
    read_json,
    section_from_document,
    section_to_document,
)
from src.gamma_calc.utils.helpers import generate_run_id, merge_config
from src.gamma_calc.utils.linalg import field_norms, pencil_min
from src.gamma_calc.utils.validators import (
    optional_float,
    parse_int_list,
    validate_field,
    validate_nonnegative,
)


class TestFormatJSON:
    def test_deterministic_bytes(self) -> None:
        a = format_json({"b": np.float64(1.5), "a": np.arange(3)})
        b = format_json({"a": [0, 1, 2], "b": 1.5})
        assert a == b
        assert a.endswith("\n")

    def test_models_and_infinities(self) -> None:
        text = format_json(CriterionResult(name="x", passed=True, details={"k": math.inf}))
        parsed = json.loads(text)
        assert parsed["name"] == "x"
        assert parsed["details"]["k"] == math.inf


class TestCSV:
    def test_cells(self) -> None:
        text = format_csv([{"rule": "chain_rule", "values": [0.5, 0.25], "order": None}], ["rule", "values", "order"])
        lines = text.splitlines()
        assert lines[0] == "rule,values,order"
        assert lines[1] == "chain_rule,0.5;0.25,"


class TestReadField:
    def test_list_and_values_forms(self, tmp_path) -> None:
        a = tmp_path / "a.json"
        a.write_text("[1, 2, 3]", encoding="utf-8")
        b = tmp_path / "b.json"
        b.write_text('{"values": [1, 2, 3]}', encoding="utf-8")
        np.testing.assert_allclose(read_field(a, 3), read_field(b, 3))

    def test_errors(self, tmp_path) -> None:
        with pytest.raises(UsageError, match="cannot read"):
            read_json(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2,", encoding="utf-8")
        with pytest.raises(UsageError, match="not valid JSON"):
            read_json(bad)
        short = tmp_path / "short.json"
        short.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(UsageError, match="length 3"):
            read_field(short, 3)


class TestSectionDocuments:
    def test_round_trip_respects_fiber_dimensions(self, path3, rng) -> None:
        b = FiberBundle.identity(path3, np.array([1, 2, 1]))
        v = b.random_section(rng)
        again = section_from_document(b, section_to_document(v))
        np.testing.assert_allclose(again.coeffs, v.coeffs)

    def test_wrong_row_length(self, path3) -> None:
        b = FiberBundle.identity(path3, np.array([1, 2, 1]))
        with pytest.raises(UsageError, match="row 1"):
            section_from_document(b, {"coeffs": [[1.0], [1.0], [1.0]]})


class TestValidators:
    def test_int_list(self) -> None:
        assert parse_int_list("8, 16,32") == [8, 16, 32]
        with pytest.raises(UsageError):
            parse_int_list("8,x")
        with pytest.raises(UsageError):
            parse_int_list("0,1", minimum=1)

    def test_fields(self) -> None:
        with pytest.raises(UsageError):
            validate_field([1.0, math.nan], 2)
        with pytest.raises(UsageError, match="nonnegative"):
            validate_nonnegative(np.array([1.0, -1.0]), what="rho0")

    def test_optional_float(self) -> None:
        assert optional_float(None) is None
        assert optional_float("inf") == math.inf
        assert optional_float("2.5") == 2.5
        with pytest.raises(UsageError):
            optional_float("two")


class TestHelpers:
    def test_run_id(self) -> None:
        rid = generate_run_id()
        assert len(rid) == 12
        assert rid != generate_run_id()

    def test_merge_config(self) -> None:
        base = {"seed": 0, "outputs": {"report": "a.json", "csv": "a.csv"}}
        merged = merge_config(base, {"outputs": {"report": "b.json"}, "seed": None})
        assert merged == {"seed": 0, "outputs": {"report": "b.json", "csv": "a.csv"}}
        assert base["outputs"]["report"] == "a.json"


class TestLinalg:
    def test_field_norms(self, path3) -> None:
        norms = field_norms(path3, np.array([1.0, -2.0, 2.0]))
        assert norms == {"l1": 5.0, "l2": 3.0, "linf": 2.0}

    def test_pencil(self) -> None:
        assert pencil_min(np.diag([2.0, 6.0]), np.diag([1.0, 2.0])) == pytest.approx(2.0)
        assert pencil_min(np.eye(2), np.zeros((2, 2))) == math.inf
        # A negative direction outside range(Q1) admits no K.
        assert pencil_min(np.diag([1.0, -1.0]), np.diag([1.0, 0.0])) == -math.inf
