"""Unit tests for the structured JSON logger."""

from __future__ import annotations

import io
import json
import logging
import sys

from src.gamma_calc.core.logging import (
    JSONLogFormatter,
    TextLogFormatter,
    configure_logging,
    run_id_var,
    set_run_id,
)


class TestJSONLogFormatter:
    def test_emits_single_line_json(self) -> None:
        f = JSONLogFormatter()
        rec = logging.LogRecord(
            "gamma_calc.core.space",
            logging.INFO,
            "/path/to/space.py",
            10,
            "heat flow %s",
            ("done",),
            None,
        )
        out = f.format(rec)
        assert "\n" not in out
        parsed = json.loads(out)
        assert parsed["level"] == "INFO"
        assert parsed["logger"] == "gamma_calc.core.space"
        assert parsed["msg"] == "heat flow done"
        assert parsed["ts"].endswith("Z")

    def test_includes_run_id_when_set(self) -> None:
        f = JSONLogFormatter()
        token = run_id_var.set("abc123def456")
        try:
            rec = logging.LogRecord("x", logging.INFO, "x.py", 1, "msg", None, None)
            parsed = json.loads(f.format(rec))
            assert parsed["run_id"] == "abc123def456"
        finally:
            run_id_var.reset(token)

    def test_omits_run_id_outside_a_run(self) -> None:
        rec = logging.LogRecord("x", logging.INFO, "x.py", 1, "msg", None, None)
        parsed = json.loads(JSONLogFormatter().format(rec))
        assert "run_id" not in parsed

    def test_promotes_extra_fields(self) -> None:
        f = JSONLogFormatter()
        logger = logging.getLogger("extra-test")
        buf = io.StringIO()
        h = logging.StreamHandler(buf)
        h.setFormatter(f)
        logger.addHandler(h)
        logger.setLevel(logging.INFO)
        try:
            logger.info("rule evaluated", extra={"rule": "adjointness", "relative": 1.5e-16})
            parsed = json.loads(buf.getvalue().strip())
            assert parsed["rule"] == "adjointness"
            assert parsed["relative"] == 1.5e-16
        finally:
            logger.removeHandler(h)

    def test_includes_exception_traceback(self) -> None:
        f = JSONLogFormatter()
        try:
            raise ValueError("boom")
        except ValueError:
            exc_info = sys.exc_info()
            rec = logging.LogRecord("x", logging.ERROR, "x.py", 1, "boom-msg", None, exc_info)
        parsed = json.loads(f.format(rec))
        assert "ValueError" in parsed["exc_info"]


class TestTextLogFormatter:
    def test_text_format_includes_short_run_id(self) -> None:
        f = TextLogFormatter()
        token = run_id_var.set("0123456789ab")
        try:
            rec = logging.LogRecord("x", logging.INFO, "x.py", 1, "msg", None, None)
            out = f.format(rec)
            assert "run=01234567" in out
            assert "89ab" not in out
        finally:
            run_id_var.reset(token)

    def test_text_format_marks_missing_run_id(self) -> None:
        rec = logging.LogRecord("x", logging.INFO, "x.py", 1, "msg", None, None)
        assert "[run=-]" in TextLogFormatter().format(rec)


class TestConfigureLogging:
    def test_replaces_existing_handlers(self) -> None:
        root = logging.getLogger()
        existing = logging.NullHandler()
        root.addHandler(existing)

        configure_logging(level="INFO", fmt="json", log_dir=None)
        assert existing not in root.handlers
        assert len(root.handlers) == 1
        assert isinstance(root.handlers[0].formatter, JSONLogFormatter)

    def test_text_mode(self) -> None:
        configure_logging(level="DEBUG", fmt="text", log_dir=None)
        root = logging.getLogger()
        assert root.level == logging.DEBUG
        assert isinstance(root.handlers[0].formatter, TextLogFormatter)

    def test_file_handler_in_log_dir(self, tmp_path) -> None:
        configure_logging(level="INFO", fmt="json", log_dir=str(tmp_path / "logs"))
        try:
            assert len(logging.getLogger().handlers) == 2
            assert (tmp_path / "logs").is_dir()
        finally:
            configure_logging(level="WARNING", fmt="json", log_dir=None)

    def test_set_run_id(self) -> None:
        set_run_id("feedface0000")
        try:
            assert run_id_var.get() == "feedface0000"
        finally:
            set_run_id(None)
