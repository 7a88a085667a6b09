"""
Formatters
Report, table and field I/O
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from src.gamma_calc.core.errors import UsageError
from src.gamma_calc.modules.bundle import FiberBundle, Section
from src.gamma_calc.utils.validators import validate_field


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types for reports, models and numpy values."""
    if isinstance(obj, BaseModel):
        return json.loads(obj.model_dump_json())
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def format_json(obj: Any) -> str:
    """Sorted keys, fixed indentation, trailing newline: equal inputs give equal bytes."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(obj: Any, path: Optional[str | Path]) -> str:
    text = format_json(obj)
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return text


def read_json(path: str | Path, *, what: str = "file") -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {what} {str(path)!r}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {str(path)!r} is not valid JSON (line {exc.lineno}: {exc.msg})") from exc


def format_csv(rows: Iterable[Mapping[str, Any]], fieldnames: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
    return buf.getvalue()


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_cell(v) for v in value)
    return str(value)


def write_csv(rows: Iterable[Mapping[str, Any]], fieldnames: Sequence[str], path: Optional[str | Path]) -> str:
    text = format_csv(rows, fieldnames)
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return text


# ------------------------------------------------------------- fields


def field_from_document(doc: Any, n: int, *, what: str = "field") -> np.ndarray:
    """A scalar field from ``[...]`` or ``{"values": [...]}``."""
    values = doc.get("values") if isinstance(doc, Mapping) else doc
    if values is None:
        raise UsageError(f"{what} document needs a 'values' list")
    return validate_field(values, n, what=what)


def read_field(path: str | Path, n: int, *, what: str = "field") -> np.ndarray:
    return field_from_document(read_json(path, what=what), n, what=what)


def section_to_document(s: Section) -> dict[str, Any]:
    return {"bundle": s.bundle.label, **s.to_dict()}


def section_from_document(bundle: FiberBundle, doc: Any, *, what: str = "section") -> Section:
    """Inverse of `section_to_document` against an existing bundle.

    ``coeffs`` is a per-point list of fiber coordinates; each entry must
    match the fiber dimension of its point.
    """
    if not isinstance(doc, Mapping) or "coeffs" not in doc:
        raise UsageError(f"{what} document needs a 'coeffs' list")
    rows = doc["coeffs"]
    if not isinstance(rows, list) or len(rows) != bundle.n:
        raise UsageError(f"{what} needs {bundle.n} coefficient rows")
    out = np.zeros((bundle.n, bundle.width))
    for i, (row, d) in enumerate(zip(rows, bundle.dims)):
        vec = np.asarray(row, dtype=float).ravel()
        if vec.shape[0] != d:
            raise UsageError(f"{what} row {i} has {vec.shape[0]} coordinates, fiber dimension is {int(d)}")
        out[i, :d] = vec
    return Section(bundle, out)


def bundle_to_document(b: FiberBundle) -> dict[str, Any]:
    return {"label": b.label, **b.to_dict()}
