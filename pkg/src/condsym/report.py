"""
JSON reports (schema ``report-v1``).

Every command produces one envelope. Numbers inside the payload are decimal
strings: exact rationals print as ``p/q``, floats with a fixed number of
significant digits, so golden files stay byte-stable across runs.
"""

from __future__ import annotations

import json
import math
from numbers import Integral, Real
from typing import Any, Mapping

import numpy as np
import sympy as sp

from . import __version__
from . import symexpr as se

REPORT_SCHEMA = "report-v1"
TOOL_NAME = "condsym"
FLOAT_DIGITS = 10

STATUSES = ("ok", "ConditionalSymmetry", "LieSymmetry", "NotASymmetry", "pass", "fail", "error")

_ENVELOPE: dict[str, type | tuple[type, ...]] = {
    "schema": str,
    "tool": dict,
    "command": dict,
    "status": str,
    "exit_code": int,
    "payload": dict,
    "assumptions": list,
    "timing": dict,
}


class ReportError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def format_number(value: Any) -> str:
    """Decimal string for an exact or floating value."""
    if isinstance(value, sp.Basic):
        if value.is_Float:
            return format_number(float(value))
        if value.is_Integer:
            return str(int(value))
        if value.is_Rational:
            return f"{value.p}/{value.q}"
        return format_number(float(value))
    if isinstance(value, bool):
        raise ReportError("bad_report", "booleans are not numbers")
    if isinstance(value, Integral):
        return str(int(value))
    if isinstance(value, Real):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, f".{FLOAT_DIGITS}g")
    raise ReportError("bad_report", f"{value!r} is not a number")


def to_json(value: Any) -> Any:
    """Convert a payload to JSON types: numbers become strings, expressions render in the input grammar."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, sp.Basic):
        if value.is_number and (value.is_Rational or value.is_Float):
            return format_number(value)
        return se.render(value)
    if isinstance(value, (Integral, Real, np.number)):
        return format_number(value)
    if isinstance(value, Mapping):
        return {str(k): to_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset, np.ndarray)):
        items = list(value)
        if isinstance(value, (set, frozenset)):
            items = sorted(items, key=str)
        return [to_json(v) for v in items]
    raise ReportError("bad_report", f"cannot serialize {type(value).__name__}")


def build_report(
    command: str,
    arguments: Mapping[str, Any],
    status: str,
    exit_code: int,
    payload: Mapping[str, Any],
    *,
    assumptions: list[str] | None = None,
    elapsed: float | None = None,
) -> dict[str, Any]:
    report = {
        "schema": REPORT_SCHEMA,
        "tool": {"name": TOOL_NAME, "version": __version__},
        "command": {
            "name": command,
            "arguments": {k: to_json(v) for k, v in sorted(arguments.items()) if v is not None},
        },
        "status": status,
        "exit_code": exit_code,
        "payload": to_json(dict(payload)),
        "assumptions": [str(a) for a in assumptions or []],
        "timing": {"elapsed_seconds": format_number(elapsed or 0.0)},
    }
    validate_report(report)
    return report


def _check_payload(value: Any, path: str) -> None:
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise ReportError("bad_report", f"{path}: non-string key {key!r}")
            _check_payload(item, f"{path}.{key}")
    elif isinstance(value, list):
        for i, item in enumerate(value):
            _check_payload(item, f"{path}[{i}]")
    elif isinstance(value, bool) or value is None or isinstance(value, str):
        return
    else:
        raise ReportError("bad_report", f"{path}: {type(value).__name__} is not allowed; numbers are strings")


def validate_report(report: Any) -> None:
    """Raise ReportError unless ``report`` is a well-formed report-v1 document."""
    if not isinstance(report, dict):
        raise ReportError("bad_report", "report must be an object")
    missing = [key for key in _ENVELOPE if key not in report]
    if missing:
        raise ReportError("bad_report", f"missing field(s): {', '.join(missing)}")
    extra = sorted(set(report) - set(_ENVELOPE))
    if extra:
        raise ReportError("bad_report", f"unknown field(s): {', '.join(extra)}")
    for key, expected in _ENVELOPE.items():
        value = report[key]
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ReportError("bad_report", f"{key} has type {type(value).__name__}")
    if report["schema"] != REPORT_SCHEMA:
        raise ReportError("bad_report", f"schema must be {REPORT_SCHEMA}")
    if report["status"] not in STATUSES:
        raise ReportError("bad_report", f"unknown status {report['status']!r}")
    if report["exit_code"] not in (0, 1, 2, 3):
        raise ReportError("bad_report", f"exit code {report['exit_code']} outside 0..3")
    tool = report["tool"]
    if set(tool) != {"name", "version"} or not all(isinstance(v, str) for v in tool.values()):
        raise ReportError("bad_report", "tool must be {name, version} strings")
    command = report["command"]
    if set(command) != {"name", "arguments"} or not isinstance(command["arguments"], dict):
        raise ReportError("bad_report", "command must be {name, arguments}")
    _check_payload(command["arguments"], "command.arguments")
    _check_payload(report["payload"], "payload")
    if not all(isinstance(a, str) for a in report["assumptions"]):
        raise ReportError("bad_report", "assumptions must be strings")
    _check_payload(report["timing"], "timing")


def dumps(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False)


def loads(text: str) -> dict[str, Any]:
    """Parse and validate a serialized report."""
    try:
        report = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportError("bad_report", f"not JSON: {exc.msg}") from exc
    validate_report(report)
    return report


def _text_lines(value: Any, indent: int) -> list[str]:
    pad = "  " * indent
    lines: list[str] = []
    if isinstance(value, dict):
        for key, item in value.items():
            if isinstance(item, (dict, list)) and item:
                lines.append(f"{pad}{key}:")
                lines.extend(_text_lines(item, indent + 1))
            else:
                lines.append(f"{pad}{key}: {_scalar(item)}")
    elif isinstance(value, list):
        for item in value:
            if isinstance(item, dict):
                inner = _text_lines(item, indent + 1)
                if inner:
                    lines.append(f"{pad}- {inner[0].strip()}")
                    lines.extend(inner[1:])
            else:
                lines.append(f"{pad}- {_scalar(item)}")
    else:
        lines.append(f"{pad}{_scalar(value)}")
    return lines


def _scalar(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (list, dict)):
        return "(none)"
    return str(value)


def render_text(report: Mapping[str, Any]) -> str:
    """Human-readable form of a report."""
    head = f"{report['command']['name']}: {report['status']}"
    lines = [head]
    lines.extend(_text_lines(report["payload"], 1))
    if report["assumptions"]:
        lines.append("  assumptions: " + ", ".join(report["assumptions"]))
    return "\n".join(lines)
