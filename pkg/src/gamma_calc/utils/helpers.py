"""
Helpers
Run identifiers and configuration merging
"""

import uuid
from typing import Any, Dict


def generate_run_id() -> str:
    """
    Short unique id tagging the log records of one command
    """
    return uuid.uuid4().hex[:12]


def merge_config(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """
    Merge two configuration dictionaries, ``override`` winning key by key
    """
    merged = base.copy()

    for key, value in override.items():
        if key in merged and isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = merge_config(merged[key], value)
        elif value is not None:
            merged[key] = value

    return merged
