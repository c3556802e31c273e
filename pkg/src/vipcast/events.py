"""JSON-line event output for vipcast.

All progress, warnings and summaries are printed as one JSON object per line,
e.g. {"type": "epoch", "epoch": 3, "val_mae": 0.21}. High-frequency events
(per batch) are suppressed in quiet mode.
"""

from __future__ import annotations

import json
import sys
from typing import Any, Dict

import numpy as np

HIGH_FREQUENCY_EVENTS = frozenset({"batch"})


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in value]
    return value


def event(event_type: str, **fields: Any) -> Dict[str, Any]:
    """Build an event dictionary with JSON-safe values."""
    evt: Dict[str, Any] = {"type": event_type}
    evt.update(_jsonable(fields))
    return evt


def emit(event_type: str, quiet: bool = False, **fields: Any) -> None:
    """Print an event as a JSON line on stdout.

    Args:
        event_type: Value of the "type" field.
        quiet: Suppress the event if it is a high-frequency type.
        **fields: Additional event fields.
    """
    if quiet and event_type in HIGH_FREQUENCY_EVENTS:
        return
    print(json.dumps(event(event_type, **fields)), flush=True)


def warn(message: str, **fields: Any) -> None:
    """Print a warning event."""
    print(json.dumps(event("warning", message=message, **fields)), flush=True)


def error(message: str, **fields: Any) -> None:
    """Print an error event on stderr."""
    print(json.dumps(event("error", message=message, **fields)), file=sys.stderr, flush=True)
