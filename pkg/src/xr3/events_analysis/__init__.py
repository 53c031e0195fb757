"""Interaction-event detection, action-unit series, log replay
verification, and timeline export.

Detection ops are import-light; the log tools (replay_verify,
export_timeline) pull in the relay protocol and load lazily so the wire
codecs can import event types from here without a cycle.
"""

from .detect import (AUFrame, AUMappingTable, ContactEvent, ContactTracker,
                     GazeEvent, GazeTarget, classify_gaze, compute_aus,
                     detect_contacts, load_au_table)

__all__ = [
    "AUFrame", "AUMappingTable", "ContactEvent", "ContactTracker",
    "GazeEvent", "GazeTarget", "classify_gaze", "compute_aus",
    "detect_contacts", "load_au_table", "ReplayReport", "replay_verify",
    "export_timeline",
]

_LAZY = {
    "ReplayReport": ("xr3.events_analysis.replay", "ReplayReport"),
    "replay_verify": ("xr3.events_analysis.replay", "replay_verify"),
    "export_timeline": ("xr3.events_analysis.timeline", "export_timeline"),
}


def __getattr__(name):
    if name in _LAZY:
        import importlib
        module, attr = _LAZY[name]
        return getattr(importlib.import_module(module), attr)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
