"""Pure detection operations: gaze-target classification, hand-contact
tracking with hysteresis, and blendshape -> action-unit computation."""

from __future__ import annotations

import enum
import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..colliders import Primitive
from ..errors import ConfigError
from ..face_mapping import BLENDSHAPE_COUNT, BlendshapeFrame

AU_COUNT = 25


class GazeTarget(str, enum.Enum):
    HEAD = "head"
    TRUNK = "trunk"
    LEFT_HAND = "left_hand"
    RIGHT_HAND = "right_hand"
    NONE = "none"


@dataclass(frozen=True)
class GazeEvent:
    timestamp_us: int
    target: GazeTarget


@dataclass(frozen=True)
class ContactEvent:
    timestamp_us: int
    kind: str  # "begin" | "end"
    participant_hand: str  # "left" | "right"
    robot_hand: str


def classify_gaze(eye_origin, gaze_dir,
                  posed_colliders: list[tuple[str, Primitive]]) -> GazeTarget:
    """Nearest positive-ray intersection wins; NONE when nothing is hit.

    ``posed_colliders`` are (name, primitive) pairs already expressed in
    the same frame as the ray (the shared frame).
    """
    eye_origin = np.asarray(eye_origin, dtype=np.float64).reshape(3)
    gaze_dir = np.asarray(gaze_dir, dtype=np.float64).reshape(3)
    n = float(np.linalg.norm(gaze_dir))
    if abs(n - 1.0) > 1e-6:
        if n < 1e-12:
            raise ValueError("gaze direction is zero")
        gaze_dir = gaze_dir / n

    best_t = None
    best_name = GazeTarget.NONE
    for name, prim in posed_colliders:
        t = prim.ray_hit(eye_origin, gaze_dir)
        if t is not None and (best_t is None or t < best_t):
            best_t = t
            best_name = GazeTarget(name)
    return best_name


@dataclass(frozen=True)
class HandSphere:
    hand: str  # "left" | "right"
    center: np.ndarray
    radius: float


@dataclass
class ContactTracker:
    """Begin/end contact events between participant and robot hand
    spheres; hysteresis keeps a contact alive until the separation
    exceeds touch distance + hysteresis, so events never chatter."""

    hysteresis: float = 0.005
    active: set[tuple[str, str]] = field(default_factory=set)

    def update(self, timestamp_us: int,
               participant: list[HandSphere],
               robot: list[HandSphere]) -> list[ContactEvent]:
        events = []
        for p in participant:
            for r in robot:
                pair = (p.hand, r.hand)
                d = float(np.linalg.norm(p.center - r.center))
                touch = p.radius + r.radius
                if pair not in self.active and d < touch:
                    self.active.add(pair)
                    events.append(ContactEvent(timestamp_us, "begin",
                                               p.hand, r.hand))
                elif pair in self.active and d > touch + self.hysteresis:
                    self.active.discard(pair)
                    events.append(ContactEvent(timestamp_us, "end",
                                               p.hand, r.hand))
        return events


def detect_contacts(participant: list[HandSphere], robot: list[HandSphere],
                    tracker: ContactTracker,
                    timestamp_us: int) -> list[ContactEvent]:
    """Stateless-looking facade over :class:`ContactTracker` (the tracker
    carries the begin/end state between calls)."""
    return tracker.update(timestamp_us, participant, robot)


@dataclass(frozen=True)
class AUMappingTable:
    labels: tuple[str, ...]
    weights: np.ndarray  # (25, 70)
    bias: np.ndarray     # (25,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.shape != (AU_COUNT, BLENDSHAPE_COUNT):
            raise ConfigError(
                f"AU weight matrix must be {AU_COUNT}x{BLENDSHAPE_COUNT}, "
                f"got {w.shape}")
        if b.shape != (AU_COUNT,) or len(self.labels) != AU_COUNT:
            raise ConfigError("AU bias/labels length mismatch")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class AUFrame:
    timestamp_us: int
    intensities: np.ndarray  # (25,) in [0, 1]


def compute_aus(frame: BlendshapeFrame, table: AUMappingTable,
                timestamp_us: int = 0) -> AUFrame:
    """intensities = clamp(W @ blendshapes + bias, 0, 1)."""
    raw = table.weights @ frame.values + table.bias
    return AUFrame(timestamp_us, np.clip(raw, 0.0, 1.0))


def au_table_from_dict(doc: dict) -> AUMappingTable:
    rows = doc.get("aus")
    if not rows:
        raise ConfigError("AU table: missing 'aus' list")
    labels = []
    weights = np.zeros((len(rows), BLENDSHAPE_COUNT))
    bias = np.zeros(len(rows))
    for i, row in enumerate(rows):
        labels.append(str(row["label"]))
        bias[i] = float(row.get("bias", 0.0))
        for idx, w in row.get("weights", {}).items():
            idx = int(idx)
            if not 0 <= idx < BLENDSHAPE_COUNT:
                raise ConfigError(f"AU {row['label']}: blendshape index {idx} "
                                  "out of range")
            weights[i, idx] = float(w)
    return AUMappingTable(tuple(labels), weights, bias)


def load_au_table(path: str | Path | None = None) -> AUMappingTable:
    """Load an AU mapping table; ``None`` loads the bundled default."""
    if path is None:
        ref = importlib.resources.files("xr3.data").joinpath("au_table_default.yaml")
        doc = yaml.safe_load(ref.read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    return au_table_from_dict(doc)
