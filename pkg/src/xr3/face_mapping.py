"""Tracked face signals to screen-face parameters.

Seven blendshape channels (eye closedness, lip-corner dimple, left/right
brow lower, chin raise) plus the gaze direction drive the robot's screen
face: eyelid profile vertices, eye rotation, eye depth scale, one ear
rotation DoF per ear, and the on-screen eye position.

The mapping is a pure function. The ``rest`` parameters inside
:class:`FaceMappingConfig` are the clamp bounds for the eyelid vertices
(the min/max below clamp against the rest profile, keeping the map
stateless); they are distinct from the *displayed* neutral face that the
expressivity gate substitutes (``RobotModel.face_rest``).
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

BLENDSHAPE_COUNT = 70

INPUT_NAMES = ("c_eye", "d_lip", "brow_l", "brow_r", "h_chin")


@dataclass(frozen=True)
class BlendshapeFrame:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(BLENDSHAPE_COUNT)
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("blendshape values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @staticmethod
    def zeros() -> "BlendshapeFrame":
        return BlendshapeFrame(np.zeros(BLENDSHAPE_COUNT))


@dataclass(frozen=True)
class FaceInputs:
    c_eye: float
    d_lip: float
    h_brow_l: float
    h_brow_r: float
    h_chin: float
    theta_x: float
    theta_y: float


@dataclass(frozen=True)
class ScreenFaceParams:
    vertex_up_y: float = 0.0
    vertex_low_y: float = 0.0
    r_eye_y: float = 0.0
    s_eye_z: float = 1.0
    r_ear_x_left: float = 0.0
    r_ear_x_right: float = 0.0
    p_eye_x: float = 0.0
    p_eye_y: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.vertex_up_y, self.vertex_low_y, self.r_eye_y,
                         self.s_eye_z, self.r_ear_x_left, self.r_ear_x_right,
                         self.p_eye_x, self.p_eye_y])

    @staticmethod
    def from_array(a) -> "ScreenFaceParams":
        a = [float(x) for x in a]
        return ScreenFaceParams(*a)


@dataclass(frozen=True)
class FaceMappingConfig:
    theta_max: float = math.pi / 4
    rest: ScreenFaceParams = field(
        default_factory=lambda: ScreenFaceParams(vertex_up_y=-1.0, vertex_low_y=1.0))
    input_indices: dict = field(
        default_factory=lambda: {"c_eye": 12, "d_lip": 24, "brow_l": 30,
                                 "brow_r": 31, "h_chin": 40})
    brow_combine: str = "average"

    def __post_init__(self):
        if self.theta_max <= 0:
            raise ValueError("theta_max must be > 0")
        if self.brow_combine not in ("average", "max"):
            raise ValueError(f"unknown brow_combine {self.brow_combine!r}")
        missing = [k for k in INPUT_NAMES if k not in self.input_indices]
        if missing:
            raise ValueError(f"input_indices missing {missing}")
        idx = [self.input_indices[k] for k in INPUT_NAMES]
        if len(set(idx)) != len(idx):
            raise ValueError("input_indices must be distinct")
        bad = [i for i in idx if not 0 <= i < BLENDSHAPE_COUNT]
        if bad:
            raise ValueError(f"blendshape indices out of range: {bad}")

    def combine_brows(self, left: float, right: float) -> float:
        if self.brow_combine == "max":
            return max(left, right)
        return 0.5 * (left + right)


def select_face_inputs(frame: BlendshapeFrame, gaze: tuple[float, float],
                       cfg: FaceMappingConfig) -> FaceInputs:
    """Pick the configured blendshape channels out of a full frame."""
    idx = cfg.input_indices
    v = frame.values
    return FaceInputs(
        c_eye=float(v[idx["c_eye"]]),
        d_lip=float(v[idx["d_lip"]]),
        h_brow_l=float(v[idx["brow_l"]]),
        h_brow_r=float(v[idx["brow_r"]]),
        h_chin=float(v[idx["h_chin"]]),
        theta_x=float(gaze[0]),
        theta_y=float(gaze[1]),
    )


def map_face(inputs: FaceInputs, cfg: FaceMappingConfig) -> ScreenFaceParams:
    """Screen-face parameters for one input sample.

    With H = chin raise + combined brow activity:
      vertex_low_y = min(d_lip, rest.vertex_low_y)
      vertex_up_y  = max(-H/2, rest.vertex_up_y)
      r_eye_y      = H * pi/6
      r_ear_x      = pi/2 * (-h_chin + h_brow), both ears
      s_eye_z      = 1 - 0.9 * c_eye
      p_eye        = clamp(-(theta_x, theta_y) / theta_max, -1, 1)
    """
    h_brow = cfg.combine_brows(inputs.h_brow_l, inputs.h_brow_r)
    h = inputs.h_chin + h_brow
    r_ear = (math.pi / 2.0) * (-inputs.h_chin + h_brow)
    # "+ 0.0" canonicalizes IEEE negative zeros from the negations, so a
    # neutral mapped face is byte-identical to the neutral rest face
    return ScreenFaceParams(
        vertex_low_y=min(inputs.d_lip, cfg.rest.vertex_low_y),
        vertex_up_y=max(-h / 2.0, cfg.rest.vertex_up_y) + 0.0,
        r_eye_y=h * math.pi / 6.0,
        s_eye_z=1.0 - 0.9 * inputs.c_eye,
        r_ear_x_left=r_ear,
        r_ear_x_right=r_ear,
        p_eye_x=_clamp_unit(-inputs.theta_x / cfg.theta_max) + 0.0,
        p_eye_y=_clamp_unit(-inputs.theta_y / cfg.theta_max) + 0.0,
    )


def _clamp_unit(x: float) -> float:
    return -1.0 if x < -1.0 else (1.0 if x > 1.0 else x)


def face_config_from_dict(doc: dict) -> FaceMappingConfig:
    rest = ScreenFaceParams(vertex_up_y=-1.0, vertex_low_y=1.0)
    if "rest" in doc:
        rest = replace(rest, **doc["rest"])
    return FaceMappingConfig(
        theta_max=float(doc.get("theta_max", math.pi / 4)),
        rest=rest,
        input_indices=dict(doc.get("indices", FaceMappingConfig().input_indices)),
        brow_combine=doc.get("brow_combine", "average"),
    )


def face_config_to_dict(cfg: FaceMappingConfig) -> dict:
    return {
        "theta_max": cfg.theta_max,
        "rest": {"vertex_up_y": cfg.rest.vertex_up_y,
                 "vertex_low_y": cfg.rest.vertex_low_y},
        "indices": dict(cfg.input_indices),
        "brow_combine": cfg.brow_combine,
    }


def load_face_config(path: str | Path | None = None) -> FaceMappingConfig:
    """Load a face mapping config; ``None`` loads the bundled default.

    Bad indices or ranges surface here, at load time, as ConfigError.
    """
    if path is None:
        ref = importlib.resources.files("xr3.data").joinpath("face_default.yaml")
        doc = yaml.safe_load(ref.read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    try:
        return face_config_from_dict(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"face mapping config: {exc}") from exc
