"""Deterministic log replay verification.

Retargeting is a pure function of (config, state, frame sequence), so a
session log can be audited: re-run the pipeline over the logged operator
frames and require the logged robot control frames byte-for-byte. Any
divergence means the log was tampered with, produced by a different
configuration, or the pipeline is not deterministic — each one worth
knowing about.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..colocation import AnchorObservation, PlacementOffset
from ..face_mapping import face_config_from_dict
from ..kinematics import IkSolverConfig
from ..model import model_from_dict
from ..retargeting import (ExpressivityLevel, PipelineConfig, RetargetPipeline,
                           apply_expressivity_gate)
from ..transforms import Transform
from ..relay import protocol
from ..relay.protocol import MSG
from ..relay.sessionlog import SessionLogReader


@dataclass
class Divergence:
    timestamp_us: int
    detail: str


@dataclass
class ReplayReport:
    verifiable: bool
    reason: str = ""
    frames_checked: int = 0
    divergences: list[Divergence] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verifiable and not self.divergences

    def summary(self) -> str:
        if not self.verifiable:
            return f"unverifiable: {self.reason}"
        status = "ok" if not self.divergences else \
            f"{len(self.divergences)} divergence(s)"
        return f"{self.frames_checked} frames checked, {status}"


def _pipeline_from_meta(meta: dict,
                        level_override: ExpressivityLevel | None,
                        placement_override: PlacementOffset | None
                        ) -> RetargetPipeline:
    model = model_from_dict(meta["model"])
    face_cfg = face_config_from_dict(meta["face"])
    ik = meta.get("ik", {})
    placement_doc = meta.get("placement", {})
    placement = PlacementOffset(
        np.asarray(placement_doc.get("translation", [0, 0, 0]), dtype=float),
        float(placement_doc.get("yaw", 0.0)))
    cfg = PipelineConfig(
        model=model,
        face_cfg=face_cfg,
        placement=placement_override if placement_override is not None
        else placement,
        level=level_override if level_override is not None
        else ExpressivityLevel(meta.get("level", 2)),
        ik_cfg=IkSolverConfig(**ik) if ik else IkSolverConfig(),
    )
    return RetargetPipeline(cfg)


def replay_verify(log_path: str | Path,
                  level_override: ExpressivityLevel | None = None,
                  placement_override: PlacementOffset | None = None
                  ) -> ReplayReport:
    """Re-run retargeting over a session log and compare outputs.

    Overrides pin a channel for the whole replay (logged changes to that
    channel are then ignored); used to answer "what would this session
    have looked like under a different condition".
    """
    reader = SessionLogReader(log_path)
    records = reader.messages()
    if not records or records[0].msg_type != MSG.SESSION_META:
        return ReplayReport(False, "log has no leading config snapshot")
    meta = protocol.decode_json(records[0].payload)
    if meta.get("kind") != "session_meta":
        return ReplayReport(False, "first record is not a session snapshot")

    shape = meta.get("ingest_shape", "operator_frames")
    pipeline = _pipeline_from_meta(meta, level_override, placement_override)
    report = ReplayReport(True)

    expected: list[tuple[int, bytes]] = []
    pending_gate_input = None

    for msg in records[1:]:
        mt = msg.msg_type
        if mt == MSG.SESSION_STATE:
            doc = protocol.decode_json(msg.payload)
            if doc.get("event") == "operator_connected" and "anchor" in doc:
                pipeline.set_anchor(AnchorObservation(
                    Transform.from_array(np.asarray(doc["anchor"]))))
        elif mt == MSG.PLACEMENT_OFFSET:
            if placement_override is None:
                pipeline.set_placement(protocol.decode_placement(msg.payload))
        elif mt == MSG.EXPRESSIVITY_LEVEL:
            if level_override is None:
                pipeline.set_level(protocol.decode_level(msg.payload))
        elif mt == MSG.OPERATOR_FRAME and shape == "operator_frames":
            frame = protocol.decode_operator_frame(msg.payload)
            robot = pipeline.retarget_frame(frame)
            if robot is not None:
                expected.append((robot.timestamp_us,
                                 protocol.encode_robot_frame(robot)))
        elif mt == MSG.ROBOT_FRAME and shape == "operator_frames":
            report.frames_checked += 1
            if not expected:
                report.divergences.append(Divergence(
                    msg.timestamp_us, "logged robot frame without a "
                    "matching operator frame"))
                continue
            ts, payload = expected.pop(0)
            if msg.payload != payload:
                report.divergences.append(Divergence(
                    msg.timestamp_us, "robot frame bytes differ from replay"))
        elif mt == MSG.ROBOT_FRAME and shape == "robot_frames":
            # records alternate ingested/broadcast; the broadcast one must
            # equal the gate applied to the ingested one
            if pending_gate_input is None:
                pending_gate_input = msg
            else:
                report.frames_checked += 1
                frame = protocol.decode_robot_frame(pending_gate_input.payload)
                gated = apply_expressivity_gate(
                    frame, pipeline.level, pipeline.model.face_rest)
                if protocol.encode_robot_frame(gated) != msg.payload:
                    report.divergences.append(Divergence(
                        msg.timestamp_us, "gated robot frame differs"))
                pending_gate_input = None

    for ts, _ in expected:
        report.divergences.append(Divergence(
            ts, "replay produced a robot frame the log does not contain"))
    return report
