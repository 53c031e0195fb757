"""Scripted operator/participant simulators and the end-to-end runner.

Traces stand in for headset input. The motion recipes build palm and
fingertip targets through the robot model's own forward kinematics, so
every target is exactly reachable and the expected IK behavior is known
by construction; ``reach_and_tap`` and ``draw_shape`` script a
known-contact interval against a static participant hand, ``face_sweep``
walks each face input channel 0 -> 1 -> 0, ``neutral`` holds rest.

Traces are reproducible: (recipe, seed, rate, duration) fully determine
every record.
"""

from __future__ import annotations

import asyncio
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .face_mapping import BLENDSHAPE_COUNT, BlendshapeFrame, FaceMappingConfig, \
    load_face_config
from .kinematics import forward_kinematics
from .model import RobotModel, load_robot_model
from .relay import protocol
from .relay.playlist import PedalEvent, Press
from .relay.protocol import MSG, ParticipantFrame
from .relay.server import SessionConfig, SessionServer
from .retargeting import HandSkeletonFrame, OperatorFrame
from .transforms import Transform

RECIPES = ("neutral", "reach_and_tap", "draw_shape", "face_sweep")

OPERATOR_HEAD = Transform(np.array([0.0, 1.6, 1.2]))
PARTICIPANT_HEAD = Transform(np.array([0.0, 1.5, 1.1]))
FAR_AWAY = np.array([1.5, 0.8, 1.5])


@dataclass(frozen=True)
class TraceRecord:
    kind: str  # "operator" | "participant" | "pedal"
    timestamp_us: int
    body: object


@dataclass
class ScriptedTrace:
    recipe: str
    seed: int
    rate_hz: float
    duration_s: float
    records: list[TraceRecord]
    meta: dict = field(default_factory=dict)

    @property
    def operator_frames(self) -> list[OperatorFrame]:
        return [r.body for r in self.records if r.kind == "operator"]


def _ts(k: int, rate_hz: float) -> int:
    return int(k * 1_000_000 // rate_hz)


def _frame_count(duration_s: float, rate_hz: float) -> int:
    return int(round(duration_s * rate_hz))


def _hand_at(model: RobotModel, side: str, arm_q: np.ndarray) -> HandSkeletonFrame:
    """Operator hand whose palm/tips sit exactly on the robot's FK at
    arm_q (identity anchor and zero placement assumed by the recipes)."""
    hand = model.hand(side)
    palm = forward_kinematics(model.arm(side), arm_q)
    thumb_tip = palm.compose(forward_kinematics(hand.thumb_chain, hand.thumb_rest))
    index_tip = palm.compose(forward_kinematics(hand.index_chain, hand.index_rest))
    angles = np.vstack([
        hand.thumb_rest, hand.index_rest, hand.middle_rest, hand.ring_rest,
        np.zeros(4),  # little finger: tracked but discarded downstream
    ])
    return HandSkeletonFrame(palm, thumb_tip, index_tip, angles)


def _operator_frame(model: RobotModel, ts: int, left_q, right_q,
                    blendshapes=None, gaze=(0.0, 0.0)) -> OperatorFrame:
    return OperatorFrame(
        timestamp_us=ts,
        head_pose=OPERATOR_HEAD,
        left_hand=_hand_at(model, "left", left_q),
        right_hand=_hand_at(model, "right", right_q),
        blendshapes=blendshapes if blendshapes is not None
        else BlendshapeFrame.zeros(),
        gaze=gaze,
    )


def _participant_frame(ts: int, right_palm_pos, gaze_target=np.array([0.0, 1.05, 0.0])
                       ) -> ParticipantFrame:
    origin = PARTICIPANT_HEAD.position
    direction = np.asarray(gaze_target, dtype=float) - origin
    direction = direction / np.linalg.norm(direction)
    return ParticipantFrame(
        timestamp_us=ts,
        head_pose=PARTICIPANT_HEAD,
        left_palm=Transform(FAR_AWAY),
        right_palm=Transform(np.asarray(right_palm_pos, dtype=float)),
        blendshapes=BlendshapeFrame.zeros(),
        gaze_origin=origin.copy(),
        gaze_dir=direction,
    )


def _bell(u: float) -> float:
    """Smooth 0 -> 1 -> 0 over u in [0, 1]."""
    return 0.5 * (1.0 - math.cos(2.0 * math.pi * min(max(u, 0.0), 1.0)))


def _rise(u: float) -> float:
    """Smooth 0 -> 1 over u in [0, 1]."""
    return 0.5 * (1.0 - math.cos(math.pi * min(max(u, 0.0), 1.0)))


def _reach_delta(model: RobotModel, side: str, rng) -> np.ndarray:
    """Joint-space excursion for the tap motion, jittered but kept well
    inside the limits. Scaled so the palm travels far enough that the
    rest pose sits safely outside the contact radius."""
    base = np.array([0.30, 0.45, 0.15, 0.60, 0.10, -0.40, 0.20])
    delta = base + rng.uniform(-0.03, 0.03, size=7)
    arm = model.arm(side)
    rest = model.arm_rest(side)
    lo = arm.limits_lo + 0.05
    hi = arm.limits_hi - 0.05
    return np.clip(rest + delta, lo, hi) - rest


def _scan_contact(positions: list[np.ndarray], center: np.ndarray,
                  timestamps: list[int], touch: float, release: float
                  ) -> tuple[int, int] | None:
    """Direct scan of the scripted distance series with the begin/end
    rule; the recipe's own bookkeeping of when contact must occur."""
    begin = end = None
    active = False
    for ts, p in zip(timestamps, positions):
        d = float(np.linalg.norm(p - center))
        if not active and d < touch:
            active = True
            if begin is None:
                begin = ts
        elif active and d > release:
            active = False
            end = ts
    return (begin, end) if begin is not None and end is not None else None


def generate_trace(recipe: str, seed: int = 0, duration_s: float = 10.0,
                   rate_hz: float = 72.0,
                   model: RobotModel | None = None,
                   face_cfg: FaceMappingConfig | None = None) -> ScriptedTrace:
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}; choose from {RECIPES}")
    if rate_hz <= 0:
        raise ValueError("rate must be > 0")
    model = model if model is not None else load_robot_model()
    face_cfg = face_cfg if face_cfg is not None else load_face_config()
    rng = np.random.default_rng(seed)
    n = _frame_count(duration_s, rate_hz)
    timestamps = [_ts(k, rate_hz) for k in range(n)]
    rest_l = model.arm_rest("left")
    rest_r = model.arm_rest("right")

    records: list[TraceRecord] = []
    meta: dict = {"recipe": recipe, "seed": seed, "rate_hz": rate_hz,
                  "duration_s": duration_s, "frames": n}

    if recipe == "neutral":
        for ts in timestamps:
            records.append(TraceRecord("operator", ts,
                                       _operator_frame(model, ts, rest_l, rest_r)))
            records.append(TraceRecord("participant", ts,
                                       _participant_frame(ts, FAR_AWAY)))

    elif recipe in ("reach_and_tap", "draw_shape"):
        delta = _reach_delta(model, "right", rng)
        t0, t1 = 0.2 * duration_s, 0.8 * duration_s
        hold = 0.3 * duration_s if recipe == "draw_shape" else 0.0
        swing = (t1 - t0 - hold) / 2.0
        arm = model.arm("right")

        def q_at(t_s: float) -> np.ndarray:
            if t_s < t0 or t_s > t1:
                return rest_r
            if t_s < t0 + swing:  # approach
                s = _rise((t_s - t0) / swing)
            elif t_s < t0 + swing + hold:  # hold / draw
                s = 1.0
            else:  # retreat
                s = 1.0 - _rise((t_s - t0 - swing - hold) / swing)
            q = rest_r + s * delta
            if recipe == "draw_shape" and t0 + swing <= t_s <= t0 + swing + hold:
                u = (t_s - t0 - swing) / hold
                q = q + np.array([0, 0, 0, 0, 0,
                                  0.03 * math.sin(4 * math.pi * u),
                                  0.03 * math.cos(4 * math.pi * u) - 0.03])
            return q

        qs = [q_at(ts / 1e6) for ts in timestamps]
        palms = [forward_kinematics(arm, q).position for q in qs]
        peak_idx = min(range(n),
                       key=lambda k: abs(timestamps[k] / 1e6 - (t0 + swing + hold / 2)))
        center = palms[peak_idx].copy()

        robot_r = next(p.radius for name, _, p in model.collider_set.entries
                       if name == "right_hand")
        touch = robot_r + model.participant_hand_radius
        release = touch + model.contact_hysteresis
        meta["expected_contact"] = _scan_contact(palms, center, timestamps,
                                                 touch, release)
        meta["draw_window_us"] = (int((t0 + swing) * 1e6),
                                  int((t0 + swing + hold) * 1e6))

        for ts, q in zip(timestamps, qs):
            records.append(TraceRecord("operator", ts,
                                       _operator_frame(model, ts, rest_l, q)))
            records.append(TraceRecord("participant", ts,
                                       _participant_frame(ts, center)))
        records.append(TraceRecord("pedal", int(0.1 * duration_s * 1e6),
                                   PedalEvent(1, Press.SINGLE,
                                              int(0.1 * duration_s * 1e6))))

    elif recipe == "face_sweep":
        idx = face_cfg.input_indices
        channels = [("c_eye", idx["c_eye"]), ("d_lip", idx["d_lip"]),
                    ("brow_l", idx["brow_l"]), ("brow_r", idx["brow_r"]),
                    ("h_chin", idx["h_chin"]), ("gaze_x", None), ("gaze_y", None)]
        slice_s = duration_s / len(channels)
        meta["channels"] = [c for c, _ in channels]
        for k, ts in enumerate(timestamps):
            t_s = ts / 1e6
            ch = min(int(t_s / slice_s), len(channels) - 1)
            u = (t_s - ch * slice_s) / slice_s
            value = _bell(u)
            bs = np.zeros(BLENDSHAPE_COUNT)
            gaze = [0.0, 0.0]
            name, bs_index = channels[ch]
            if bs_index is not None:
                bs[bs_index] = value
            elif name == "gaze_x":
                gaze[0] = value * 0.5
            else:
                gaze[1] = value * 0.5
            records.append(TraceRecord("operator", ts, _operator_frame(
                model, ts, rest_l, rest_r, BlendshapeFrame(bs),
                (gaze[0], gaze[1]))))
            records.append(TraceRecord("participant", ts,
                                       _participant_frame(ts, FAR_AWAY)))

    records.sort(key=lambda r: (r.timestamp_us, r.kind))
    return ScriptedTrace(recipe, seed, rate_hz, duration_s, records, meta)


# ---------------------------------------------------------------------------
# trace files: same container as session logs, tagged by a meta record

def save_trace(trace: ScriptedTrace, path: str | Path) -> None:
    from .relay.sessionlog import SessionLogWriter
    with SessionLogWriter(path) as w:
        w.append_message(MSG.SESSION_META, 0, 0, protocol.encode_json(
            {"kind": "trace", **trace.meta}))
        seq = {"operator": 0, "participant": 0, "pedal": 0}
        for rec in trace.records:
            if rec.kind == "operator":
                w.append_message(MSG.OPERATOR_FRAME, seq["operator"],
                                 rec.timestamp_us,
                                 protocol.encode_operator_frame(rec.body))
            elif rec.kind == "participant":
                w.append_message(MSG.PARTICIPANT_FRAME, seq["participant"],
                                 rec.timestamp_us,
                                 protocol.encode_participant_frame(rec.body))
            else:
                w.append_message(MSG.PEDAL_EVENT, seq["pedal"],
                                 rec.timestamp_us,
                                 protocol.encode_pedal_event(rec.body))
            seq[rec.kind] += 1


def load_trace(path: str | Path) -> ScriptedTrace:
    from .relay.sessionlog import SessionLogReader
    records = []
    meta = {}
    for msg in SessionLogReader(path):
        if msg.msg_type == MSG.SESSION_META:
            meta = protocol.decode_json(msg.payload)
        elif msg.msg_type == MSG.OPERATOR_FRAME:
            records.append(TraceRecord(
                "operator", msg.timestamp_us,
                protocol.decode_operator_frame(msg.payload)))
        elif msg.msg_type == MSG.PARTICIPANT_FRAME:
            records.append(TraceRecord(
                "participant", msg.timestamp_us,
                protocol.decode_participant_frame(msg.payload)))
        elif msg.msg_type == MSG.PEDAL_EVENT:
            records.append(TraceRecord(
                "pedal", msg.timestamp_us,
                protocol.decode_pedal_event(msg.payload)))
    return ScriptedTrace(meta.get("recipe", "unknown"), meta.get("seed", 0),
                         meta.get("rate_hz", 72.0), meta.get("duration_s", 0.0),
                         records, meta)


# ---------------------------------------------------------------------------
# end-to-end runner

@dataclass
class RunSummary:
    frames_sent: int = 0
    frames_received: int = 0
    duplicates: int = 0
    out_of_order: int = 0
    dropped: int = 0
    log_records_dropped: int = 0
    latency_p50_ms: float = 0.0
    latency_p95_ms: float = 0.0
    speech_sequence: list[str] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    log_path: str = ""
    failed: str = ""

    def to_dict(self) -> dict:
        return {
            "frames_sent": self.frames_sent,
            "frames_received": self.frames_received,
            "duplicates": self.duplicates,
            "out_of_order": self.out_of_order,
            "dropped": self.dropped,
            "log_records_dropped": self.log_records_dropped,
            "latency_p50_ms": round(self.latency_p50_ms, 3),
            "latency_p95_ms": round(self.latency_p95_ms, 3),
            "speech_sequence": list(self.speech_sequence),
            "counters": dict(self.counters),
            "log_path": self.log_path,
            "failed": self.failed,
        }


def _hello(role: str, token: str, seq: int = 0) -> bytes:
    return protocol.encode_message(MSG.HELLO, seq, 0, protocol.encode_json(
        {"role": role, "token": token,
         "anchor": list(Transform.identity().to_array())}))


async def _run_loopback(trace: ScriptedTrace, cfg: SessionConfig,
                        realtime: bool) -> RunSummary:
    server = SessionServer(cfg)
    await server.start()
    listener = await server.serve_loopback()

    op_conn = await listener.connect()
    await op_conn.send(_hello("operator", cfg.token))
    welcome = await op_conn.recv()
    pt_conn = await listener.connect()
    await pt_conn.send(_hello("participant", cfg.token))
    await pt_conn.recv()

    summary = RunSummary()
    received_seqs: list[int] = []
    robot_arrivals: asyncio.Queue = asyncio.Queue()

    async def subscriber():
        while True:
            raw = await pt_conn.recv()
            if raw is None:
                return
            msg, _ = protocol.decode_message(raw)
            if msg.msg_type == MSG.ROBOT_FRAME:
                received_seqs.append(msg.seq)
                summary.frames_received += 1
                await robot_arrivals.put(msg.timestamp_us)
            elif msg.msg_type == MSG.SPEECH_COMMAND:
                cmd = protocol.decode_speech_command(msg.payload)
                summary.speech_sequence.append(cmd.clip_id)

    sub_task = asyncio.create_task(subscriber())

    seq = {"operator": 0, "participant": 0}
    start = time.perf_counter()
    for rec in trace.records:
        if realtime:
            lag = rec.timestamp_us / 1e6 - (time.perf_counter() - start)
            if lag > 0:
                await asyncio.sleep(lag)
        if rec.kind == "operator":
            data = protocol.encode_message(
                MSG.OPERATOR_FRAME, seq["operator"], rec.timestamp_us,
                protocol.encode_operator_frame(rec.body))
            seq["operator"] += 1
            summary.frames_sent += 1
            await op_conn.send(data)
            if not realtime:
                # lockstep: the participant reacts to what it has seen, so
                # wait for this frame's broadcast before moving on (also
                # keeps the ingest queue empty, like a real-time stream)
                try:
                    await asyncio.wait_for(robot_arrivals.get(), timeout=5.0)
                except asyncio.TimeoutError:
                    pass  # dropped frame; counted via summary.dropped
        elif rec.kind == "participant":
            data = protocol.encode_message(
                MSG.PARTICIPANT_FRAME, seq["participant"], rec.timestamp_us,
                protocol.encode_participant_frame(rec.body))
            seq["participant"] += 1
            await pt_conn.send(data)
        else:
            data = protocol.encode_message(
                MSG.PEDAL_EVENT, seq["operator"], rec.timestamp_us,
                protocol.encode_pedal_event(rec.body))
            seq["operator"] += 1
            await op_conn.send(data)

    await server._ingest.join()
    await server._log_queue.join()
    await asyncio.sleep(0)
    await op_conn.close()
    await pt_conn.close()
    await asyncio.sleep(0)
    sub_task.cancel()
    await asyncio.gather(sub_task, return_exceptions=True)
    await server.stop()

    summary.duplicates = len(received_seqs) - len(set(received_seqs))
    summary.out_of_order = sum(1 for a, b in zip(received_seqs, received_seqs[1:])
                               if b <= a)
    summary.dropped = summary.frames_sent - summary.frames_received \
        - server.counters["dropped_stale"]
    lat = sorted(server.latencies_ms)
    if lat:
        summary.latency_p50_ms = lat[len(lat) // 2]
        summary.latency_p95_ms = lat[min(len(lat) - 1, int(0.95 * len(lat)))]
    summary.counters = dict(server.counters)
    summary.log_path = str(cfg.log_path)
    summary.failed = repr(server.failed) if server.failed else ""
    return summary


def run_end_to_end(trace: ScriptedTrace, cfg: SessionConfig | None = None,
                   realtime: bool = False) -> RunSummary:
    """Drive a trace through an in-process session over the loopback
    transport; returns delivery/latency/event figures that match the log."""
    if cfg is None:
        log = Path(tempfile.mkdtemp(prefix="xr3-")) / "session.xr3log"
        cfg = SessionConfig(log_path=log)
    return asyncio.run(_run_loopback(trace, cfg, realtime))
