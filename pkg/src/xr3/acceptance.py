"""Acceptance suite: one callable per criterion, shared by the CLI
(``xr3 check``) and the pytest acceptance module.

Each criterion returns (ok, detail). Oracles here are written
independently of the implementation paths they check: the face-equation
reference is a direct transcription, the gaze oracle marches the ray in
millimeter steps against analytic inside-tests, and the IK oracle only
ever generates targets through forward kinematics.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .face_mapping import (BlendshapeFrame, FaceInputs, FaceMappingConfig,
                           ScreenFaceParams, map_face)
from .kinematics import IkSolverConfig, forward_kinematics, solve_ik_pose, \
    solve_ik_position
from .model import load_robot_model
from .retargeting import (ExpressivityLevel, HandOutput, RobotControlFrame,
                          apply_expressivity_gate)
from . import quat

# -- criterion 1: appendix equation exactness --------------------------------


def _face_reference(i: FaceInputs, rest_low: float, rest_up: float,
                    theta_max: float, brow_mode: str) -> tuple:
    """Direct transcription of the six screen-face equations, kept
    deliberately separate from map_face."""
    brow = max(i.h_brow_l, i.h_brow_r) if brow_mode == "max" \
        else (i.h_brow_l + i.h_brow_r) / 2.0
    h = i.h_chin + brow
    vertex_low = min(i.d_lip, rest_low)
    vertex_up = max(-(i.h_chin + brow) / 2.0, rest_up)
    r_eye = h * math.pi / 6.0
    r_ear = math.pi / 2.0 * (-i.h_chin + brow)
    s_eye = 1.0 - 0.9 * i.c_eye
    px = max(-1.0, min(1.0, -i.theta_x / theta_max))
    py = max(-1.0, min(1.0, -i.theta_y / theta_max))
    return (vertex_up, vertex_low, r_eye, s_eye, r_ear, r_ear, px, py)


def check_appendix_exactness(samples: int = 1000) -> tuple[bool, str]:
    t0 = time.perf_counter()
    cfg = FaceMappingConfig(theta_max=math.pi / 4)
    rng = np.random.default_rng(20260810)
    worst = 0.0
    for _ in range(samples):
        i = FaceInputs(*rng.random(5), *(rng.uniform(-2.0, 2.0, 2)))
        got = map_face(i, cfg).to_array()
        want = np.array(_face_reference(i, cfg.rest.vertex_low_y,
                                        cfg.rest.vertex_up_y, cfg.theta_max,
                                        cfg.brow_combine))
        worst = max(worst, float(np.max(np.abs(got - want))))
        if worst > 1e-9:
            return False, f"component error {worst:.2e} exceeds 1e-9"

    zero = FaceInputs(0, 0, 0, 0, 0, 0.0, 0.0)
    examples = [
        # 0.1 as the depth-scale equation itself produces it in IEEE
        # arithmetic (1 - 0.9 differs from the decimal literal by one ulp)
        (replace(zero, c_eye=1.0), "s_eye_z", 1.0 - 0.9 * 1.0),
        (replace(zero, h_chin=1.0), "r_eye_y", math.pi / 6),
        (replace(zero, h_chin=1.0), "r_ear_x_left", -math.pi / 2),
        (replace(zero, h_chin=1.0), "vertex_up_y", -0.5),
    ]
    for inputs, attr, want in examples:
        got = getattr(map_face(inputs, cfg), attr)
        if got != want:
            return False, f"worked example {attr}: got {got}, want {want}"
    clamped = map_face(replace(zero, theta_x=math.pi / 4, theta_y=-math.pi / 2),
                       cfg)
    if (clamped.p_eye_x, clamped.p_eye_y) != (-1.0, 1.0):
        return False, f"gaze clamp gave ({clamped.p_eye_x}, {clamped.p_eye_y})"

    dt = time.perf_counter() - t0
    if dt >= 1.0:
        return False, f"runtime {dt:.2f}s exceeds 1s"
    return True, f"{samples} samples, worst component error {worst:.2e}, " \
                 f"{dt * 1e3:.0f} ms"


# -- criterion 2: IK oracle suite ---------------------------------------------


def _solve_corpus(model, targets_per_chain: int):
    """Solve FK-generated targets on every chain; returns stats and a
    digest of all outputs for determinism comparison."""
    cfg = IkSolverConfig()
    rng = np.random.default_rng(424242)
    failures = []
    blobs = []
    for side in ("left", "right"):
        arm = model.arm(side)
        lo, hi = arm.limits_lo, arm.limits_hi
        rest = model.arm_rest(side)
        for k in range(targets_per_chain):
            qstar = lo + rng.random(7) * (hi - lo)
            res = solve_ik_pose(arm, forward_kinematics(arm, qstar), rest, cfg)
            blobs.append(res.q.tobytes())
            if not (res.converged and res.pos_err < 1e-3
                    and res.rot_err < math.radians(0.5)):
                failures.append(f"{side} arm #{k}")
            if np.any(res.q < lo) or np.any(res.q > hi):
                failures.append(f"{side} arm #{k} limits")
    for side in ("left", "right"):
        hand = model.hand(side)
        for name in ("thumb", "index"):
            chain = getattr(hand, f"{name}_chain")
            seed0 = getattr(hand, f"{name}_rest")
            lo, hi = chain.limits_lo, chain.limits_hi
            for k in range(targets_per_chain):
                qstar = lo + rng.random(4) * (hi - lo)
                target = forward_kinematics(chain, qstar).position
                res = solve_ik_position(chain, target, seed0, cfg)
                blobs.append(res.q.tobytes())
                if not (res.converged and res.pos_err < 2e-3):
                    failures.append(f"{side} {name} #{k}")
                if np.any(res.q < lo) or np.any(res.q > hi):
                    failures.append(f"{side} {name} #{k} limits")
    return failures, b"".join(blobs)


def check_ik_oracle(targets_per_chain: int = 500) -> tuple[bool, str]:
    t0 = time.perf_counter()
    model = load_robot_model()
    failures, digest1 = _solve_corpus(model, targets_per_chain)
    if failures:
        return False, f"{len(failures)} non-converged/limit violations, " \
                      f"first: {failures[0]}"
    _, digest2 = _solve_corpus(model, targets_per_chain)
    if digest1 != digest2:
        return False, "solver output differs between two identical runs"
    dt = time.perf_counter() - t0
    if dt >= 30.0:
        return False, f"runtime {dt:.1f}s exceeds 30s"
    n = targets_per_chain * 2
    return True, f"{n} arm poses + {2 * n} fingertips converged, " \
                 f"bit-identical twice, {dt:.1f}s"


# -- criterion 3: gate safety -------------------------------------------------


def _random_robot_frame(rng) -> RobotControlFrame:
    def hand():
        return HandOutput(
            arm_q=rng.uniform(-2.5, 2.5, 7), thumb_q=rng.uniform(-0.5, 1.5, 4),
            index_q=rng.uniform(-0.5, 1.5, 4), middle_q=rng.uniform(-0.5, 1.5, 4),
            ring_q=rng.uniform(-0.5, 1.5, 4),
            arm_converged=bool(rng.integers(2)),
            thumb_converged=bool(rng.integers(2)),
            index_converged=bool(rng.integers(2)),
            stale=bool(rng.integers(2)))

    q = rng.normal(size=4)
    face = ScreenFaceParams(
        vertex_up_y=rng.uniform(-1, 0), vertex_low_y=rng.uniform(0, 1),
        r_eye_y=rng.uniform(0, 1), s_eye_z=rng.uniform(0.1, 1.0),
        r_ear_x_left=rng.uniform(-1.6, 1.6), r_ear_x_right=rng.uniform(-1.6, 1.6),
        p_eye_x=rng.uniform(-1, 1), p_eye_y=rng.uniform(-1, 1))
    return RobotControlFrame(int(rng.integers(1, 10 ** 9)),
                             quat.normalize(q), hand(), hand(), face)


def check_gate_safety(samples: int = 10_000) -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    rest = load_robot_model().face_rest
    for k in range(samples):
        frame = _random_robot_frame(rng)
        for level in ExpressivityLevel:
            out = apply_expressivity_gate(frame, level, rest)
            for side in ("left", "right"):
                a, b = getattr(frame, side), getattr(out, side)
                if (a.arm_q.tobytes() != b.arm_q.tobytes()
                        or a.angles_flat().tobytes() != b.angles_flat().tobytes()):
                    return False, f"#{k} {level.name}: {side} joints changed"
            if frame.head_orientation.tobytes() != out.head_orientation.tobytes():
                return False, f"#{k} {level.name}: head changed"
            if level == ExpressivityLevel.FULL and out.face != frame.face:
                return False, f"#{k} FULL altered the face"
            if level == ExpressivityLevel.HEAD_ONLY:
                if out.face != replace(rest, p_eye_x=0.0, p_eye_y=0.0):
                    return False, f"#{k} HEAD_ONLY face is not rest"
            if level == ExpressivityLevel.HEAD_EYES:
                if out.face != replace(rest, p_eye_x=frame.face.p_eye_x,
                                       p_eye_y=frame.face.p_eye_y):
                    return False, f"#{k} HEAD_EYES gated wrong channels"
    return True, f"{samples} frames x 3 levels, physical channels untouched"


# -- criterion 4: protocol ----------------------------------------------------

# frozen by hand from the header layout: magic | version 1 | type 1 |
# reserved | seq 0 | timestamp 0 | payload length 0
MINIMAL_FRAME = bytes([
    0x58, 0x52, 0x33, 0x4C,  # "XR3L"
    0x01, 0x00,              # version
    0x01, 0x00,              # msg_type
    0x00, 0x00,              # reserved
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,  # seq
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,  # timestamp_us
    0x00, 0x00, 0x00, 0x00,  # payload_len
])


def check_protocol(samples: int = 10_000) -> tuple[bool, str]:
    from .errors import ProtocolError
    from .relay import protocol

    frame = protocol.encode_message(1, 0, 0, b"")
    if frame != MINIMAL_FRAME or len(frame) != 30:
        return False, "minimal frame does not match the hand-computed bytes"

    rng = np.random.default_rng(99)
    for k in range(samples):
        msg_type = int(rng.integers(0, 2 ** 16))
        seq = int(rng.integers(0, 2 ** 63))
        ts = int(rng.integers(0, 2 ** 63))
        payload = rng.bytes(int(rng.integers(0, 512)))
        data = protocol.encode_message(msg_type, seq, ts, payload)
        msg, end = protocol.decode_message(data)
        if (msg.msg_type, msg.seq, msg.timestamp_us, msg.payload) != \
                (msg_type, seq, ts, payload) or end != len(data):
            return False, f"round trip #{k} mismatch"

    sample = protocol.encode_message(2, 5, 6, b"payload")
    for cut in (0, 3, 10, 29, len(sample) - 1):
        try:
            protocol.decode_message(sample[:cut])
            return False, f"truncated frame (len {cut}) decoded"
        except ProtocolError:
            pass
    for corrupt in (b"YR3L" + sample[4:],               # magic
                    sample[:4] + b"\x09\x00" + sample[6:]):  # version
        try:
            protocol.decode_message(corrupt)
            return False, "corrupt frame decoded"
        except ProtocolError:
            pass
    return True, f"{samples} round trips, 30-byte frame exact, " \
                 "truncation/corruption rejected"


# -- criterion 5: end-to-end ----------------------------------------------------


def check_end_to_end(duration_s: float = 60.0, rate_hz: float = 72.0,
                     realtime: bool = False) -> tuple[bool, str]:
    from .events_analysis import replay_verify
    from .harness import generate_trace, run_end_to_end
    from .relay.server import SessionConfig

    expected = int(round(duration_s * rate_hz))
    trace = generate_trace("neutral", seed=3, duration_s=duration_s,
                           rate_hz=rate_hz)
    log = Path(tempfile.mkdtemp(prefix="xr3-accept-")) / "session.xr3log"
    summary = run_end_to_end(trace, SessionConfig(log_path=log),
                             realtime=realtime)
    problems = []
    if summary.frames_received != expected:
        problems.append(f"received {summary.frames_received}/{expected}")
    if summary.duplicates or summary.out_of_order:
        problems.append(f"dups {summary.duplicates} ooo {summary.out_of_order}")
    if summary.dropped:
        problems.append(f"{summary.dropped} dropped")
    if summary.failed:
        problems.append(f"session failed: {summary.failed}")
    if summary.latency_p95_ms >= 10.0:
        problems.append(f"p95 {summary.latency_p95_ms:.2f} ms")
    report = replay_verify(log)
    if not report.ok:
        problems.append(f"replay: {report.summary()}")
    if problems:
        return False, "; ".join(problems)
    return True, f"{expected} frames in order, 0 drops, " \
                 f"p95 {summary.latency_p95_ms:.2f} ms, replay clean " \
                 f"({report.frames_checked} frames)"


# -- criterion 6: events --------------------------------------------------------


def _march_oracle(origin, direction, posed, step=1e-3, reach=5.0):
    """Brute-force ray walk in 1 mm steps against analytic inside-tests.

    Returns (winner name, margin): the margin measures how robust the
    classification is to a 2 mm perturbation — a miss must clear every
    surface by the margin; a hit must penetrate the winner at least that
    deep, with every other collider staying that far from the ray before
    the hit and the runner-up hit at least that far behind.
    """
    steps = np.arange(0.0, reach, step)
    points = origin[None, :] + steps[:, None] * direction[None, :]
    dists = {}
    entry = {}
    for name, prim in posed:
        if hasattr(prim, "center"):
            d = np.linalg.norm(points - prim.center, axis=1) - prim.radius
        else:
            seg = prim.b - prim.a
            length = float(np.linalg.norm(seg))
            u = seg / length
            rel = points - prim.a
            s = np.clip(rel @ u, 0.0, length)
            d = np.linalg.norm(rel - s[:, None] * u[None, :], axis=1) \
                - prim.radius
        dists[name] = d
        inside = np.nonzero(d <= 0.0)[0]
        if inside.size:
            entry[name] = int(inside[0])

    if not entry:
        return "none", min(float(np.min(d)) for d in dists.values())

    winner = min(entry, key=entry.get)
    k_first = entry[winner]
    depth = -float(np.min(dists[winner]))  # deepest penetration
    margin = depth
    for name, d in dists.items():
        if name == winner:
            continue
        # clearance of other colliders up to (and a bit past) the hit
        pre = d[:k_first + 1]
        margin = min(margin, float(np.min(pre)))
        if name in entry:
            margin = min(margin, (entry[name] - k_first) * step)
    return winner, margin


def check_events(rays: int = 10_000, tap_duration_s: float = 10.0
                 ) -> tuple[bool, str]:
    from .events_analysis.detect import classify_gaze
    from .harness import generate_trace, run_end_to_end
    from .kinematics import forward_kinematics
    from .relay.protocol import MSG
    from .relay.sessionlog import SessionLogReader
    from .relay import protocol as proto
    from .relay.server import SessionConfig
    from .transforms import Transform

    model = load_robot_model()
    frames = {"base": Transform.identity()}
    for side in ("left", "right"):
        frames[f"{side}_palm"] = forward_kinematics(model.arm(side),
                                                    model.arm_rest(side))
    posed = model.collider_set.pose_all(frames)

    rng = np.random.default_rng(31337)
    checked = excluded = hits = 0
    for k in range(rays):
        origin = np.array([0.0, 0.65, 0.0]) + _random_unit(rng) * \
            rng.uniform(1.2, 2.5)
        aim = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.1, 1.4),
                        rng.uniform(-0.5, 0.5)])
        direction = aim - origin
        direction /= np.linalg.norm(direction)
        want, margin = _march_oracle(origin, direction, posed)
        if margin < 2e-3:
            excluded += 1
            continue
        checked += 1
        hits += want != "none"
        got = classify_gaze(origin, direction, posed)
        if got.value != want:
            return False, f"ray #{k}: classifier {got.value}, oracle {want}"

    trace = generate_trace("reach_and_tap", seed=11,
                           duration_s=tap_duration_s, rate_hz=72)
    begin_want, end_want = trace.meta["expected_contact"]
    log = Path(tempfile.mkdtemp(prefix="xr3-events-")) / "session.xr3log"
    summary = run_end_to_end(trace, SessionConfig(log_path=log))
    contacts = [proto.decode_contact_event(m.payload)
                for m in SessionLogReader(log)
                if m.msg_type == MSG.CONTACT_EVENT]
    begins = [c for c in contacts if c.kind == "begin"]
    ends = [c for c in contacts if c.kind == "end"]
    if len(begins) != 1 or len(ends) != 1:
        return False, f"expected one begin/end pair, got {len(begins)}/{len(ends)}"
    frame_us = int(1e6 / 72) + 1
    if abs(begins[0].timestamp_us - begin_want) > frame_us:
        return False, f"begin at {begins[0].timestamp_us}, scripted {begin_want}"
    if abs(ends[0].timestamp_us - end_want) > frame_us:
        return False, f"end at {ends[0].timestamp_us}, scripted {end_want}"
    return True, f"{checked} rays agree ({hits} hits, {excluded} boundary " \
                 f"rays excluded); tap contact at scripted interval"


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


# -- criterion 7: pedal/speech determinism --------------------------------------

PEDAL_SCRIPT = [
    (1, "S"), (1, "S"), (2, "D"), (1, "S"), (1, "S"), (2, "S"), (3, "S"),
    (3, "D"), (1, "S"), (1, "S"), (1, "S"), (2, "S"), (2, "D"), (2, "D"),
    (3, "S"), (1, "S"), (3, "S"), (2, "D"), (2, "D"), (1, "S"),
]

# derived by hand from the default binding table over the functional
# playlist (cursor clamping included; event 15 hits an unbound branch)
EXPECTED_SPEECH = [
    "intro_nurse", "ask_hand", "ask_hand", "explain_draw", "ack_correct",
    "ack_wrong", "ask_guess", "conclude", "conclude", "drawing_now",
    "ack_correct", "explain_draw",
]


def check_pedal_speech() -> tuple[bool, str]:
    from .relay.playlist import PedalEvent, Press, load_playlist

    def run() -> list[str]:
        playlist = load_playlist(context="functional")
        out = []
        for k, (button, press) in enumerate(PEDAL_SCRIPT):
            evt = PedalEvent(button, Press.SINGLE if press == "S"
                             else Press.DOUBLE, k * 1_000_000)
            cmd = playlist.handle_pedal(evt)
            if cmd is not None:
                out.append(cmd.clip_id)
        return out

    first, second = run(), run()
    if first != EXPECTED_SPEECH:
        return False, f"sequence {first} != expected {EXPECTED_SPEECH}"
    if second != first:
        return False, "second run differed"
    return True, f"{len(PEDAL_SCRIPT)} pedal events -> " \
                 f"{len(EXPECTED_SPEECH)} commands, twice identical"


# -- runner ---------------------------------------------------------------------


CRITERIA = [
    ("appendix-exactness", check_appendix_exactness, {}, {"samples": 200}),
    ("ik-oracle", check_ik_oracle, {}, {"targets_per_chain": 25}),
    ("gate-safety", check_gate_safety, {}, {"samples": 500}),
    ("protocol", check_protocol, {}, {"samples": 500}),
    ("end-to-end", check_end_to_end, {}, {"duration_s": 3.0}),
    ("events", check_events, {}, {"rays": 300, "tap_duration_s": 6.0}),
    ("pedal-speech", check_pedal_speech, {}, {}),
]


def run_all(fast: bool = False) -> int:
    failures = 0
    for name, fn, kwargs, fast_kwargs in CRITERIA:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(**(fast_kwargs if fast else kwargs))
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"crashed: {exc!r}"
        dt = time.perf_counter() - t0
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name} ({dt:.1f}s): {detail}", flush=True)
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1
