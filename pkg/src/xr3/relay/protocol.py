"""Binary wire protocol.

Every frame is a fixed 30-byte header followed by the payload; all
integers little-endian:

    offset  size  field
    0       4     magic "XR3L"
    4       2     version (u16, currently 1)
    6       2     msg_type (u16)
    8       2     reserved (u16, zero; ignored on decode)
    10      8     seq (u64, strictly increasing per sender)
    18      8     timestamp_us (u64, microseconds since session epoch)
    26      4     payload_len (u32)
    30      ...   payload

Message type registry (payload layouts in the codecs below):

    1  OperatorFrame      2  RobotControlFrame   3  ParticipantFrame
    4  PedalEvent         5  SpeechCommand       6  PlacementOffset
    7  ExpressivityLevel  8  GazeEvent           9  ContactEvent
    10 Heartbeat

    100 SessionMeta  101 Hello  102 SessionState  103 Reject
    (control plane and log records; UTF-8 JSON payloads)

Unknown msg_types decode fine: the payload is preserved opaque. Pose
septets are [px, py, pz, qw, qx, qy, qz] float64 (orientation
scalar-first); blendshape vectors are 70 float32; all other reals are
float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..colocation import PlacementOffset
from ..errors import ProtocolError
from ..events_analysis.detect import ContactEvent, GazeEvent, GazeTarget
from ..face_mapping import BlendshapeFrame, ScreenFaceParams
from ..retargeting import (ExpressivityLevel, HandOutput, HandSkeletonFrame,
                           OperatorFrame, RobotControlFrame)
from ..transforms import Transform
from .playlist import PedalEvent, Press, SpeechCommand

MAGIC = b"XR3L"
VERSION = 1
HEADER = struct.Struct("<4sHHHQQI")
HEADER_SIZE = HEADER.size  # 30 bytes
MAX_PAYLOAD = 1 << 20  # 1 MiB


class MSG:
    OPERATOR_FRAME = 1
    ROBOT_FRAME = 2
    PARTICIPANT_FRAME = 3
    PEDAL_EVENT = 4
    SPEECH_COMMAND = 5
    PLACEMENT_OFFSET = 6
    EXPRESSIVITY_LEVEL = 7
    GAZE_EVENT = 8
    CONTACT_EVENT = 9
    HEARTBEAT = 10
    SESSION_META = 100
    HELLO = 101
    SESSION_STATE = 102
    REJECT = 103


@dataclass(frozen=True)
class Message:
    msg_type: int
    seq: int
    timestamp_us: int
    payload: bytes
    version: int = VERSION


def encode_message(msg_type: int, seq: int, timestamp_us: int,
                   payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload {len(payload)} exceeds {MAX_PAYLOAD} bytes")
    return HEADER.pack(MAGIC, VERSION, msg_type, 0, seq, timestamp_us,
                       len(payload)) + payload


def encode(msg: Message) -> bytes:
    return encode_message(msg.msg_type, msg.seq, msg.timestamp_us, msg.payload)


def decode_message(data, offset: int = 0) -> tuple[Message, int]:
    """Decode one frame at ``offset``; returns (message, next offset).

    Truncated or corrupt input raises ProtocolError naming the byte
    offset; no partial Message is ever returned.
    """
    if len(data) - offset < HEADER_SIZE:
        raise ProtocolError(
            f"short frame at offset {offset}: {len(data) - offset} bytes, "
            f"need {HEADER_SIZE} for the header")
    magic, version, msg_type, _reserved, seq, ts, plen = HEADER.unpack_from(
        data, offset)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r} at offset {offset}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version} at offset {offset}")
    if plen > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {plen} at offset {offset} "
                            f"exceeds {MAX_PAYLOAD}")
    end = offset + HEADER_SIZE + plen
    if len(data) < end:
        raise ProtocolError(
            f"truncated payload at offset {offset}: need {plen} bytes, "
            f"have {len(data) - offset - HEADER_SIZE}")
    payload = bytes(data[offset + HEADER_SIZE:end])
    return Message(msg_type, seq, ts, payload, version), end


class FrameReader:
    """Incremental frame splitter for byte streams (files, sockets)."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        pos = 0
        while True:
            if len(self._buf) - pos < HEADER_SIZE:
                break
            plen = struct.unpack_from("<I", self._buf, pos + 26)[0]
            if len(self._buf) - pos < HEADER_SIZE + plen:
                break
            msg, pos = decode_message(self._buf, pos)
            out.append(msg)
        del self._buf[:pos]
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# payload codecs

_F64 = np.dtype("<f8")
_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class ParticipantFrame:
    """Participant-side sample: head, palm poses, blendshapes, gaze ray.

    Poses are in the participant device's local frame; the relay converts
    them to the shared frame using the anchor from that client's hello.
    """
    timestamp_us: int
    head_pose: Transform
    left_palm: Transform | None
    right_palm: Transform | None
    blendshapes: BlendshapeFrame
    gaze_origin: np.ndarray
    gaze_dir: np.ndarray


def _pose_bytes(t: Transform) -> bytes:
    return t.to_array().astype(_F64).tobytes()


def _pose_from(buf, off: int) -> tuple[Transform, int]:
    a = np.frombuffer(buf, dtype=_F64, count=7, offset=off)
    return Transform.from_array(a), off + 56


def _f64s(buf, off: int, n: int) -> tuple[np.ndarray, int]:
    return (np.frombuffer(buf, dtype=_F64, count=n, offset=off).copy(),
            off + 8 * n)


_HAND_SIZE = 56 * 3 + 20 * 8
_ZERO_HAND = bytes(_HAND_SIZE)
_ZERO_POSE = bytes(56)
_IDENTITY_POSE = Transform.identity()


def _hand_bytes(h: HandSkeletonFrame) -> bytes:
    return (_pose_bytes(h.palm_pose) + _pose_bytes(h.thumb_tip_pose)
            + _pose_bytes(h.index_tip_pose)
            + np.ascontiguousarray(h.finger_angles, dtype=_F64).tobytes())


def _hand_from(buf, off: int) -> tuple[HandSkeletonFrame, int]:
    palm, off = _pose_from(buf, off)
    thumb, off = _pose_from(buf, off)
    index, off = _pose_from(buf, off)
    angles, off = _f64s(buf, off, 20)
    return HandSkeletonFrame(palm, thumb, index, angles.reshape(5, 4)), off


def encode_operator_frame(f: OperatorFrame) -> bytes:
    """u64 ts | head pose | u8 hand flags (bit0 left, bit1 right) | left
    hand block | right hand block | 70 f32 blendshapes | 2 f64 gaze.
    Absent hands are zero-filled blocks."""
    flags = (1 if f.left_hand else 0) | (2 if f.right_hand else 0)
    parts = [struct.pack("<Q", f.timestamp_us),
             _pose_bytes(f.head_pose),
             struct.pack("<B", flags),
             _hand_bytes(f.left_hand) if f.left_hand else _ZERO_HAND,
             _hand_bytes(f.right_hand) if f.right_hand else _ZERO_HAND,
             f.blendshapes.values.astype(_F32).tobytes(),
             struct.pack("<dd", *f.gaze)]
    return b"".join(parts)


def decode_operator_frame(buf) -> OperatorFrame:
    ts = struct.unpack_from("<Q", buf, 0)[0]
    head, off = _pose_from(buf, 8)
    flags = buf[off]
    off += 1
    left = right = None
    if flags & 1:
        left, _ = _hand_from(buf, off)
    off += _HAND_SIZE
    if flags & 2:
        right, _ = _hand_from(buf, off)
    off += _HAND_SIZE
    bs = np.frombuffer(buf, dtype=_F32, count=70, offset=off).astype(np.float64)
    off += 280
    gx, gy = struct.unpack_from("<dd", buf, off)
    return OperatorFrame(
        timestamp_us=ts,
        head_pose=head,
        left_hand=left,
        right_hand=right,
        blendshapes=BlendshapeFrame(bs),
        gaze=(gx, gy),
    )


def _hand_output_bytes(h: HandOutput) -> bytes:
    return (np.ascontiguousarray(h.arm_q, dtype=_F64).tobytes()
            + h.angles_flat().astype(_F64).tobytes())


def encode_robot_frame(f: RobotControlFrame) -> bytes:
    """u64 ts | 4 f64 head orientation | left arm(7) + fingers
    thumb/index/middle/ring (16) | right likewise | 8 f64 face
    [vertex_up, vertex_low, r_eye, s_eye, r_ear_l, r_ear_r, p_eye_x,
    p_eye_y] | u8 converged bits [l_arm, l_thumb, l_index, r_arm,
    r_thumb, r_index] | u8 stale bits [left, right]."""
    conv = f.converged_flags()
    conv_bits = (conv["left_arm"] | conv["left_thumb"] << 1
                 | conv["left_index"] << 2 | conv["right_arm"] << 3
                 | conv["right_thumb"] << 4 | conv["right_index"] << 5)
    stale_bits = f.left.stale | f.right.stale << 1
    parts = [struct.pack("<Q", f.timestamp_us),
             np.ascontiguousarray(f.head_orientation, dtype=_F64).tobytes(),
             _hand_output_bytes(f.left),
             _hand_output_bytes(f.right),
             f.face.to_array().astype(_F64).tobytes(),
             struct.pack("<BB", conv_bits, stale_bits)]
    return b"".join(parts)


def _hand_output_from(buf, off: int, conv_bits: int, shift: int,
                      stale: bool) -> HandOutput:
    arm, off = _f64s(buf, off, 7)
    fingers, off = _f64s(buf, off, 16)
    return HandOutput(
        arm_q=arm, thumb_q=fingers[0:4], index_q=fingers[4:8],
        middle_q=fingers[8:12], ring_q=fingers[12:16],
        arm_converged=bool(conv_bits >> shift & 1),
        thumb_converged=bool(conv_bits >> (shift + 1) & 1),
        index_converged=bool(conv_bits >> (shift + 2) & 1),
        stale=stale)


def decode_robot_frame(buf) -> RobotControlFrame:
    ts = struct.unpack_from("<Q", buf, 0)[0]
    head, off = _f64s(buf, 8, 4)
    conv_bits, stale_bits = struct.unpack_from("<BB", buf, off + 184 * 2 + 64)
    left = _hand_output_from(buf, off, conv_bits, 0, bool(stale_bits & 1))
    right = _hand_output_from(buf, off + 184, conv_bits, 3, bool(stale_bits & 2))
    face = ScreenFaceParams.from_array(
        np.frombuffer(buf, dtype=_F64, count=8, offset=off + 184 * 2))
    return RobotControlFrame(ts, head, left, right, face)


def encode_participant_frame(f: ParticipantFrame) -> bytes:
    """u64 ts | head pose | u8 palm flags | left palm | right palm |
    70 f32 blendshapes | 3 f64 gaze origin | 3 f64 gaze direction."""
    flags = (1 if f.left_palm else 0) | (2 if f.right_palm else 0)
    parts = [struct.pack("<Q", f.timestamp_us),
             _pose_bytes(f.head_pose),
             struct.pack("<B", flags),
             _pose_bytes(f.left_palm) if f.left_palm else _ZERO_POSE,
             _pose_bytes(f.right_palm) if f.right_palm else _ZERO_POSE,
             f.blendshapes.values.astype(_F32).tobytes(),
             np.ascontiguousarray(f.gaze_origin, dtype=_F64).tobytes(),
             np.ascontiguousarray(f.gaze_dir, dtype=_F64).tobytes()]
    return b"".join(parts)


def decode_participant_frame(buf) -> ParticipantFrame:
    ts = struct.unpack_from("<Q", buf, 0)[0]
    head, off = _pose_from(buf, 8)
    flags = buf[off]
    off += 1
    left = right = None
    if flags & 1:
        left, _ = _pose_from(buf, off)
    off += 56
    if flags & 2:
        right, _ = _pose_from(buf, off)
    off += 56
    bs = np.frombuffer(buf, dtype=_F32, count=70, offset=off).astype(np.float64)
    off += 280
    origin, off = _f64s(buf, off, 3)
    direction, off = _f64s(buf, off, 3)
    return ParticipantFrame(
        timestamp_us=ts, head_pose=head,
        left_palm=left, right_palm=right,
        blendshapes=BlendshapeFrame(bs),
        gaze_origin=origin, gaze_dir=direction)


def encode_pedal_event(e: PedalEvent) -> bytes:
    """u64 ts | u8 button (1..3) | u8 press (1 single, 2 double)."""
    return struct.pack("<QBB", e.timestamp_us, e.button, int(e.press))


def decode_pedal_event(buf) -> PedalEvent:
    ts, button, press = struct.unpack_from("<QBB", buf, 0)
    return PedalEvent(button, Press(press), ts)


def encode_speech_command(c: SpeechCommand) -> bytes:
    """u64 ts | u16 clip id length | UTF-8 clip id."""
    cid = c.clip_id.encode("utf-8")
    return struct.pack("<QH", c.timestamp_us, len(cid)) + cid


def decode_speech_command(buf) -> SpeechCommand:
    ts, n = struct.unpack_from("<QH", buf, 0)
    return SpeechCommand(bytes(buf[10:10 + n]).decode("utf-8"), ts)


def encode_placement(p: PlacementOffset) -> bytes:
    """3 f64 translation | f64 yaw (radians about shared +Y)."""
    return struct.pack("<dddd", *p.translation, p.yaw)


def decode_placement(buf) -> PlacementOffset:
    tx, ty, tz, yaw = struct.unpack_from("<dddd", buf, 0)
    return PlacementOffset(np.array([tx, ty, tz]), yaw)


def encode_level(level: ExpressivityLevel) -> bytes:
    """u8 level (0 head only, 1 head+eyes, 2 full)."""
    return struct.pack("<B", int(level))


def decode_level(buf) -> ExpressivityLevel:
    return ExpressivityLevel(struct.unpack_from("<B", buf, 0)[0])


_GAZE_CODES = {GazeTarget.NONE: 0, GazeTarget.HEAD: 1, GazeTarget.TRUNK: 2,
               GazeTarget.LEFT_HAND: 3, GazeTarget.RIGHT_HAND: 4}
_GAZE_NAMES = {v: k for k, v in _GAZE_CODES.items()}


def encode_gaze_event(e: GazeEvent) -> bytes:
    """u64 ts | u8 target (0 none, 1 head, 2 trunk, 3 left hand,
    4 right hand)."""
    return struct.pack("<QB", e.timestamp_us, _GAZE_CODES[e.target])


def decode_gaze_event(buf) -> GazeEvent:
    ts, code = struct.unpack_from("<QB", buf, 0)
    return GazeEvent(ts, _GAZE_NAMES[code])


_HAND_CODES = {"left": 0, "right": 1}
_HAND_NAMES = {0: "left", 1: "right"}


def encode_contact_event(e: ContactEvent) -> bytes:
    """u64 ts | u8 kind (1 begin, 2 end) | u8 participant hand
    (0 left, 1 right) | u8 robot hand."""
    return struct.pack("<QBBB", e.timestamp_us, 1 if e.kind == "begin" else 2,
                       _HAND_CODES[e.participant_hand],
                       _HAND_CODES[e.robot_hand])


def decode_contact_event(buf) -> ContactEvent:
    ts, kind, ph, rh = struct.unpack_from("<QBBB", buf, 0)
    return ContactEvent(ts, "begin" if kind == 1 else "end",
                        _HAND_NAMES[ph], _HAND_NAMES[rh])


def encode_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_json(buf) -> dict:
    return json.loads(bytes(buf).decode("utf-8"))
