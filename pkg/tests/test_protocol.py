import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xr3.colocation import PlacementOffset
from xr3.errors import ProtocolError
from xr3.events_analysis.detect import ContactEvent, GazeEvent, GazeTarget
from xr3.face_mapping import BlendshapeFrame, ScreenFaceParams
from xr3.relay import protocol
from xr3.relay.playlist import PedalEvent, Press, SpeechCommand
from xr3.relay.protocol import (MSG, FrameReader, ParticipantFrame,
                                decode_message, encode_message)
from xr3.retargeting import (ExpressivityLevel, HandOutput, HandSkeletonFrame,
                             OperatorFrame, RobotControlFrame)
from xr3.transforms import Transform

# hand-computed from the header layout (magic, version 1, type 1,
# reserved, seq 0, timestamp 0, length 0)
MINIMAL = bytes.fromhex("5852334c" "0100" "0100" "0000"
                        "0000000000000000" "0000000000000000" "00000000")


def rng_transform(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Transform(rng.uniform(-2, 2, 3), q)


def rng_hand(rng):
    return HandSkeletonFrame(rng_transform(rng), rng_transform(rng),
                             rng_transform(rng), rng.uniform(-1, 2, (5, 4)))


class TestHeader:
    def test_minimal_frame_is_30_bytes(self):
        data = encode_message(1, 0, 0, b"")
        assert len(data) == 30
        assert data == MINIMAL

    def test_heartbeat_round_trip(self):
        data = encode_message(MSG.HEARTBEAT, 7, 123456, b"")
        msg, end = decode_message(data)
        assert end == len(data)
        assert (msg.msg_type, msg.seq, msg.timestamp_us, msg.payload) == \
               (MSG.HEARTBEAT, 7, 123456, b"")

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 64 - 1),
           st.integers(0, 2 ** 64 - 1), st.binary(max_size=256))
    def test_round_trip(self, msg_type, seq, ts, payload):
        msg, end = decode_message(encode_message(msg_type, seq, ts, payload))
        assert (msg.msg_type, msg.seq, msg.timestamp_us, msg.payload) == \
               (msg_type, seq, ts, payload)

    def test_unknown_type_payload_opaque(self):
        payload = b"\x01\x02\xff"
        msg, _ = decode_message(encode_message(9999, 1, 2, payload))
        assert msg.msg_type == 9999 and msg.payload == payload

    def test_truncation_rejected_without_partial_message(self):
        data = encode_message(2, 1, 1, b"hello")
        for cut in range(len(data)):
            with pytest.raises(ProtocolError):
                decode_message(data[:cut])

    def test_bad_magic_names_offset(self):
        data = b"NOPE" + encode_message(1, 0, 0, b"")[4:]
        with pytest.raises(ProtocolError, match="offset 0"):
            decode_message(data)

    def test_version_mismatch_rejected(self):
        data = bytearray(encode_message(1, 0, 0, b""))
        data[4] = 9
        with pytest.raises(ProtocolError, match="version"):
            decode_message(bytes(data))

    def test_oversize_payload_rejected_on_encode(self):
        with pytest.raises(ValueError):
            encode_message(1, 0, 0, b"x" * (protocol.MAX_PAYLOAD + 1))

    def test_oversize_length_rejected_on_decode(self):
        import struct
        bad = protocol.HEADER.pack(protocol.MAGIC, 1, 1, 0, 0, 0,
                                   protocol.MAX_PAYLOAD + 1)
        with pytest.raises(ProtocolError, match="exceeds"):
            decode_message(bad)


class TestFrameReader:
    def test_incremental_feed(self):
        a = encode_message(1, 0, 10, b"aa")
        b = encode_message(2, 1, 20, b"bbbb")
        reader = FrameReader()
        assert reader.feed(a[:7]) == []
        assert reader.feed(a[7:] + b[:3]) != []
        got = reader.feed(b[3:])
        assert [m.msg_type for m in got] == [2]
        assert reader.pending_bytes == 0

    def test_many_frames_in_one_chunk(self):
        chunk = b"".join(encode_message(1, i, i, bytes([i])) for i in range(10))
        msgs = FrameReader().feed(chunk)
        assert [m.seq for m in msgs] == list(range(10))


class TestPayloadCodecs:
    def test_operator_frame_round_trip(self):
        rng = np.random.default_rng(11)
        frame = OperatorFrame(
            4242, rng_transform(rng), rng_hand(rng), rng_hand(rng),
            BlendshapeFrame(rng.random(70).astype(np.float32).astype(np.float64)),
            (0.25, -0.5))
        buf = protocol.encode_operator_frame(frame)
        out = protocol.decode_operator_frame(buf)
        assert protocol.encode_operator_frame(out) == buf
        assert out.timestamp_us == 4242
        assert np.array_equal(out.left_hand.finger_angles,
                              frame.left_hand.finger_angles)

    def test_operator_frame_missing_hands(self):
        frame = OperatorFrame(1, Transform(), None, None,
                              BlendshapeFrame.zeros(), (0.0, 0.0))
        out = protocol.decode_operator_frame(
            protocol.encode_operator_frame(frame))
        assert out.left_hand is None and out.right_hand is None

    def test_robot_frame_round_trip(self):
        rng = np.random.default_rng(12)

        def hand(stale):
            return HandOutput(rng.uniform(-2, 2, 7), rng.uniform(0, 1, 4),
                              rng.uniform(0, 1, 4), rng.uniform(0, 1, 4),
                              rng.uniform(0, 1, 4), True, False, True, stale)

        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        frame = RobotControlFrame(987654321, q, hand(False), hand(True),
                                  ScreenFaceParams(p_eye_x=0.5, s_eye_z=0.4))
        buf = protocol.encode_robot_frame(frame)
        out = protocol.decode_robot_frame(buf)
        assert protocol.encode_robot_frame(out) == buf
        assert out.left.arm_converged and not out.left.thumb_converged
        assert out.right.stale and not out.left.stale
        assert out.face == frame.face

    def test_participant_frame_round_trip(self):
        rng = np.random.default_rng(13)
        frame = ParticipantFrame(
            777, rng_transform(rng), rng_transform(rng), None,
            BlendshapeFrame.zeros(), rng.uniform(-1, 1, 3),
            np.array([0.0, 0.0, 1.0]))
        buf = protocol.encode_participant_frame(frame)
        out = protocol.decode_participant_frame(buf)
        assert protocol.encode_participant_frame(out) == buf
        assert out.right_palm is None
        assert np.array_equal(out.gaze_dir, frame.gaze_dir)

    def test_event_codecs(self):
        pedal = PedalEvent(3, Press.DOUBLE, 909)
        assert protocol.decode_pedal_event(
            protocol.encode_pedal_event(pedal)) == pedal
        speech = SpeechCommand("ack_correct", 10)
        assert protocol.decode_speech_command(
            protocol.encode_speech_command(speech)) == speech
        gaze = GazeEvent(5, GazeTarget.TRUNK)
        assert protocol.decode_gaze_event(
            protocol.encode_gaze_event(gaze)) == gaze
        contact = ContactEvent(6, "begin", "left", "right")
        assert protocol.decode_contact_event(
            protocol.encode_contact_event(contact)) == contact

    def test_placement_and_level_codecs(self):
        p = PlacementOffset(np.array([0.1, -0.2, 0.3]), 0.5)
        out = protocol.decode_placement(protocol.encode_placement(p))
        assert np.array_equal(out.translation, p.translation)
        assert out.yaw == p.yaw
        for level in ExpressivityLevel:
            assert protocol.decode_level(protocol.encode_level(level)) == level

    def test_json_codec_sorted_and_compact(self):
        doc = {"b": 1, "a": [1, 2]}
        buf = protocol.encode_json(doc)
        assert buf == b'{"a":[1,2],"b":1}'
        assert protocol.decode_json(buf) == doc
