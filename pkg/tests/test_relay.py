import asyncio
from pathlib import Path

import numpy as np
import pytest

from xr3.colocation import PlacementOffset
from xr3.face_mapping import BlendshapeFrame
from xr3.harness import generate_trace, run_end_to_end
from xr3.relay import protocol
from xr3.relay.protocol import MSG
from xr3.relay.sessionlog import SessionLogReader
from xr3.relay.server import SessionConfig, SessionServer
from xr3.retargeting import ExpressivityLevel


def hello(role, token="xr3-dev"):
    return protocol.encode_message(MSG.HELLO, 0, 0, protocol.encode_json(
        {"role": role, "token": token}))


async def until(cond, timeout=5.0):
    deadline = asyncio.get_event_loop().time() + timeout
    while not cond():
        if asyncio.get_event_loop().time() > deadline:
            raise TimeoutError("condition not reached")
        await asyncio.sleep(0.005)


async def start_server(tmp_path, **cfg_kw) -> tuple[SessionServer, object]:
    cfg = SessionConfig(log_path=tmp_path / "session.xr3log", **cfg_kw)
    server = SessionServer(cfg)
    await server.start()
    listener = await server.serve_loopback()
    return server, listener


async def connect(listener, role, token="xr3-dev"):
    conn = await listener.connect()
    await conn.send(hello(role, token))
    reply_raw = await conn.recv()
    reply, _ = protocol.decode_message(reply_raw)
    return conn, reply


class TestHandshake:
    def test_valid_token_gets_state(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            conn, reply = await connect(listener, "console")
            assert reply.msg_type == MSG.SESSION_STATE
            state = protocol.decode_json(reply.payload)
            assert state["connected"]["consoles"] == 1
            await conn.close()
            await server.stop()
        asyncio.run(run())

    def test_wrong_token_rejected(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            conn, reply = await connect(listener, "console", token="nope")
            assert reply.msg_type == MSG.REJECT
            assert "token" in protocol.decode_json(reply.payload)["reason"]
            await server.stop()
        asyncio.run(run())

    def test_second_operator_rejected(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            _, first = await connect(listener, "operator")
            assert first.msg_type == MSG.SESSION_STATE
            _, second = await connect(listener, "operator")
            assert second.msg_type == MSG.REJECT
            await server.stop()
        asyncio.run(run())


def read_log(path) -> list:
    return SessionLogReader(path).messages()


class TestSessionFlow:
    def test_frames_forwarded_in_order_and_logged(self, tmp_path):
        trace = generate_trace("neutral", seed=2, duration_s=2.0, rate_hz=72)
        cfg = SessionConfig(log_path=tmp_path / "s.xr3log")
        summary = run_end_to_end(trace, cfg)
        assert summary.frames_sent == 144
        assert summary.frames_received == 144
        assert summary.duplicates == 0 and summary.out_of_order == 0
        assert summary.dropped == 0 and not summary.failed

        records = read_log(cfg.log_path)
        assert records[0].msg_type == MSG.SESSION_META
        meta = protocol.decode_json(records[0].payload)
        assert meta["kind"] == "session_meta"
        robot = [m for m in records if m.msg_type == MSG.ROBOT_FRAME]
        operator = [m for m in records if m.msg_type == MSG.OPERATOR_FRAME]
        assert len(robot) == len(operator) == 144

    def test_every_broadcast_frame_logged_byte_identical(self, tmp_path):
        # collect broadcast bytes at the subscriber and compare to the log
        async def run():
            server, listener = await start_server(tmp_path)
            op_conn, _ = await connect(listener, "operator")
            pt_conn, _ = await connect(listener, "participant")

            trace = generate_trace("neutral", seed=4, duration_s=0.5,
                                   rate_hz=72)
            received = []

            async def subscriber():
                while True:
                    raw = await pt_conn.recv()
                    if raw is None:
                        return
                    received.append(raw)

            sub = asyncio.create_task(subscriber())
            n = len(trace.operator_frames)
            for k, frame in enumerate(trace.operator_frames):
                await op_conn.send(protocol.encode_message(
                    MSG.OPERATOR_FRAME, k, frame.timestamp_us,
                    protocol.encode_operator_frame(frame)))
            await until(lambda: server.counters["frames_out"] == n)
            await until(lambda: len(received) >= n)
            await op_conn.close()
            await pt_conn.close()
            sub.cancel()
            await asyncio.gather(sub, return_exceptions=True)
            await server.stop()
            return received

        received = asyncio.run(run())
        logged = SessionLogReader(tmp_path / "session.xr3log").raw_frames()
        robot_logged = [f for f in logged
                        if protocol.decode_message(f)[0].msg_type
                        == MSG.ROBOT_FRAME]
        robot_received = [f for f in received
                          if protocol.decode_message(f)[0].msg_type
                          == MSG.ROBOT_FRAME]
        assert robot_received == robot_logged
        assert len(robot_received) == 36

    def test_placement_change_applies_and_is_logged(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            op_conn, _ = await connect(listener, "operator")
            trace = generate_trace("neutral", seed=5, duration_s=0.2,
                                   rate_hz=72)
            frames = trace.operator_frames
            half = len(frames) // 2
            seq = 0
            for frame in frames[:half]:
                await op_conn.send(protocol.encode_message(
                    MSG.OPERATOR_FRAME, seq, frame.timestamp_us,
                    protocol.encode_operator_frame(frame)))
                seq += 1
            offset = PlacementOffset(np.array([0.05, 0.0, 0.0]), 0.1)
            await op_conn.send(protocol.encode_message(
                MSG.PLACEMENT_OFFSET, seq, frames[half].timestamp_us,
                protocol.encode_placement(offset)))
            seq += 1
            for frame in frames[half:]:
                await op_conn.send(protocol.encode_message(
                    MSG.OPERATOR_FRAME, seq, frame.timestamp_us,
                    protocol.encode_operator_frame(frame)))
                seq += 1
            await server._ingest.join()
            await server._log_queue.join()
            await op_conn.close()
            await server.stop()

        asyncio.run(run())
        records = read_log(tmp_path / "session.xr3log")
        placements = [i for i, m in enumerate(records)
                      if m.msg_type == MSG.PLACEMENT_OFFSET]
        assert len(placements) == 1
        robot = [protocol.decode_robot_frame(m.payload) for m in records
                 if m.msg_type == MSG.ROBOT_FRAME]
        before = robot[3].right.arm_q
        after = robot[-1].right.arm_q
        assert not np.allclose(before, after)

    def test_level_change_gates_from_next_frame(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            op_conn, _ = await connect(listener, "operator")
            trace = generate_trace("face_sweep", seed=6, duration_s=1.4,
                                   rate_hz=36)
            frames = trace.operator_frames
            half = len(frames) // 2
            seq = 0
            for k, frame in enumerate(frames):
                if k == half:
                    await op_conn.send(protocol.encode_message(
                        MSG.EXPRESSIVITY_LEVEL, seq, frame.timestamp_us,
                        protocol.encode_level(ExpressivityLevel.HEAD_ONLY)))
                    seq += 1
                await op_conn.send(protocol.encode_message(
                    MSG.OPERATOR_FRAME, seq, frame.timestamp_us,
                    protocol.encode_operator_frame(frame)))
                seq += 1
            await server._ingest.join()
            await server._log_queue.join()
            await op_conn.close()
            await server.stop()

        asyncio.run(run())
        records = read_log(tmp_path / "session.xr3log")
        robot = [protocol.decode_robot_frame(m.payload) for m in records
                 if m.msg_type == MSG.ROBOT_FRAME]
        model_rest = [m for m in records if m.msg_type == MSG.SESSION_META]
        # first half sweeps c_eye, so s_eye_z varies; after the switch the
        # face must hold the neutral rest
        half = len(robot) // 2
        assert min(f.face.s_eye_z for f in robot[:half]) < 0.2
        assert all(f.face.s_eye_z == 1.0 for f in robot[half + 1:])
        levels = [m for m in records if m.msg_type == MSG.EXPRESSIVITY_LEVEL]
        assert len(levels) == 1

    def test_operator_disconnect_logged_as_pause(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            op_conn, _ = await connect(listener, "operator")
            await op_conn.close()
            await asyncio.sleep(0.05)
            await server._ingest.join()
            await server._log_queue.join()
            await server.stop()

        asyncio.run(run())
        records = read_log(tmp_path / "session.xr3log")
        events = [protocol.decode_json(m.payload) for m in records
                  if m.msg_type == MSG.SESSION_STATE]
        kinds = [e.get("event") for e in events]
        assert "operator_connected" in kinds
        assert "operator_disconnected" in kinds

    def test_non_increasing_seq_dropped(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            op_conn, _ = await connect(listener, "operator")
            trace = generate_trace("neutral", seed=7, duration_s=0.1,
                                   rate_hz=72)
            frames = trace.operator_frames
            for frame in frames[:3]:
                await op_conn.send(protocol.encode_message(
                    MSG.OPERATOR_FRAME, 5, frame.timestamp_us,
                    protocol.encode_operator_frame(frame)))
            await until(lambda: server.counters["dropped_seq"] == 2)
            await until(lambda: server.counters["frames_in"] == 1)
            await op_conn.close()
            counters = dict(server.counters)
            await server.stop()
            return counters

        counters = asyncio.run(run())
        assert counters["frames_in"] == 1
        assert counters["dropped_seq"] == 2

    def test_speech_command_flows_to_participant(self, tmp_path):
        trace = generate_trace("reach_and_tap", seed=8, duration_s=3.0,
                               rate_hz=36)
        cfg = SessionConfig(log_path=tmp_path / "s.xr3log")
        summary = run_end_to_end(trace, cfg)
        assert summary.speech_sequence == ["intro_nurse"]
        records = read_log(cfg.log_path)
        speech = [m for m in records if m.msg_type == MSG.SPEECH_COMMAND]
        pedal = [m for m in records if m.msg_type == MSG.PEDAL_EVENT]
        assert len(speech) == 1 and len(pedal) == 1

    def test_console_sees_state_updates(self, tmp_path):
        async def run():
            server, listener = await start_server(tmp_path)
            console, first = await connect(listener, "console")
            op_conn, _ = await connect(listener, "operator")
            await op_conn.send(protocol.encode_message(
                MSG.EXPRESSIVITY_LEVEL, 0, 1,
                protocol.encode_level(ExpressivityLevel.HEAD_EYES)))
            await server._ingest.join()
            raw = await asyncio.wait_for(console.recv(), timeout=2)
            msg, _ = protocol.decode_message(raw)
            state = protocol.decode_json(msg.payload)
            await server.stop()
            return msg.msg_type, state

        msg_type, state = asyncio.run(run())
        assert msg_type == MSG.SESSION_STATE
        assert state["level_name"] == "HEAD_EYES"
