"""Session server.

One :class:`SessionServer` hosts one session: it authenticates clients
(shared session token), ingests the operator stream, runs retargeting,
broadcasts robot control frames to the participant, detects interaction
events on the participant stream, routes pedal presses through the
utterance playlist, and appends every frame/event/change to the session
log with synchronized timestamps.

Concurrency: any number of client connections feed one ingest queue; a
single processing task owns the retarget state and the broadcast order,
so frames are handled strictly in arrival order. Log appends go through
a bounded queue to a dedicated writer task; if that queue ever fills the
session fails loudly rather than dropping research data.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .. import __version__
from ..colocation import AnchorObservation, PlacementOffset, to_shared_frame
from ..errors import ConfigError, ProtocolError
from ..events_analysis.detect import (ContactTracker, GazeEvent, HandSphere,
                                      classify_gaze)
from ..face_mapping import FaceMappingConfig, face_config_to_dict, \
    load_face_config
from ..kinematics import IkSolverConfig
from ..model import RobotModel, load_model_doc, model_from_dict
from ..retargeting import (ExpressivityLevel, PipelineConfig, RetargetPipeline,
                           apply_expressivity_gate, PIPELINE_IK)
from ..transforms import Transform
from . import protocol
from .playlist import UtterancePlaylist, load_playlist, playlist_from_dict
from .protocol import MSG, Message
from .sessionlog import SessionLogWriter
from .transport import LoopbackListener, serve_websocket

logger = logging.getLogger(__name__)

LOG_QUEUE_SIZE = 8192
STATE_EVERY_N_FRAMES = 72


@dataclass
class SessionConfig:
    session_id: str = "session"
    token: str = "xr3-dev"
    context: str = "functional"
    level: ExpressivityLevel = ExpressivityLevel.FULL
    placement: PlacementOffset = field(default_factory=PlacementOffset)
    model_path: str | None = None
    face_path: str | None = None
    playlist_path: str | None = None
    log_path: str | Path = "session.xr3log"
    ingest_shape: str = "operator_frames"  # or "robot_frames"

    def __post_init__(self):
        if self.ingest_shape not in ("operator_frames", "robot_frames"):
            raise ConfigError(f"unknown ingest shape {self.ingest_shape!r}")
        self.level = ExpressivityLevel(self.level)

    @staticmethod
    def from_yaml(path: str | Path) -> "SessionConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        placement = doc.get("placement", {})
        return SessionConfig(
            session_id=doc.get("session_id", "session"),
            token=doc.get("token", "xr3-dev"),
            context=doc.get("context", "functional"),
            level=ExpressivityLevel[doc["level"]] if "level" in doc
            else ExpressivityLevel.FULL,
            placement=PlacementOffset(
                np.asarray(placement.get("translation", [0, 0, 0]), dtype=float),
                float(placement.get("yaw", 0.0))),
            model_path=doc.get("model"),
            face_path=doc.get("face"),
            playlist_path=doc.get("playlist"),
            log_path=doc.get("log", "session.xr3log"),
            ingest_shape=doc.get("ingest", "operator_frames"),
        )


@dataclass
class _Client:
    conn: object
    role: str
    anchor: AnchorObservation
    last_seq: int = -1
    name: str = ""


class SessionError(Exception):
    pass


def _anchor_from_hello(doc: dict) -> AnchorObservation:
    pose = doc.get("anchor")
    if pose is None:
        return AnchorObservation()
    return AnchorObservation(Transform.from_array(np.asarray(pose, dtype=float)))


class SessionServer:
    def __init__(self, cfg: SessionConfig,
                 model: RobotModel | None = None,
                 model_doc: dict | None = None,
                 face_cfg: FaceMappingConfig | None = None,
                 playlist: UtterancePlaylist | None = None,
                 ik_cfg: IkSolverConfig = PIPELINE_IK):
        self.cfg = cfg
        self.model_doc = model_doc if model_doc is not None \
            else load_model_doc(cfg.model_path)
        self.model = model if model is not None else model_from_dict(self.model_doc)
        self.face_cfg = face_cfg if face_cfg is not None \
            else load_face_config(cfg.face_path)
        self.playlist = playlist if playlist is not None \
            else load_playlist(cfg.playlist_path, cfg.context)
        self.ik_cfg = ik_cfg

        self.pipeline = RetargetPipeline(PipelineConfig(
            model=self.model, face_cfg=self.face_cfg,
            placement=cfg.placement, level=cfg.level, ik_cfg=ik_cfg))
        self.contact_tracker = ContactTracker(self.model.contact_hysteresis)

        self._operator: _Client | None = None
        self._participant: _Client | None = None
        self._consoles: list[_Client] = []
        self._out_seq = 0
        self._ingest: asyncio.Queue = asyncio.Queue()
        self._log_queue: asyncio.Queue = asyncio.Queue(maxsize=LOG_QUEUE_SIZE)
        self._log_writer: SessionLogWriter | None = None
        self._tasks: list[asyncio.Task] = []
        self._listeners: list = []
        self._ws_servers: list = []
        self.failed: BaseException | None = None
        self._stopping = False

        self.counters = {
            "frames_in": 0, "frames_out": 0, "participant_frames": 0,
            "dropped_stale": 0, "dropped_seq": 0, "gaze_events": 0,
            "contact_events": 0, "speech_commands": 0, "pedal_events": 0,
        }
        self.latencies_ms: list[float] = []
        self.last_gaze = "none"

    # -- lifecycle ---------------------------------------------------------

    async def start(self) -> None:
        self._log_writer = SessionLogWriter(self.cfg.log_path)
        self._log_record(MSG.SESSION_META, 0, protocol.encode_json(
            self._meta_snapshot()))
        self._tasks.append(asyncio.create_task(self._log_task(),
                                               name="xr3-log-writer"))
        self._tasks.append(asyncio.create_task(self._process_task(),
                                               name="xr3-processor"))

    async def serve_loopback(self) -> LoopbackListener:
        listener = LoopbackListener()
        self._listeners.append(listener)
        self._tasks.append(asyncio.create_task(self._accept_task(listener)))
        return listener

    async def serve_ws(self, host: str, port: int):
        server = await serve_websocket(self.handle_connection, host, port)
        self._ws_servers.append(server)
        return server

    async def stop(self) -> None:
        self._stopping = True
        for listener in self._listeners:
            await listener.close()
        for server in self._ws_servers:
            server.close()
            await server.wait_closed()
        # let the processor drain what has already been ingested
        await self._ingest.join()
        await self._log_queue.join()
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        for client in self._all_clients():
            try:
                await client.conn.close()
            except Exception:
                pass
        if self._log_writer is not None:
            self._log_writer.close()

    def _all_clients(self) -> list[_Client]:
        out = list(self._consoles)
        if self._operator:
            out.append(self._operator)
        if self._participant:
            out.append(self._participant)
        return out

    def _meta_snapshot(self) -> dict:
        return {
            "kind": "session_meta",
            "version": __version__,
            "session_id": self.cfg.session_id,
            "context": self.cfg.context,
            "ingest_shape": self.cfg.ingest_shape,
            "level": int(self.cfg.level),
            "placement": {"translation": list(self.cfg.placement.translation),
                          "yaw": self.cfg.placement.yaw},
            "model": self.model_doc,
            "face": face_config_to_dict(self.face_cfg),
            "ik": {"damping": self.ik_cfg.damping,
                   "max_iterations": self.ik_cfg.max_iterations,
                   "pos_tol": self.ik_cfg.pos_tol,
                   "rot_tol": self.ik_cfg.rot_tol,
                   "step_clamp": self.ik_cfg.step_clamp,
                   "restarts": self.ik_cfg.restarts},
        }

    # -- connection handling -----------------------------------------------

    async def _accept_task(self, listener: LoopbackListener) -> None:
        while True:
            conn = await listener.accept()
            if conn is None:
                return
            asyncio.create_task(self.handle_connection(conn))

    async def handle_connection(self, conn) -> None:
        try:
            client = await self._handshake(conn)
        except Exception:
            logger.exception("handshake failed")
            return
        if client is None:
            return
        try:
            await self._read_loop(client)
        finally:
            await self._unregister(client)

    async def _handshake(self, conn) -> _Client | None:
        raw = await conn.recv()
        if raw is None:
            return None
        try:
            msg, _ = protocol.decode_message(raw)
        except ProtocolError as exc:
            await self._reject(conn, f"bad hello frame: {exc}")
            return None
        if msg.msg_type != MSG.HELLO:
            await self._reject(conn, "expected hello")
            return None
        hello = protocol.decode_json(msg.payload)
        role = hello.get("role")
        if hello.get("token") != self.cfg.token:
            await self._reject(conn, "bad token")
            return None
        if role not in ("operator", "participant", "console"):
            await self._reject(conn, f"unknown role {role!r}")
            return None
        if role == "operator" and self._operator is not None:
            await self._reject(conn, "operator slot taken")
            return None
        if role == "participant" and self._participant is not None:
            await self._reject(conn, "participant slot taken")
            return None

        client = _Client(conn=conn, role=role,
                         anchor=_anchor_from_hello(hello),
                         name=hello.get("name", ""))
        if role == "operator":
            self._operator = client
        elif role == "participant":
            self._participant = client
        else:
            self._consoles.append(client)
        await self._ingest.put((time.perf_counter(), client,
                                ("connected", hello)))
        await self._send(client, protocol.encode_message(
            MSG.SESSION_STATE, self._next_seq(), self._now_us(),
            protocol.encode_json(self._state_snapshot())))
        return client

    async def _reject(self, conn, reason: str) -> None:
        try:
            await conn.send(protocol.encode_message(
                MSG.REJECT, 0, self._now_us(),
                protocol.encode_json({"reason": reason})))
            await conn.close()
        except Exception:
            pass

    async def _read_loop(self, client: _Client) -> None:
        while True:
            raw = await client.conn.recv()
            if raw is None:
                return
            try:
                msg, _ = protocol.decode_message(raw)
            except ProtocolError as exc:
                logger.warning("dropping undecodable frame from %s: %s",
                               client.role, exc)
                continue
            if msg.msg_type == MSG.HEARTBEAT:
                continue
            if msg.seq <= client.last_seq:
                self.counters["dropped_seq"] += 1
                logger.warning("non-increasing seq from %s: %d after %d",
                               client.role, msg.seq, client.last_seq)
                continue
            client.last_seq = msg.seq
            await self._ingest.put((time.perf_counter(), client, msg))

    async def _unregister(self, client: _Client) -> None:
        if client is self._operator:
            self._operator = None
            await self._ingest.put((time.perf_counter(), client,
                                    ("disconnected", {})))
        elif client is self._participant:
            self._participant = None
        elif client in self._consoles:
            self._consoles.remove(client)

    # -- processing ---------------------------------------------------------

    async def _process_task(self) -> None:
        try:
            while True:
                t_ingest, client, item = await self._ingest.get()
                try:
                    if isinstance(item, tuple):
                        kind, hello = item
                        self._handle_lifecycle(client, kind, hello)
                    else:
                        await self._dispatch(t_ingest, client, item)
                finally:
                    self._ingest.task_done()
        except asyncio.CancelledError:
            raise
        except BaseException as exc:
            self.fail(exc)
            raise

    def fail(self, exc: BaseException) -> None:
        logger.critical("session failed: %r", exc)
        self.failed = exc

    def _handle_lifecycle(self, client: _Client, kind: str, hello: dict) -> None:
        event = f"{client.role}_{kind}"
        record = {"event": event, "name": client.name}
        if kind == "connected":
            record["anchor"] = list(client.anchor.anchor_in_local.to_array())
            if client.role == "operator":
                self.pipeline.set_anchor(client.anchor)
        elif client.role == "operator":
            record["note"] = "session paused"
        self._log_record(MSG.SESSION_STATE, self._now_us(),
                         protocol.encode_json(record))

    async def _dispatch(self, t_ingest: float, client: _Client,
                        msg: Message) -> None:
        mt = msg.msg_type
        if mt == MSG.OPERATOR_FRAME and self.cfg.ingest_shape == "operator_frames":
            await self._on_operator_frame(t_ingest, msg)
        elif mt == MSG.ROBOT_FRAME and self.cfg.ingest_shape == "robot_frames":
            await self._on_robot_frame_ingest(t_ingest, msg)
        elif mt == MSG.PARTICIPANT_FRAME:
            await self._on_participant_frame(client, msg)
        elif mt == MSG.PEDAL_EVENT:
            await self._on_pedal(msg)
        elif mt == MSG.PLACEMENT_OFFSET:
            await self._on_placement(msg)
        elif mt == MSG.EXPRESSIVITY_LEVEL:
            await self._on_level(msg)
        elif mt == MSG.GAZE_EVENT:
            # pre-classified gaze from a device-side pipeline
            self._log_frame(msg)
            self.counters["gaze_events"] += 1
            await self._broadcast_consoles(protocol.encode(msg))
        else:
            logger.warning("ignoring msg_type %d in shape %s", mt,
                           self.cfg.ingest_shape)

    async def _on_operator_frame(self, t_ingest: float, msg: Message) -> None:
        self.counters["frames_in"] += 1
        self._log_frame(msg)
        op_frame = protocol.decode_operator_frame(msg.payload)
        robot = self.pipeline.retarget_frame(op_frame)
        if robot is None:
            self.counters["dropped_stale"] += 1
            return
        data = protocol.encode_message(
            MSG.ROBOT_FRAME, self._next_seq(), robot.timestamp_us,
            protocol.encode_robot_frame(robot))
        self._log_record_bytes(data)
        await self._broadcast_participant(data)
        self.latencies_ms.append((time.perf_counter() - t_ingest) * 1e3)
        self.counters["frames_out"] += 1
        if self.counters["frames_out"] % STATE_EVERY_N_FRAMES == 0:
            await self._push_state()

    async def _on_robot_frame_ingest(self, t_ingest: float, msg: Message) -> None:
        """Pre-retargeted ingest: re-gate, re-stamp, log and forward."""
        self.counters["frames_in"] += 1
        self._log_frame(msg)
        frame = protocol.decode_robot_frame(msg.payload)
        gated = apply_expressivity_gate(frame, self.pipeline.level,
                                        self.model.face_rest)
        data = protocol.encode_message(
            MSG.ROBOT_FRAME, self._next_seq(), gated.timestamp_us,
            protocol.encode_robot_frame(gated))
        self._log_record_bytes(data)
        await self._broadcast_participant(data)
        self.latencies_ms.append((time.perf_counter() - t_ingest) * 1e3)
        self.counters["frames_out"] += 1

    async def _on_participant_frame(self, client: _Client, msg: Message) -> None:
        self.counters["participant_frames"] += 1
        self._log_frame(msg)
        frame = protocol.decode_participant_frame(msg.payload)
        anchor = client.anchor

        robot_frames = self.pipeline.robot_frames()
        posed = self.model.collider_set.pose_all(robot_frames)

        gaze_origin = to_shared_frame(Transform(frame.gaze_origin),
                                      anchor).position
        gaze_dir = anchor.anchor_in_local.inverse().rotate(frame.gaze_dir)
        target = classify_gaze(gaze_origin, gaze_dir, posed)
        self.last_gaze = target.value
        gaze_data = protocol.encode_message(
            MSG.GAZE_EVENT, self._next_seq(), frame.timestamp_us,
            protocol.encode_gaze_event(GazeEvent(frame.timestamp_us, target)))
        self._log_record_bytes(gaze_data)
        self.counters["gaze_events"] += 1
        await self._broadcast_consoles(gaze_data)

        participant_spheres = []
        for hand, palm in (("left", frame.left_palm), ("right", frame.right_palm)):
            if palm is not None:
                shared = to_shared_frame(palm, anchor)
                participant_spheres.append(HandSphere(
                    hand, shared.position, self.model.participant_hand_radius))
        robot_spheres = []
        for name, attach, prim in self.model.collider_set.entries:
            if name in ("left_hand", "right_hand"):
                frame_t = robot_frames[attach]
                robot_spheres.append(HandSphere(
                    name.split("_")[0], frame_t.apply(prim.center), prim.radius))
        events = self.contact_tracker.update(frame.timestamp_us,
                                             participant_spheres, robot_spheres)
        for evt in events:
            data = protocol.encode_message(
                MSG.CONTACT_EVENT, self._next_seq(), evt.timestamp_us,
                protocol.encode_contact_event(evt))
            self._log_record_bytes(data)
            self.counters["contact_events"] += 1
            await self._broadcast_consoles(data)

    async def _on_pedal(self, msg: Message) -> None:
        self.counters["pedal_events"] += 1
        self._log_frame(msg)
        evt = protocol.decode_pedal_event(msg.payload)
        command = self.playlist.handle_pedal(evt)
        if command is not None:
            data = protocol.encode_message(
                MSG.SPEECH_COMMAND, self._next_seq(), command.timestamp_us,
                protocol.encode_speech_command(command))
            self._log_record_bytes(data)
            self.counters["speech_commands"] += 1
            await self._broadcast_participant(data)
            await self._broadcast_consoles(data)
        await self._push_state()

    async def _on_placement(self, msg: Message) -> None:
        self._log_frame(msg)
        offset = protocol.decode_placement(msg.payload)
        self.pipeline.set_placement(offset)
        await self._push_state()

    async def _on_level(self, msg: Message) -> None:
        self._log_frame(msg)
        level = protocol.decode_level(msg.payload)
        self.pipeline.set_level(level)
        await self._push_state()

    # -- broadcast / log ------------------------------------------------------

    def _next_seq(self) -> int:
        seq = self._out_seq
        self._out_seq += 1
        return seq

    def _now_us(self) -> int:
        return time.monotonic_ns() // 1000

    async def _send(self, client: _Client, data: bytes) -> None:
        try:
            await client.conn.send(data)
        except Exception:
            pass  # reader loop handles cleanup

    async def _broadcast_participant(self, data: bytes) -> None:
        if self._participant is not None:
            await self._send(self._participant, data)

    async def _broadcast_consoles(self, data: bytes) -> None:
        for client in list(self._consoles):
            await self._send(client, data)

    def _state_snapshot(self) -> dict:
        placement = self.pipeline.placement
        return {
            "session_id": self.cfg.session_id,
            "context": self.cfg.context,
            "level": int(self.pipeline.level),
            "level_name": self.pipeline.level.name,
            "placement": {"translation": list(placement.translation),
                          "yaw": placement.yaw},
            "playlist": self.playlist.state_dict(),
            "counters": dict(self.counters),
            "last_gaze": self.last_gaze,
            "connected": {
                "operator": self._operator is not None,
                "participant": self._participant is not None,
                "consoles": len(self._consoles),
            },
        }

    async def _push_state(self) -> None:
        data = protocol.encode_message(
            MSG.SESSION_STATE, self._next_seq(), self._now_us(),
            protocol.encode_json(self._state_snapshot()))
        await self._broadcast_consoles(data)

    def _log_frame(self, msg: Message) -> None:
        self._log_record_bytes(protocol.encode(msg))

    def _log_record(self, msg_type: int, timestamp_us: int,
                    payload: bytes) -> None:
        self._log_record_bytes(protocol.encode_message(
            msg_type, self._next_seq(), timestamp_us, payload))

    def _log_record_bytes(self, data: bytes) -> None:
        try:
            self._log_queue.put_nowait(data)
        except asyncio.QueueFull:
            exc = SessionError(
                "session log queue overflow: refusing to drop records")
            self.fail(exc)
            raise exc

    async def _log_task(self) -> None:
        while True:
            data = await self._log_queue.get()
            try:
                self._log_writer.append(data)
            finally:
                self._log_queue.task_done()


async def run_session(cfg: SessionConfig, bind: str | None = None,
                      **kwargs) -> SessionServer:
    """Start a session server; with ``bind`` ("host:port") it serves
    WebSocket clients, otherwise attach a loopback listener or call
    ``serve_ws`` yourself. Returns the running server."""
    server = SessionServer(cfg, **kwargs)
    await server.start()
    if bind is not None:
        host, _, port = bind.rpartition(":")
        await server.serve_ws(host or "127.0.0.1", int(port))
    return server
