"""Session relay: wire protocol, append-only session log, utterance
playlist / pedal handling, transports, and the session server."""

from .protocol import (MSG, Message, decode_message, encode_message,
                       FrameReader)
from .playlist import PedalEvent, PressDetector, SpeechCommand, UtterancePlaylist
from .sessionlog import SessionLogReader, SessionLogWriter
from .server import SessionConfig, SessionServer

__all__ = [
    "MSG", "Message", "decode_message", "encode_message", "FrameReader",
    "PedalEvent", "PressDetector", "SpeechCommand", "UtterancePlaylist",
    "SessionLogReader", "SessionLogWriter", "SessionConfig", "SessionServer",
]
