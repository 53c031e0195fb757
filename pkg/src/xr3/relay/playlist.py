"""Pre-recorded utterance playlists and foot-pedal press handling.

The pedal has three buttons with single- and double-press bindings. A
playlist is an ordered list of clips with a cursor; bindings map
(button, press) to playlist actions: play the current clip and advance,
step next/previous, or fire one of two branch clips bound at the current
cursor position. The relay never touches audio; SpeechCommands carry clip
ids and playback happens at the endpoints.
"""

from __future__ import annotations

import enum
import importlib.resources
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError

logger = logging.getLogger(__name__)

DOUBLE_PRESS_WINDOW_US = 400_000


class Press(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2


class PlaylistAction(str, enum.Enum):
    PLAY_CURRENT_ADVANCE = "play_current_advance"
    NEXT = "next"
    PREVIOUS = "previous"
    BRANCH_A = "branch_a"
    BRANCH_B = "branch_b"


@dataclass(frozen=True)
class PedalEvent:
    button: int  # 1..3
    press: Press
    timestamp_us: int

    def __post_init__(self):
        if self.button not in (1, 2, 3):
            raise ValueError(f"pedal button {self.button} out of range")
        object.__setattr__(self, "press", Press(self.press))


@dataclass(frozen=True)
class SpeechCommand:
    clip_id: str
    timestamp_us: int


@dataclass(frozen=True)
class Clip:
    id: str
    label: str = ""
    branch_a: str | None = None
    branch_b: str | None = None


@dataclass
class UtterancePlaylist:
    context: str
    clips: list[Clip]
    branch_clips: list[Clip] = field(default_factory=list)
    bindings: dict[tuple[int, Press], PlaylistAction] = field(default_factory=dict)
    double_press_window_us: int = DOUBLE_PRESS_WINDOW_US
    cursor: int = 0

    def __post_init__(self):
        if not self.clips:
            raise ConfigError("playlist has no clips")
        ids = [c.id for c in self.clips + self.branch_clips]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate clip ids in playlist")
        known = set(ids)
        for clip in self.clips:
            for ref in (clip.branch_a, clip.branch_b):
                if ref is not None and ref not in known:
                    raise ConfigError(
                        f"clip {clip.id!r} references unknown branch {ref!r}")
        if not 0 <= self.cursor < len(self.clips):
            raise ConfigError("cursor out of bounds")

    def clip_ids(self) -> set[str]:
        return {c.id for c in self.clips + self.branch_clips}

    def current(self) -> Clip:
        return self.clips[self.cursor]

    def handle_pedal(self, evt: PedalEvent) -> SpeechCommand | None:
        """Apply one pedal event; mutates the cursor, returns a
        SpeechCommand when the binding plays a clip. Unbound combinations
        are a logged no-op."""
        action = self.bindings.get((evt.button, Press(evt.press)))
        if action is None:
            logger.warning("unbound pedal combination: button %d %s",
                           evt.button, Press(evt.press).name.lower())
            return None
        if action == PlaylistAction.PLAY_CURRENT_ADVANCE:
            clip = self.clips[self.cursor]
            self.cursor = min(self.cursor + 1, len(self.clips) - 1)
            return SpeechCommand(clip.id, evt.timestamp_us)
        if action == PlaylistAction.NEXT:
            self.cursor = min(self.cursor + 1, len(self.clips) - 1)
            return None
        if action == PlaylistAction.PREVIOUS:
            self.cursor = max(self.cursor - 1, 0)
            return None
        # branch clips play without moving the main cursor
        ref = (self.current().branch_a if action == PlaylistAction.BRANCH_A
               else self.current().branch_b)
        if ref is None:
            logger.warning("no %s bound at clip %r", action.value,
                           self.current().id)
            return None
        return SpeechCommand(ref, evt.timestamp_us)

    def state_dict(self) -> dict:
        return {
            "context": self.context,
            "cursor": self.cursor,
            "clips": [{"id": c.id, "label": c.label} for c in self.clips],
            "current": self.current().id,
        }


DEFAULT_BINDINGS = {
    (1, Press.SINGLE): PlaylistAction.PLAY_CURRENT_ADVANCE,
    (2, Press.SINGLE): PlaylistAction.NEXT,
    (2, Press.DOUBLE): PlaylistAction.PREVIOUS,
    (3, Press.SINGLE): PlaylistAction.BRANCH_A,
    (3, Press.DOUBLE): PlaylistAction.BRANCH_B,
}


def _parse_bindings(doc: dict) -> dict[tuple[int, Press], PlaylistAction]:
    if "bindings" not in doc:
        return dict(DEFAULT_BINDINGS)
    out = {}
    for key, action in doc["bindings"].items():
        try:
            button_s, press_s = key.split("_")
            combo = (int(button_s.lstrip("b")), Press[press_s.upper()])
            out[combo] = PlaylistAction(action)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad binding {key!r}: {exc}") from exc
    return out


def playlist_from_dict(doc: dict) -> UtterancePlaylist:
    def clip(node) -> Clip:
        return Clip(id=node["id"], label=node.get("label", ""),
                    branch_a=node.get("branch_a"), branch_b=node.get("branch_b"))

    try:
        return UtterancePlaylist(
            context=doc.get("context", "functional"),
            clips=[clip(n) for n in doc["clips"]],
            branch_clips=[clip(n) for n in doc.get("branch_clips", [])],
            bindings=_parse_bindings(doc),
            double_press_window_us=int(doc.get("double_press_window_ms",
                                               400)) * 1000,
        )
    except KeyError as exc:
        raise ConfigError(f"playlist: missing field {exc}") from exc


def load_playlist(path: str | Path | None = None,
                  context: str = "functional") -> UtterancePlaylist:
    """Load a playlist file; ``None`` loads the bundled default for
    ``context`` (functional or playful)."""
    if path is None:
        name = f"playlist_{context}.yaml"
        ref = importlib.resources.files("xr3.data").joinpath(name)
        doc = yaml.safe_load(ref.read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    return playlist_from_dict(doc)


@dataclass
class _ButtonState:
    last_down_us: int | None = None


class PressDetector:
    """Raw button down/up edges -> single/double PedalEvents.

    Two downs on the same button within the window emit one double press;
    otherwise a single press is emitted once the window expires. Feed
    edges in timestamp order, then call :meth:`poll` with the current
    time (and :meth:`flush` at end of stream).
    """

    def __init__(self, window_us: int = DOUBLE_PRESS_WINDOW_US):
        if window_us <= 0:
            raise ValueError("window must be positive")
        self.window_us = window_us
        self._buttons: dict[int, _ButtonState] = {b: _ButtonState() for b in (1, 2, 3)}

    def feed(self, button: int, edge: str, timestamp_us: int) -> list[PedalEvent]:
        """Process one edge ('down' | 'up'); may emit events whose window
        closed at or before this timestamp."""
        out = self.poll(timestamp_us)
        if edge != "down":  # releases don't participate in press detection
            return out
        st = self._buttons[button]
        if st.last_down_us is not None and \
                timestamp_us - st.last_down_us < self.window_us:
            out.append(PedalEvent(button, Press.DOUBLE, timestamp_us))
            st.last_down_us = None
        else:
            st.last_down_us = timestamp_us
        return out

    def poll(self, now_us: int) -> list[PedalEvent]:
        """Emit singles whose double-press window has expired by now."""
        out = []
        for button in sorted(self._buttons):
            st = self._buttons[button]
            if st.last_down_us is not None and \
                    now_us - st.last_down_us >= self.window_us:
                out.append(PedalEvent(button, Press.SINGLE,
                                      st.last_down_us + self.window_us))
                st.last_down_us = None
        return out

    def flush(self) -> list[PedalEvent]:
        """End of stream: emit all pending singles."""
        out = []
        for button in sorted(self._buttons):
            st = self._buttons[button]
            if st.last_down_us is not None:
                out.append(PedalEvent(button, Press.SINGLE,
                                      st.last_down_us + self.window_us))
                st.last_down_us = None
        return out
