import pytest

from xr3.errors import ConfigError
from xr3.relay.playlist import (Clip, PedalEvent, Press, PressDetector,
                                UtterancePlaylist, DEFAULT_BINDINGS,
                                load_playlist, playlist_from_dict)

MS = 1000


class TestPressDetector:
    def test_two_downs_within_window_make_a_double(self):
        det = PressDetector()
        events = det.feed(1, "down", 0)
        events += det.feed(1, "down", 300 * MS)
        events += det.flush()
        assert events == [PedalEvent(1, Press.DOUBLE, 300 * MS)]

    def test_two_downs_outside_window_make_two_singles(self):
        det = PressDetector()
        events = det.feed(1, "down", 0)
        events += det.feed(1, "down", 500 * MS)
        events += det.flush()
        assert [e.press for e in events] == [Press.SINGLE, Press.SINGLE]
        assert events[0].timestamp_us == 400 * MS

    def test_single_emitted_at_window_expiry(self):
        det = PressDetector()
        assert det.feed(2, "down", 0) == []
        assert det.poll(399 * MS) == []
        assert det.poll(400 * MS) == [PedalEvent(2, Press.SINGLE, 400 * MS)]

    def test_buttons_independent(self):
        det = PressDetector()
        det.feed(1, "down", 0)
        events = det.feed(2, "down", 100 * MS)
        events += det.flush()
        assert sorted(e.button for e in events) == [1, 2]
        assert all(e.press == Press.SINGLE for e in events)

    def test_releases_ignored(self):
        det = PressDetector()
        events = det.feed(1, "down", 0)
        events += det.feed(1, "up", 50 * MS)
        events += det.feed(1, "down", 100 * MS)
        events += det.flush()
        assert events == [PedalEvent(1, Press.DOUBLE, 100 * MS)]


@pytest.fixture
def playlist():
    return load_playlist(context="functional")


class TestHandlePedal:
    def test_play_current_advances(self, playlist):
        cmd = playlist.handle_pedal(PedalEvent(1, Press.SINGLE, 0))
        assert cmd.clip_id == playlist.clips[0].id
        assert playlist.cursor == 1

    def test_previous_clamps_at_start(self, playlist):
        assert playlist.handle_pedal(PedalEvent(2, Press.DOUBLE, 0)) is None
        assert playlist.cursor == 0

    def test_next_clamps_at_end(self, playlist):
        playlist.cursor = len(playlist.clips) - 1
        playlist.handle_pedal(PedalEvent(2, Press.SINGLE, 0))
        assert playlist.cursor == len(playlist.clips) - 1

    def test_branch_plays_without_moving_cursor(self, playlist):
        idx = next(i for i, c in enumerate(playlist.clips) if c.branch_a)
        playlist.cursor = idx
        cmd = playlist.handle_pedal(PedalEvent(3, Press.SINGLE, 5))
        assert cmd.clip_id == playlist.clips[idx].branch_a
        assert playlist.cursor == idx
        cmd_b = playlist.handle_pedal(PedalEvent(3, Press.DOUBLE, 6))
        assert cmd_b.clip_id == playlist.clips[idx].branch_b

    def test_unbound_branch_is_noop(self, playlist, caplog):
        assert playlist.clips[0].branch_a is None
        with caplog.at_level("WARNING"):
            assert playlist.handle_pedal(PedalEvent(3, Press.SINGLE, 0)) is None
        assert playlist.cursor == 0
        assert "no branch_a" in caplog.text

    def test_play_at_last_clip_stays(self, playlist):
        playlist.cursor = len(playlist.clips) - 1
        last = playlist.clips[-1].id
        assert playlist.handle_pedal(PedalEvent(1, Press.SINGLE, 0)).clip_id \
            == last
        assert playlist.handle_pedal(PedalEvent(1, Press.SINGLE, 1)).clip_id \
            == last

    def test_fixed_sequence_is_deterministic(self):
        script = [(1, Press.SINGLE), (2, Press.SINGLE), (1, Press.SINGLE),
                  (2, Press.DOUBLE), (1, Press.SINGLE), (3, Press.SINGLE)]

        def run():
            pl = load_playlist(context="playful")
            out = []
            for k, (b, p) in enumerate(script):
                cmd = pl.handle_pedal(PedalEvent(b, p, k))
                out.append(cmd.clip_id if cmd else None)
            return out

        assert run() == run()


class TestPlaylistConfig:
    def test_default_bindings_loaded(self, playlist):
        assert playlist.bindings == DEFAULT_BINDINGS
        assert playlist.double_press_window_us == 400 * MS

    def test_both_contexts_bundled(self):
        functional = load_playlist(context="functional")
        playful = load_playlist(context="playful")
        assert functional.context == "functional"
        assert playful.context == "playful"
        assert functional.clip_ids() != playful.clip_ids()

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ConfigError):
            UtterancePlaylist("functional",
                              [Clip("a"), Clip("a")])

    def test_unknown_branch_target_rejected(self):
        with pytest.raises(ConfigError):
            UtterancePlaylist("functional",
                              [Clip("a", branch_a="missing")])

    def test_empty_playlist_rejected(self):
        with pytest.raises(ConfigError):
            UtterancePlaylist("functional", [])

    def test_bad_binding_name_rejected(self):
        doc = {"clips": [{"id": "a"}],
               "bindings": {"b9_often": "next"}}
        with pytest.raises(ConfigError):
            playlist_from_dict(doc)
