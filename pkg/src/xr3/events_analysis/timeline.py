"""Timeline export: session log -> delimiter-separated tables.

One file per channel, enough to recreate the study's event/AU timeline
plots in any tool: gaze target per sample, contact begin/end events,
speech command times, and 25-AU time series for both actors.
"""

from __future__ import annotations

import csv
from pathlib import Path

from ..face_mapping import BlendshapeFrame
from ..relay import protocol
from ..relay.protocol import MSG
from ..relay.sessionlog import SessionLogReader
from .detect import AUMappingTable, compute_aus, load_au_table

FILES = ("gaze.csv", "contacts.csv", "speech.csv", "aus_operator.csv",
         "aus_participant.csv")


def export_timeline(log_path: str | Path, out_dir: str | Path,
                    au_table: AUMappingTable | None = None) -> dict[str, int]:
    """Write the five channel tables; returns row counts per file.

    Output is a pure function of the log bytes (plus the AU table).
    """
    if au_table is None:
        au_table = load_au_table()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    au_header = ["timestamp_us", *au_table.labels]
    counts = {}
    with open(out_dir / "gaze.csv", "w", newline="") as f_gaze, \
            open(out_dir / "contacts.csv", "w", newline="") as f_contact, \
            open(out_dir / "speech.csv", "w", newline="") as f_speech, \
            open(out_dir / "aus_operator.csv", "w", newline="") as f_au_op, \
            open(out_dir / "aus_participant.csv", "w", newline="") as f_au_pt:
        w_gaze = csv.writer(f_gaze)
        w_contact = csv.writer(f_contact)
        w_speech = csv.writer(f_speech)
        w_au_op = csv.writer(f_au_op)
        w_au_pt = csv.writer(f_au_pt)

        w_gaze.writerow(["timestamp_us", "target"])
        w_contact.writerow(["timestamp_us", "kind", "participant_hand",
                            "robot_hand"])
        w_speech.writerow(["timestamp_us", "clip_id"])
        w_au_op.writerow(au_header)
        w_au_pt.writerow(au_header)
        rows = {name: 0 for name in FILES}

        def au_row(writer, name, timestamp_us, blendshapes: BlendshapeFrame):
            aus = compute_aus(blendshapes, au_table, timestamp_us)
            writer.writerow([timestamp_us,
                             *(f"{v:.6f}" for v in aus.intensities)])
            rows[name] += 1

        for msg in SessionLogReader(log_path):
            if msg.msg_type == MSG.GAZE_EVENT:
                evt = protocol.decode_gaze_event(msg.payload)
                w_gaze.writerow([evt.timestamp_us, evt.target.value])
                rows["gaze.csv"] += 1
            elif msg.msg_type == MSG.CONTACT_EVENT:
                evt = protocol.decode_contact_event(msg.payload)
                w_contact.writerow([evt.timestamp_us, evt.kind,
                                    evt.participant_hand, evt.robot_hand])
                rows["contacts.csv"] += 1
            elif msg.msg_type == MSG.SPEECH_COMMAND:
                cmd = protocol.decode_speech_command(msg.payload)
                w_speech.writerow([cmd.timestamp_us, cmd.clip_id])
                rows["speech.csv"] += 1
            elif msg.msg_type == MSG.OPERATOR_FRAME:
                frame = protocol.decode_operator_frame(msg.payload)
                au_row(w_au_op, "aus_operator.csv", frame.timestamp_us,
                       frame.blendshapes)
            elif msg.msg_type == MSG.PARTICIPANT_FRAME:
                frame = protocol.decode_participant_frame(msg.payload)
                au_row(w_au_pt, "aus_participant.csv", frame.timestamp_us,
                       frame.blendshapes)
        counts.update(rows)
    return counts
