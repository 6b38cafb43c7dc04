"""Episode trajectory logs: a CSV of per-step rows plus a JSON sidecar.

The CSV is the human- and plot-facing record; the sidecar holds the action
sequence and every reset-time quantity needed to reconstruct the episode
exactly. Floats are written with Python's shortest round-trip repr, so a
replayed episode can be compared against its log bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .rewards import TERM_NAMES

COLUMNS = (
    ("t",)
    + tuple(f"q{i}" for i in range(5))
    + tuple(f"qd{i}" for i in range(5))
    + tuple(f"tau{i}" for i in range(5))
    + ("bucket_x", "bucket_y", "bucket_z", "bucket_roll", "bucket_pitch", "bucket_yaw")
    + ("rock_x", "rock_y", "rock_z")
    + tuple(f"r_{name}" for name in TERM_NAMES)
    + ("termination",)
)


def step_row(t, q, qd, tau, edge_w, chi, turn, rock_pos, terms, cause) -> list:
    """One CSV row in COLUMNS order for a single env's step."""
    return (
        [float(t)]
        + [float(v) for v in q]
        + [float(v) for v in qd]
        + [float(v) for v in tau]
        + [float(v) for v in edge_w]
        + [0.0, float(chi), float(turn)]
        + [float(v) for v in rock_pos]
        + [float(v) for v in terms]
        + [int(cause)]
    )


def write_episode_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(COLUMNS)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_episode_csv(path):
    """Rows back as (header, (T, len(COLUMNS)) float array)."""
    lines = Path(path).read_text().strip().split("\n")
    header = tuple(lines[0].split(","))
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return header, data


def write_sidecar(path, actions, meta) -> None:
    """Action history plus reset-time metadata, enough for exact replay."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"actions": np.asarray(actions, dtype=np.float64).tolist(), **meta}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_sidecar(path) -> dict:
    doc = json.loads(Path(path).read_text())
    doc["actions"] = np.asarray(doc["actions"], dtype=np.float64)
    return doc
