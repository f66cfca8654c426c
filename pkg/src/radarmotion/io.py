"""Line-delimited JSON records for poses, radar frames, datasets and predictions,
plus the evaluation CSV.

Floats are written with 9 significant digits, so files are byte-stable for a
given set of arrays.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .codec import PoseSequence
from .dataset import MotionSample
from .metrics import METRIC_NAMES, EvalReport
from .radar import RadarFrame


class DataError(ValueError):
    """Malformed or inconsistent artifact on disk."""


def _num(arr) -> str:
    """Nested JSON array text for ``arr`` with 9 significant digits."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        return "%.9g" % arr
    if arr.size == 0:
        return "[]" if arr.ndim == 1 else "[" + ",".join(_num(a) for a in arr) + "]"
    flat = np.char.mod("%.9g", arr.reshape(-1, arr.shape[-1]))
    rows = ["[" + ",".join(r) + "]" for r in flat]
    for n in reversed(arr.shape[:-1]):
        rows = ["[" + ",".join(rows[i:i + n]) + "]" for i in range(0, len(rows), n)]
    out = rows[0]
    return out.replace("nan", "NaN").replace("inf", "Infinity")


def _record(fields: dict) -> str:
    """JSON object text; values that are numpy arrays go through :func:`_num`."""
    parts = []
    for k, v in fields.items():
        text = _num(v) if isinstance(v, np.ndarray) else json.dumps(v, sort_keys=True)
        parts.append(json.dumps(k) + ":" + text)
    return "{" + ",".join(parts) + "}"


def read_jsonl(path) -> Iterator[dict]:
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{n}: {exc}") from exc


def write_lines(path, lines: Iterable[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


# -- poses ------------------------------------------------------------------
def pose_record(seq: PoseSequence, seq_id: str) -> str:
    return _record({"id": seq_id, "frame_rate": seq.frame_rate,
                    "joint_schema": list(seq.joint_schema), "frames": seq.frames})


def pose_from_record(rec: dict) -> tuple[str, PoseSequence]:
    try:
        frames = np.asarray(rec["frames"], dtype=np.float64)
        return rec["id"], PoseSequence(frames, float(rec["frame_rate"]), tuple(rec["joint_schema"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad pose record: {exc}") from exc


def save_poses(path, seqs: dict[str, PoseSequence]) -> None:
    write_lines(path, (pose_record(s, sid) for sid, s in seqs.items()))


def load_poses(path) -> dict[str, PoseSequence]:
    return dict(pose_from_record(r) for r in read_jsonl(path))


# -- radar ------------------------------------------------------------------
def radar_record(frame: RadarFrame, sample_id: str, frame_index: int) -> str:
    return _record({"sample_id": sample_id, "frame_index": int(frame_index),
                    "valid_count": int(frame.valid_count), "points": frame.points.reshape(-1, 6)})


def radar_from_record(rec: dict) -> RadarFrame:
    try:
        pts = np.asarray(rec["points"], dtype=np.float64).reshape(-1, 6)
        return RadarFrame(pts, timestamp=int(rec["frame_index"]), valid_count=int(rec["valid_count"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad radar record: {exc}") from exc


def save_radar(path, streams: dict[str, list[RadarFrame]]) -> None:
    write_lines(path, (radar_record(fr, sid, i) for sid, frames in streams.items()
                       for i, fr in enumerate(frames)))


def load_radar(path) -> dict[str, list[RadarFrame]]:
    out: dict[str, list[RadarFrame]] = {}
    for rec in read_jsonl(path):
        fr = radar_from_record(rec)
        frames = out.setdefault(rec["sample_id"], [])
        if fr.timestamp != len(frames):
            raise DataError(f"{rec['sample_id']}: frame {fr.timestamp} out of order")
        frames.append(fr)
    return out


# -- datasets ---------------------------------------------------------------
def save_dataset(path, train: list[MotionSample], test: list[MotionSample],
                 streams: dict[str, list[RadarFrame]], meta: dict) -> None:
    """Header, then the processed radar frames of every sequence, then one
    record per sample pointing at its frames."""

    def lines():
        yield _record({"kind": "header", **meta})
        for sid, frames in streams.items():
            for i, fr in enumerate(frames):
                yield '{"kind":"radar",' + radar_record(fr, sid, i)[1:]
        for split, samples in (("train", train), ("test", test)):
            for s in samples:
                yield _record({
                    "kind": "sample", "sample_id": s.sample_id, "split": split, "tag": s.tag,
                    "sequence": s.meta["sequence"], "start": int(s.meta["start"]),
                    "frame_rate": s.gt_history.frame_rate,
                    "joint_schema": list(s.gt_history.joint_schema),
                    "history": s.gt_history.frames, "future": s.gt_future.frames,
                })

    write_lines(path, lines())


def load_dataset(path) -> tuple[dict, list[MotionSample], list[MotionSample]]:
    meta, streams, train, test = None, {}, [], []
    for rec in read_jsonl(path):
        kind = rec.get("kind")
        if kind == "header":
            meta = {k: v for k, v in rec.items() if k != "kind"}
        elif kind == "radar":
            streams.setdefault(rec["sample_id"], []).append(radar_from_record(rec))
        elif kind == "sample":
            try:
                frames = streams[rec["sequence"]]
                h = len(rec["history"])
                schema = tuple(rec["joint_schema"])
                s = MotionSample(
                    sample_id=rec["sample_id"],
                    radar_history=frames[rec["start"]:rec["start"] + h],
                    gt_history=PoseSequence(np.asarray(rec["history"], dtype=np.float64),
                                            rec["frame_rate"], schema),
                    gt_future=PoseSequence(np.asarray(rec["future"], dtype=np.float64),
                                           rec["frame_rate"], schema),
                    tag=rec.get("tag", ""),
                    meta={"sequence": rec["sequence"], "start": rec["start"]},
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"sample {rec.get('sample_id')}: {exc}") from exc
            if len(s.radar_history) != h:
                raise DataError(f"sample {s.sample_id}: radar history shorter than pose history")
            (train if rec["split"] == "train" else test).append(s)
        else:
            raise DataError(f"unknown record kind {kind!r}")
    if meta is None:
        raise DataError(f"{path}: missing header")
    return meta, train, test


# -- predictions and evaluation --------------------------------------------
def save_predictions(path, predictions: dict[str, list[np.ndarray]]) -> None:
    write_lines(path, (_record({"sample_id": sid, "hypothesis_index": h, "frames": np.asarray(f)})
                       for sid, hyps in predictions.items() for h, f in enumerate(hyps)))


def load_predictions(path) -> dict[str, list[np.ndarray]]:
    out: dict[str, dict[int, np.ndarray]] = {}
    for rec in read_jsonl(path):
        try:
            out.setdefault(rec["sample_id"], {})[int(rec["hypothesis_index"])] = \
                np.asarray(rec["frames"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad prediction record: {exc}") from exc
    return {sid: [hyps[i] for i in sorted(hyps)] for sid, hyps in out.items()}


def _cell(v) -> str:
    return "" if v is None else "%.9g" % v


def save_evaluation(path, report: EvalReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *METRIC_NAMES])
        for row in report.per_sample:
            w.writerow([row["sample_id"], *(_cell(row[m]) for m in METRIC_NAMES)])
        agg = report.aggregate
        w.writerow(["aggregate", *(_cell(agg[m]) for m in METRIC_NAMES)])


def load_evaluation(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "sample_id" else (float(v) if v else None)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
