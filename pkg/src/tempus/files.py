"""On-disk formats: samples CSV, run metadata, channel-matrix CSV and PGM heatmaps."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from tempus.attack import TraceLog
from tempus.leakage import ChannelMatrix

SAMPLES_HEADER = ("iter", "secret", "latency")


class MalformedFile(ValueError):
    """A data file that does not follow its format; message names the line."""


def write_samples(path, log: TraceLog) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SAMPLES_HEADER) + "\n")
        fh.writelines(
            f"{i},{s},{t}\n"
            for i, (s, t) in enumerate(zip(log.secrets.tolist(), log.latencies.tolist()))
        )


def read_samples(path) -> TraceLog:
    secrets, latencies = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedFile(f"{path}: line 1: empty file")
        if tuple(h.strip() for h in header) != SAMPLES_HEADER:
            raise MalformedFile(f"{path}: line 1: expected header {','.join(SAMPLES_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise MalformedFile(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                i, s, t = (int(x) for x in row)
            except ValueError:
                raise MalformedFile(f"{path}: line {lineno}: non-integer field") from None
            if i != lineno - 2:
                raise MalformedFile(f"{path}: line {lineno}: iter {i} out of sequence")
            if s < 0 or t < 0:
                raise MalformedFile(f"{path}: line {lineno}: negative secret or latency")
            secrets.append(s)
            latencies.append(t)
    if not secrets:
        raise MalformedFile(f"{path}: no samples")
    return TraceLog(None, secrets, latencies)


def meta_path(samples_path) -> Path:
    p = Path(samples_path)
    return p.with_name(p.name + ".meta.json")


def write_meta(samples_path, meta: dict) -> None:
    meta_path(samples_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(samples_path) -> dict | None:
    p = meta_path(samples_path)
    if not p.exists():
        return None
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{p}: line {exc.lineno}: {exc.msg}") from None


def write_matrix_csv(path, matrix: ChannelMatrix) -> None:
    """Rows are output bins (latency, or bin centre), columns are secrets."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", *matrix.inputs.tolist()])
        for b, row in zip(matrix.bins.tolist(), matrix.probs):
            w.writerow([b, *(f"{p:.6g}" for p in row)])


def write_heatmap_pgm(path, matrix: ChannelMatrix) -> None:
    """8-bit binary graymap: inputs left to right, outputs bottom to top, white = likely."""
    probs = matrix.probs[::-1]
    peak = probs.max()
    img = np.zeros(probs.shape, dtype=np.uint8) if peak <= 0 else np.rint(probs / peak * 255).astype(np.uint8)
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    # exactly one whitespace byte separates maxval from the pixels
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise MalformedFile(f"{path}: not a binary PGM")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise MalformedFile(f"{path}: only 8-bit graymaps are supported")
    pixels = np.frombuffer(data[m.end(): m.end() + width * height], dtype=np.uint8)
    return pixels.reshape(height, width)
