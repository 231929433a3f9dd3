import numpy as np
import pytest

from tempus.attack import TraceLog
from tempus.files import (
    MalformedFile,
    read_meta,
    read_pgm,
    read_samples,
    write_heatmap_pgm,
    write_matrix_csv,
    write_meta,
    write_samples,
)
from tempus.leakage import build_matrix


def test_samples_round_trip(tmp_path):
    log = TraceLog(None, [3, 0, 9], [100, 12, 10])
    path = tmp_path / "s.csv"
    write_samples(path, log)
    assert path.read_bytes() == b"iter,secret,latency\n0,3,100\n1,0,12\n2,9,10\n"
    back = read_samples(path)
    assert back.secrets.tolist() == [3, 0, 9]
    assert back.latencies.tolist() == [100, 12, 10]


@pytest.mark.parametrize(
    "body, line",
    [
        ("iter,secret,latency\n0,1,2\n1,1\n", 3),
        ("iter,secret,latency\n0,1,x\n", 2),
        ("iter,secret,latency\n0,1,2\n5,1,2\n", 3),
        ("iter,secret,latency\n0,-1,2\n", 2),
        ("i,s,t\n0,1,2\n", 1),
        ("", 1),
    ],
)
def test_malformed_samples_name_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(MalformedFile, match=f"line {line}"):
        read_samples(path)


def test_header_only(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("iter,secret,latency\n")
    with pytest.raises(MalformedFile):
        read_samples(path)


def test_meta(tmp_path):
    path = tmp_path / "s.csv"
    assert read_meta(path) is None
    write_meta(path, {"seed": 3, "channel": "bht"})
    assert read_meta(path) == {"seed": 3, "channel": "bht"}
    (tmp_path / "s.csv.meta.json").write_text("{oops")
    with pytest.raises(MalformedFile):
        read_meta(path)


def test_matrix_csv_and_heatmap(tmp_path):
    m = build_matrix([(0, 10), (0, 10), (1, 20), (1, 10)])
    write_matrix_csv(tmp_path / "m.csv", m)
    assert (tmp_path / "m.csv").read_text().splitlines() == ["bin,0,1", "10,1,0.5", "20,0,0.5"]
    write_heatmap_pgm(tmp_path / "h.pgm", m)
    img = read_pgm(tmp_path / "h.pgm")
    # highest latency on the top row, inputs left to right
    assert img.tolist() == [[0, 128], [255, 128]]


def test_heatmap_pixels_may_look_like_whitespace(tmp_path):
    m = build_matrix([(0, 0)] * 10 + [(0, 1)] * 245 + [(1, 1)])
    write_heatmap_pgm(tmp_path / "h.pgm", m)
    img = read_pgm(tmp_path / "h.pgm")
    assert img.shape == (2, 2)
    assert img[1, 0] == np.rint(10 / 245 * 255)
