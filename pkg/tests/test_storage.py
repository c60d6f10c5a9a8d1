"""Tests for toolsift storage module"""
import json
import numpy as np
import pytest

from toolsift.errors import ArtifactFormatError, MalformedLine
from toolsift.storage import (
    MANIFEST_FILE, file_digest, iter_jsonl, load_artifact, read_header_rows, save_artifact,
    write_header_rows, write_json, write_jsonl, write_manifest,
)


def test_iter_jsonl_rejects_bom(tmp_path):
    path = tmp_path / "bom.jsonl"
    path.write_bytes('\ufeff{"a": 1}\n'.encode("utf-8"))
    with pytest.raises(MalformedLine):
        list(iter_jsonl(str(path)))


def test_iter_jsonl_rejects_non_object(write_jsonl_file):
    path = write_jsonl_file("list.jsonl", ["[1, 2]"])
    with pytest.raises(MalformedLine):
        list(iter_jsonl(path))


def test_write_jsonl_line_endings(tmp_path):
    path = str(tmp_path / "out.jsonl")
    write_jsonl(path, [{"a": 1}, {"b": "é"}])
    data = (tmp_path / "out.jsonl").read_bytes()
    assert data == '{"a": 1}\n{"b": "é"}\n'.encode("utf-8")


def test_failed_write_keeps_previous_file(tmp_path):
    path = str(tmp_path / "out.jsonl")
    write_jsonl(path, [{"a": 1}])

    def rows():
        yield {"a": 2}
        raise RuntimeError("interrupted")

    with pytest.raises(RuntimeError):
        write_jsonl(path, rows())
    assert (tmp_path / "out.jsonl").read_text() == '{"a": 1}\n'
    assert [p.name for p in tmp_path.iterdir()] == ["out.jsonl"]


def test_failed_write_leaves_no_file(tmp_path):
    with pytest.raises(TypeError):
        write_json(str(tmp_path / "report.json"), {"a": 1, "b": object()})
    assert list(tmp_path.iterdir()) == []


def test_header_rows(tmp_path):
    path = str(tmp_path / "m.jsonl")
    write_header_rows(path, {"dim": 2}, [("x", np.array([0.1, 0.2]))])
    header, rows = read_header_rows(path)
    assert header == {"dim": 2}
    assert rows == [("x", [0.1, 0.2])]


def test_header_rows_bad_row(write_jsonl_file):
    path = write_jsonl_file("m.jsonl", [{"dim": 2}, {"id": "x"}])
    with pytest.raises(MalformedLine):
        read_header_rows(path)


def test_artifact_restores_exact_values(tmp_path):
    """Saved parameters come back bit-for-bit"""
    rng = np.random.default_rng(3)
    params = {"W0": rng.normal(size=(3, 4)), "b0": rng.normal(size=4)}
    path = str(tmp_path / "a.jsonl")
    save_artifact(path, {"kind": "test"}, params)
    header, loaded = load_artifact(path)
    assert header["kind"] == "test"
    assert header["shapes"] == {"W0": [3, 4], "b0": [4]}
    for name in params:
        assert np.array_equal(loaded[name], params[name])


def test_artifact_incomplete(tmp_path):
    path = str(tmp_path / "a.jsonl")
    save_artifact(path, {}, {"W": np.ones((2, 2))})
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    (tmp_path / "a.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ArtifactFormatError):
        load_artifact(path)


def test_manifest_is_deterministic(tmp_path):
    data = tmp_path / "in.txt"
    data.write_text("hello")
    out = tmp_path / "out"
    out.mkdir()
    first = write_manifest(str(out), "stats", {"seed": 0}, [str(data), None, str(tmp_path / "nope")])
    before = open(first, "rb").read()
    write_manifest(str(out), "stats", {"seed": 0}, [str(data)])
    assert open(first, "rb").read() == before

    manifest = json.loads(before)
    assert manifest["command"] == "stats"
    assert manifest["inputs"] == {str(data): file_digest(str(data))}
    assert (out / MANIFEST_FILE).exists()
