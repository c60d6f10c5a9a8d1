#!/usr/bin/env python3
"""
toolsift Storage - Functions for saving and loading files

This module manages persistence: JSON Lines reading and writing, the
header+rows format shared by embedding matrices and model artifacts, SHA-256
digests of inputs, and the run manifest each CLI command writes.
"""
import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from typing import IO, Any, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ArtifactFormatError, MalformedLine

MANIFEST_FILE = "manifest.json"


# -------------------------------
# JSON Lines
# -------------------------------
def iter_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """
    Yield (line_no, object) pairs from a UTF-8 JSON Lines file.

    Blank lines are skipped. A byte-order mark, invalid JSON or a value that
    is not a JSON object raises `MalformedLine` with the 1-based line number.

    Raises:
        FileNotFoundError: If the file doesn't exist
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")

    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, line in enumerate(f, start=1):
            if line_no == 1 and line.startswith("\ufeff"):
                raise MalformedLine(line_no, path, "byte-order mark is not allowed")
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedLine(line_no, path, str(e)) from e
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, path, "expected a JSON object")
            yield line_no, obj


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


@contextmanager
def atomic_open(path: str) -> Iterator[IO[str]]:
    """
    Open a sibling temp file for text writing and move it onto `path` on
    success; on error the temp file is removed and `path` is left as it was.
    """
    _ensure_parent(path)
    parent = os.path.dirname(os.path.abspath(path))
    f = tempfile.NamedTemporaryFile("w", encoding="utf-8", newline="\n", dir=parent,
                                    prefix="." + os.path.basename(path) + ".", suffix=".tmp", delete=False)
    try:
        with f:
            yield f
        os.chmod(f.name, os.stat(path).st_mode & 0o777 if os.path.exists(path) else 0o644)
        os.replace(f.name, path)
    except BaseException:
        if os.path.exists(f.name):
            os.remove(f.name)
        raise


def write_jsonl(path: str, objects: Iterable[Any]) -> None:
    """Write objects one per line with "\\n" endings, atomically."""
    with atomic_open(path) as f:
        for obj in objects:
            f.write(dumps_line(obj))
            f.write("\n")


def write_json(path: str, obj: Any) -> None:
    with atomic_open(path) as f:
        json.dump(obj, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# -------------------------------
# Header + rows
# -------------------------------
def write_header_rows(path: str, header: Dict[str, Any], rows: Iterable[Tuple[str, np.ndarray]]) -> None:
    """Write a header object followed by {"id", "vec"} rows."""
    def lines():
        yield header
        for row_id, vec in rows:
            yield {"id": row_id, "vec": [float(x) for x in np.asarray(vec, dtype=np.float64)]}

    write_jsonl(path, lines())


def read_header_rows(path: str) -> Tuple[Dict[str, Any], List[Tuple[str, List[float]]]]:
    """Read a header+rows file; the header is the first non-blank line."""
    header: Optional[Dict[str, Any]] = None
    rows: List[Tuple[str, List[float]]] = []
    for line_no, obj in iter_jsonl(path):
        if header is None:
            header = obj
            continue
        if "id" not in obj or "vec" not in obj or not isinstance(obj["vec"], list):
            raise MalformedLine(line_no, path, "expected {\"id\": ..., \"vec\": [...]}")
        rows.append((str(obj["id"]), obj["vec"]))
    if header is None:
        raise ArtifactFormatError(f"{path} has no header line")
    return header, rows


def save_artifact(path: str, header: Dict[str, Any], params: Dict[str, np.ndarray]) -> None:
    """
    Save named parameter tensors under a header.

    2-D tensors are written one row per line with ids "name/i"; 1-D tensors
    as a single row with id "name". Shapes are recorded in the header so the
    file can be rebuilt exactly (JSON floats round-trip bit-for-bit).
    """
    shapes = {name: list(np.shape(value)) for name, value in params.items()}
    full_header = dict(header)
    full_header["shapes"] = shapes
    full_header["params"] = list(params)

    def rows():
        for name, value in params.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim == 1:
                yield name, arr
            elif arr.ndim == 2:
                for i in range(arr.shape[0]):
                    yield f"{name}/{i}", arr[i]
            else:
                raise ArtifactFormatError(f"parameter {name} has unsupported rank {arr.ndim}")

    write_header_rows(path, full_header, rows())


def load_artifact(path: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    header, rows = read_header_rows(path)
    shapes = header.get("shapes")
    names = header.get("params")
    if not isinstance(shapes, dict) or not isinstance(names, list):
        raise ArtifactFormatError(f"{path} header lacks shapes/params")

    by_id = dict(rows)
    params: Dict[str, np.ndarray] = {}
    for name in names:
        shape = shapes[name]
        try:
            if len(shape) == 1:
                arr = np.asarray(by_id[name], dtype=np.float64)
            else:
                arr = np.asarray([by_id[f"{name}/{i}"] for i in range(shape[0])], dtype=np.float64)
                arr = arr.reshape(shape)
        except (KeyError, ValueError) as e:
            raise ArtifactFormatError(f"{path}: parameter {name} is incomplete ({e})") from e
        if list(arr.shape) != list(shape):
            raise ArtifactFormatError(f"{path}: parameter {name} has shape {arr.shape}, expected {shape}")
        params[name] = arr
    return header, params


# -------------------------------
# Digests and manifests
# -------------------------------
def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def text_digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, config: Dict[str, Any], inputs: Iterable[str],
                   outputs: Iterable[str] = ()) -> str:
    """
    Write the run manifest: resolved config plus SHA-256 digests of inputs
    and outputs. No timestamps, so identical runs produce identical bytes.

    Returns:
        Path of the written manifest
    """
    from . import __version__

    input_digests = {p: file_digest(p) for p in sorted({p for p in inputs if p}) if os.path.isfile(p)}
    output_digests = {
        os.path.basename(p): file_digest(p) for p in sorted({p for p in outputs if p}) if os.path.isfile(p)
    }
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": input_digests,
        "outputs": output_digests,
    }
    path = os.path.join(out_dir, MANIFEST_FILE)
    write_json(path, manifest)
    return path
