"""On-disk formats.

Binary bundles (feature fixtures, checkpoints) share one layout::

    line 1     : JSON header, UTF-8, terminated by a single b"\\n"
    remainder  : little-endian float64 payload, C order

The header always carries ``format``, ``dtype`` ("float64"), ``endianness``
("little") and ``arrays``: a list of ``{"name", "shape"}`` entries whose
flattened data appear back to back in the payload in list order.

Text documents (graphs, episodes, configs, reports) are JSON with sorted keys
so identical content always serialises to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError

_LE_F64 = np.dtype("<f8")


def dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(dumps(doc))


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def write_bundle(path: str | Path, header: dict, arrays: Sequence[tuple[str, np.ndarray]]) -> None:
    head = dict(header)
    head.update(
        dtype="float64",
        endianness="little",
        arrays=[{"name": name, "shape": list(np.shape(a))} for name, a in arrays],
    )
    line = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    if b"\n" in line:
        raise ConfigError("bundle header must serialise to a single line")
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_LE_F64).tobytes())


def read_bundle(path: str | Path, expect_format: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ConfigError(f"{path}: missing bundle header")
    header = json.loads(raw[:nl])
    if expect_format is not None and header.get("format") != expect_format:
        raise ConfigError(f"{path}: expected format {expect_format!r}, found {header.get('format')!r}")
    if header.get("dtype") != "float64" or header.get("endianness") != "little":
        raise ConfigError(f"{path}: unsupported payload encoding")
    body = raw[nl + 1:]
    if len(body) % _LE_F64.itemsize:
        raise ConfigError(f"{path}: payload is not a whole number of float64 values")
    payload = np.frombuffer(body, dtype=_LE_F64)
    out: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if offset + n > payload.size:
            raise ConfigError(f"{path}: payload truncated at array {entry['name']!r}")
        out[entry["name"]] = payload[offset:offset + n].reshape(shape).astype(np.float64)
        offset += n
    if offset != payload.size:
        raise ConfigError(f"{path}: {payload.size - offset} trailing payload values")
    return header, out
