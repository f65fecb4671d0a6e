"""File formats: CSV ingestion, binary chain files, JSON summaries and configs.

Chain files start with the magic bytes ``GMCB1`` followed by one row of
little-endian float64 values per stored draw.  The row layout is described
in a JSON sidecar (``<chain>.json``) listing each block's name, shape and
offset.  All writers go through a temporary file and ``os.replace``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError
from .inference import ChainOutput

__all__ = [
    "CsvMatrix",
    "ingest_csv",
    "write_csv_matrix",
    "write_chain",
    "read_chain",
    "write_json",
    "read_json",
    "load_config_file",
    "atomic_write_bytes",
]

MAGIC = b"GMCB1"
_DTYPE = np.dtype("<f8")


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvMatrix:
    values: np.ndarray
    header: list | None
    path: str
    role: str

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def _to_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def ingest_csv(path, role: str = "matrix") -> CsvMatrix:
    """Read a rectangular numeric CSV.

    A first row containing any non-numeric cell is taken as a header.  Row and
    column numbers in error messages are 1-based and count the header line.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"{role}: file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{role}: {path} is empty")
    header = None
    first = [c.strip() for c in rows[0]]
    if any(_to_float(c) is None for c in first):
        header = first
    start = 1 if header is not None else 0
    width = len(rows[0])
    out = []
    for i in range(start, len(rows)):
        row = rows[i]
        if len(row) != width:
            raise DataError(f"{role}: ragged row {i + 1} in {path}: "
                            f"expected {width} cells, found {len(row)}")
        vals = []
        for j, cell in enumerate(row):
            v = _to_float(cell.strip())
            if v is None:
                raise DataError(f"{role}: non-numeric cell {cell!r} at row {i + 1}, "
                                f"column {j + 1} in {path}")
            if not math.isfinite(v):
                raise DataError(f"{role}: non-finite value at row {i + 1}, column {j + 1} in {path}")
            vals.append(v)
        out.append(vals)
    if not out:
        raise DataError(f"{role}: {path} has a header but no data rows")
    return CsvMatrix(np.array(out, dtype=float), header, path, role)


def write_csv_matrix(path, M: np.ndarray, header=None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    w.writerows([repr(float(v)) for v in row] for row in M)
    atomic_write_bytes(path, buf.getvalue().encode())


# ---------------------------------------------------------------------------
# chain files
# ---------------------------------------------------------------------------


def _blocks(chain: ChainOutput):
    blocks = [("B", chain.B.shape[1:]), ("delta", chain.delta.shape[1:]),
              ("gamma", chain.gamma.shape[1:]), ("alpha_b", ()), ("alpha_d", ())]
    if chain.Lambda is not None:
        blocks.append(("Lambda", chain.Lambda.shape[1:]))
    if chain.tau is not None:
        blocks.append(("tau", chain.tau.shape[1:]))
    return blocks


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_chain(path, chain: ChainOutput, extra: dict | None = None) -> dict:
    """Write the binary chain and its JSON layout sidecar; returns the manifest."""
    path = os.fspath(path)
    blocks = _blocks(chain)
    layout, offset = [], 0
    for name, shape in blocks:
        size = int(np.prod(shape)) if shape else 1
        layout.append({"name": name, "shape": list(shape), "offset": offset, "order": "C"})
        offset += size
    manifest = {
        "magic": MAGIC.decode(), "dtype": "<f8", "rows": chain.S, "row_length": offset,
        "blocks": layout, "algorithm": chain.algorithm, "iters": chain.iters,
        "burn_in": chain.burn_in, "thin": chain.thin, "seed": chain.seed,
        "acceptance": chain.acceptance, "step_sizes": chain.step_sizes,
        "diagnostics": chain.diagnostics,
        "delta_packing": "row-wise strictly lower triangle",
    }
    if extra:
        manifest.update(extra)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for sl in chain.chunks():
            k = sl.stop - sl.start
            parts = [getattr(chain, name)[sl].reshape(k, -1) for name, _ in blocks]
            fh.write(np.ascontiguousarray(np.hstack(parts), dtype=_DTYPE).tobytes())
    os.replace(tmp, path)
    write_json(path + ".json", manifest)
    return manifest


def read_chain(path):
    """Load a chain file; returns ``(ChainOutput, manifest)``."""
    path = os.fspath(path)
    man_path = path + ".json"
    if not os.path.isfile(man_path):
        raise DataError(f"chain manifest not found: {man_path}")
    manifest = read_json(man_path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise DataError(f"{path} is not a chain file (bad magic bytes)")
        raw = np.frombuffer(fh.read(), dtype=_DTYPE)
    rows, width = manifest["rows"], manifest["row_length"]
    if raw.size != rows * width:
        raise DataError(f"{path}: expected {rows * width} values, found {raw.size}")
    M = raw.reshape(rows, width)
    arrays = {}
    for blk in manifest["blocks"]:
        shape = tuple(blk["shape"])
        size = int(np.prod(shape)) if shape else 1
        arrays[blk["name"]] = M[:, blk["offset"]: blk["offset"] + size].reshape((rows,) + shape).copy()
    chain = ChainOutput(arrays["B"], arrays["delta"], arrays["gamma"], arrays["alpha_b"],
                        arrays["alpha_d"], algorithm=manifest.get("algorithm", ""),
                        iters=manifest.get("iters", 0), burn_in=manifest.get("burn_in", 0),
                        thin=manifest.get("thin", 1), seed=manifest.get("seed"),
                        acceptance=manifest.get("acceptance", {}),
                        step_sizes=manifest.get("step_sizes", {}),
                        Lambda=arrays.get("Lambda"), tau=arrays.get("tau"),
                        diagnostics=manifest.get("diagnostics", {}))
    return chain, manifest


# ---------------------------------------------------------------------------
# JSON / YAML
# ---------------------------------------------------------------------------


def write_json(path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True)
    atomic_write_bytes(path, (text + "\n").encode())


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def load_config_file(path) -> dict:
    """Parse a YAML or JSON config file into a dict."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        obj = json.loads(text) if p.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from None
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(f"config {p} must be a mapping at the top level")
    return obj
