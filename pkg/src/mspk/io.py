"""File formats: model/params JSON, disorder binaries, overlap CSV, run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .model import DisorderMatrix, ModelSpec, ValidationError, validate_model
from .parisi import RsbParams, params_from_dict
from .replica_analysis import OverlapSample

DISORDER_MAGIC = b"MSPK"
DISORDER_VERSION = 1


def format_float(x: float) -> str:
    """17 significant digits: round-trips every 64-bit float."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return json.dumps(x)
    return format(x, ".17g")


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    def emit(o, indent):
        pad = "  " * (indent + 1)
        end = "  " * indent
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {emit(v, indent + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list)) for v in o):
                return "[" + ", ".join(emit(v, indent) for v in o) + "]"
            return "[\n" + ",\n".join(pad + emit(v, indent + 1) for v in o) + "\n" + end + "]"
        if isinstance(o, float):
            return format_float(o)
        return json.dumps(o)

    return emit(_to_jsonable(obj), 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None


def load_model(path) -> ModelSpec:
    raw = read_json(path)
    try:
        return validate_model(raw)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def load_params(path) -> RsbParams:
    raw = read_json(path)
    try:
        return params_from_dict(raw)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


# --- disorder --------------------------------------------------------------

def write_disorder(path, disorder: DisorderMatrix) -> Path:
    """Magic, uint32 version, uint64 N, then N*N little-endian float64 row-major."""
    path = Path(path)
    g = np.ascontiguousarray(disorder.g, dtype="<f8")
    with path.open("wb") as fh:
        fh.write(DISORDER_MAGIC)
        fh.write(struct.pack("<IQ", DISORDER_VERSION, g.shape[0]))
        fh.write(g.tobytes())
    return path


def read_disorder(path) -> DisorderMatrix:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != DISORDER_MAGIC or len(data) < 16:
        raise ValidationError(f"{path}: not a disorder file")
    version, n = struct.unpack("<IQ", data[4:16])
    if version != DISORDER_VERSION:
        raise ValidationError(f"{path}: unsupported disorder file version {version}")
    body = data[16:]
    if len(body) != 8 * n * n:
        raise ValidationError(f"{path}: expected {n}x{n} entries")
    return DisorderMatrix(np.frombuffer(body, dtype="<f8").reshape(n, n).copy(), None)


# --- overlap samples ------------------------------------------------------------

CSV_HEADER = ["sample", "l", "lp", "array", "value"]


def write_overlaps(path, sample: OverlapSample) -> Path:
    """One row per (sample, l, lp, species or ALL, value); a comment line keeps lambda and weights."""
    path = Path(path)
    D, S, n, _ = sample.R_species.shape
    with path.open("w", newline="") as fh:
        fh.write("# lambda " + " ".join(f"{s}={format_float(v)}" for s, v in zip(sample.species, sample.lam)) + "\n")
        if np.any(sample.weights != 1):
            fh.write("# weights " + " ".join(format_float(v) for v in sample.weights) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d in range(D):
            for l in range(n):
                for lp in range(n):
                    for s, label in enumerate(sample.species):
                        w.writerow([d, l, lp, label, format_float(sample.R_species[d, s, l, lp])])
                    w.writerow([d, l, lp, "ALL", format_float(sample.R[d, l, lp])])
    return path


def read_overlaps(path) -> OverlapSample:
    path = Path(path)
    lam, weights, rows = {}, None, []
    try:
        with path.open() as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    body = []
    for line in lines:
        if line.startswith("# lambda"):
            for tok in line.split()[2:]:
                k, v = tok.split("=")
                lam[k] = float(v)
        elif line.startswith("# weights"):
            weights = np.array([float(v) for v in line.split()[2:]])
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames != CSV_HEADER:
        raise ValidationError(f"{path}: expected header {','.join(CSV_HEADER)}")
    for row in reader:
        rows.append((int(row["sample"]), int(row["l"]), int(row["lp"]), row["array"], float(row["value"])))
    if not rows:
        raise ValidationError(f"{path}: no overlap rows")
    species = tuple(lam) or tuple(sorted({r[3] for r in rows if r[3] != "ALL"}))
    D = 1 + max(r[0] for r in rows)
    n = 1 + max(max(r[1], r[2]) for r in rows)
    Rs = np.full((D, len(species), n, n), np.nan)
    R = np.full((D, n, n), np.nan)
    for d, l, lp, arr, v in rows:
        if arr == "ALL":
            R[d, l, lp] = v
        else:
            Rs[d, species.index(arr), l, lp] = v
    if np.isnan(Rs).any() or np.isnan(R).any():
        raise ValidationError(f"{path}: incomplete overlap arrays")
    lam_arr = np.array([lam.get(s, 1.0 / len(species)) for s in species])
    return OverlapSample(Rs, R, np.ones(D) if weights is None else weights, species, lam_arr)


# --- manifests --------------------------------------------------------------

def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    inputs: dict
    config: dict
    seed: int | None
    version: str = __version__
    outputs: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    wall_clock: float = 0.0

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256(path)

    def finish(self) -> None:
        self.wall_clock = time.time() - self.started

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": {k: str(v) for k, v in self.inputs.items()},
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "wall_clock_seconds": self.wall_clock,
            "outputs": self.outputs,
        }
