"""Persistence: model archives, CSV series and fields, experiment configs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .desn import DelayedReservoir
from .dynsys import ScalarSeries, SpatioTemporalField
from .parallel import ParallelParams, ParallelReservoir
from .reservoir import DesnParams, WeightSet

__all__ = [
    "FORMAT_VERSION",
    "ArchiveError",
    "ModelArchive",
    "fingerprint",
    "save_model",
    "load_model",
    "encode_archive",
    "decode_archive",
    "write_series_csv",
    "read_series_csv",
    "write_field_csv",
    "read_field_csv",
    "write_table_csv",
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "parse_config_text",
    "staged_outputs",
]

MAGIC = b"SCRCARCH"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")  # magic, version, header length
_DIGEST = 32


class ArchiveError(ValueError):
    """Raised for unreadable, truncated or incompatible archives."""


@dataclass(frozen=True, eq=False)
class ModelArchive:
    """A stored model plus the bookkeeping needed to reproduce it."""

    kind: str
    model: Union[DelayedReservoir, ParallelReservoir]
    lineage: Mapping[str, Any] = field(default_factory=dict)
    data_hash: str = ""
    format_version: int = FORMAT_VERSION


def fingerprint(values) -> str:
    """SHA-256 of the little-endian float64 bytes of ``values``."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _weight_arrays(w: WeightSet) -> Dict[str, np.ndarray]:
    W = w.W.tocsr()
    W.sort_indices()
    return {
        "W.indptr": W.indptr.astype("<i8"),
        "W.indices": W.indices.astype("<i8"),
        "W.data": W.data.astype("<f8"),
        "W_in": w.W_in.astype("<f8"),
        "W_b": w.W_b.astype("<f8"),
    }


def _weights_from(arrays: Mapping[str, np.ndarray], K: int) -> WeightSet:
    W = sp.csr_matrix((arrays["W.data"], arrays["W.indices"], arrays["W.indptr"]), shape=(K, K))
    return WeightSet(W, arrays["W_in"], arrays["W_b"])


def _model_payload(model) -> Tuple[str, Dict[str, Any], Dict[str, np.ndarray]]:
    if isinstance(model, DelayedReservoir):
        meta = {"params": dataclasses.asdict(model.params), "trained_D": int(model.trained_D)}
        arrays = _weight_arrays(model.weights)
        arrays["readout"] = model.readout.astype("<f8")
        arrays["history"] = model.history.astype("<f8")
        return "desn", meta, arrays
    if isinstance(model, ParallelReservoir):
        meta = {"params": dataclasses.asdict(model.params), "trained_G": int(model.trained_G),
                "dx": float(model.dx)}
        arrays = _weight_arrays(model.weights)
        arrays["readout"] = model.readout.astype("<f8")
        arrays["states"] = model.states.astype("<f8")
        return "parallel", meta, arrays
    raise TypeError(f"cannot archive {type(model).__name__}")


def encode_archive(archive: ModelArchive) -> bytes:
    kind, meta, arrays = _model_payload(archive.model)
    if kind != archive.kind:
        raise ArchiveError(f"archive kind {archive.kind!r} does not match model ({kind})")
    header = {
        "kind": kind,
        "meta": meta,
        "lineage": dict(archive.lineage),
        "data_hash": archive.data_hash,
        "arrays": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a).tobytes() for a in arrays.values())
    blob = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + body
    return blob + hashlib.sha256(blob).digest()


def _need(cond: bool, what: str):
    if not cond:
        raise ArchiveError(what)


def decode_archive(blob: bytes) -> ModelArchive:
    _need(len(blob) >= _PREFIX.size + _DIGEST, "archive truncated: missing header")
    magic, version, n_head = _PREFIX.unpack_from(blob)
    _need(magic == MAGIC, "not a model archive: bad magic bytes")
    _need(version == FORMAT_VERSION,
          f"format_version {version} not supported (expected {FORMAT_VERSION})")
    content, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    start = _PREFIX.size
    _need(len(content) >= start + n_head, "archive truncated: header incomplete")
    try:
        header = json.loads(content[start:start + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"corrupt header: {exc}") from exc
    offset = start + n_head
    arrays = {}
    for spec in header.get("arrays", []):
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        _need(offset + nbytes <= len(content), f"archive truncated in array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(content, dtype=dtype, count=int(np.prod(shape)),
                                             offset=offset).reshape(shape).copy()
        offset += nbytes
    _need(offset == len(content), "archive has trailing bytes or is truncated")
    _need(hashlib.sha256(content).digest() == digest, "archive checksum mismatch")

    kind = header.get("kind")
    meta = header.get("meta", {})
    try:
        if kind == "desn":
            params = DesnParams(**meta["params"])
            model = DelayedReservoir(_weights_from(arrays, params.K), arrays["readout"], params,
                                     arrays["history"], int(meta["trained_D"]))
        elif kind == "parallel":
            params = ParallelParams(**meta["params"])
            model = ParallelReservoir(_weights_from(arrays, params.K), arrays["readout"], params,
                                      arrays["states"], int(meta["trained_G"]), float(meta["dx"]))
        else:
            raise ArchiveError(f"unknown model kind {kind!r}")
    except KeyError as exc:
        raise ArchiveError(f"archive is missing field {exc}") from exc
    except TypeError as exc:
        raise ArchiveError(f"archive params do not match this version: {exc}") from exc
    return ModelArchive(kind, model, header.get("lineage", {}), header.get("data_hash", ""), version)


def _atomic_write(path: Union[str, Path], data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, model, lineage: Optional[Mapping[str, Any]] = None,
               data_hash: str = "") -> ModelArchive:
    """Write ``model`` (or a ready :class:`ModelArchive`) to ``path``."""
    if isinstance(model, ModelArchive):
        archive = model
    else:
        kind = "desn" if isinstance(model, DelayedReservoir) else "parallel"
        archive = ModelArchive(kind, model, dict(lineage or {}), data_hash)
    _atomic_write(path, encode_archive(archive))
    return archive


def load_model(path) -> ModelArchive:
    with open(path, "rb") as fh:
        return decode_archive(fh.read())


# ---------------------------------------------------------------- CSV

def _fmt(x: float) -> str:
    return repr(float(x))


def _header(**items) -> str:
    return "# " + " ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in items.items())


def _parse_header(line: str) -> Dict[str, str]:
    if not line.startswith("#"):
        raise ValueError("CSV is missing its '# key=value' header line")
    out = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"malformed header token {tok!r}")
        out[key] = val
    return out


def series_csv_text(series: ScalarSeries) -> str:
    lines = [_header(dt=float(series.dt))]
    lines.extend(_fmt(v) for v in series.values)
    return "\n".join(lines) + "\n"


def field_csv_text(fld: SpatioTemporalField) -> str:
    lines = [_header(dt=float(fld.dt), L=float(fld.L), Q=fld.grid.shape[0])]
    lines.extend(",".join(_fmt(v) for v in col) for col in fld.grid.T)
    return "\n".join(lines) + "\n"


def write_series_csv(path, series: ScalarSeries) -> None:
    _atomic_write(path, series_csv_text(series).encode())


def write_field_csv(path, fld: SpatioTemporalField) -> None:
    _atomic_write(path, field_csv_text(fld).encode())


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    if not lines:
        raise ValueError(f"{path}: empty file")
    return _parse_header(lines[0]), [ln for ln in lines[1:] if ln]


def read_series_csv(path) -> ScalarSeries:
    head, rows = _read_lines(path)
    values = np.array([float(r.split(",")[0]) for r in rows])
    return ScalarSeries(values, float(head.get("dt", 1.0)))


def read_field_csv(path) -> SpatioTemporalField:
    head, rows = _read_lines(path)
    if "L" not in head:
        raise ValueError(f"{path}: field CSV header needs L")
    grid = np.array([[float(v) for v in r.split(",")] for r in rows]).T
    if "Q" in head and int(head["Q"]) != grid.shape[0]:
        raise ValueError(f"{path}: header Q={head['Q']} but rows have {grid.shape[0]} columns")
    return SpatioTemporalField(grid, float(head["L"]), float(head.get("dt", 0.25)))


def table_csv_text(columns, rows, header: Optional[Mapping[str, Any]] = None) -> str:
    lines = []
    if header:
        lines.append(_header(**header))
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def write_table_csv(path, columns, rows, header: Optional[Mapping[str, Any]] = None) -> None:
    _atomic_write(path, table_csv_text(columns, rows, header).encode())


# ------------------------------------------------------------- outputs

class staged_outputs:
    """Collect output files in a scratch directory and publish them together.

    Paths handed out by :meth:`path` live in a hidden directory next to the
    destination; on clean exit every file is moved into place, on error the
    scratch directory is removed, so a failed run leaves nothing behind.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.stage: Optional[Path] = None
        self.planned: Dict[Path, Path] = {}

    def __enter__(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(dir=self.out_dir, prefix=".staging-"))
        return self

    def path(self, target: Union[str, Path]) -> Path:
        target = Path(target)
        if not target.is_absolute():
            target = self.out_dir / target
        staged = self.stage / f"{len(self.planned)}-{target.name}"
        self.planned[staged] = target
        return staged

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for staged, target in self.planned.items():
                    if staged.exists():
                        target.parent.mkdir(parents=True, exist_ok=True)
                        os.replace(staged, target)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False


# -------------------------------------------------------------- config

class ConfigError(ValueError):
    pass


SYSTEMS = ("mackey-glass", "ikeda", "ks")
PRESETS = ("mg-table1", "ikeda-table2", "ks-default")


def _desn_keys():
    return {f.name: f for f in dataclasses.fields(DesnParams)}


SYSTEM_KEYS = {
    "system": str, "tau": float, "T0": float, "a": float, "p": float, "feedback": float,
    "L_pi": int, "samples": int, "transient": int, "h": float,
}
ANALYSIS_KEYS = {
    "steps": int, "discard": int, "max_lag": int, "n_init_conditions": int,
    "d_min": int, "d_max": int, "budget": int, "G": int,
}
GENERAL_KEYS = {"preset": str, "out_dir": str, "seed": int}


def _coerce(key: str, value, kind):
    if isinstance(value, str) and kind is not str:
        try:
            value = float(value) if kind is float else int(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind.__name__}") from exc
    if kind is int and isinstance(value, float):
        if not value.is_integer():
            raise ConfigError(f"config key {key!r} must be an integer")
        value = int(value)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} must be {kind.__name__}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description split into system, reservoir and analysis parts.

    Reservoir keys are the :class:`DesnParams` field names; ``feedback`` is
    the Ikeda gain (kept apart from the reservoir ``beta``).
    """

    system: Dict[str, Any]
    reservoir: Dict[str, Any]
    analysis: Dict[str, Any]
    preset: Optional[str] = None
    out_dir: Optional[str] = None
    seed: int = 0

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        desn = _desn_keys()
        system, reservoir, analysis, general = {}, {}, {}, {}
        for key, value in data.items():
            if key in SYSTEM_KEYS:
                system[key] = _coerce(key, value, SYSTEM_KEYS[key])
            elif key in ANALYSIS_KEYS:
                analysis[key] = _coerce(key, value, ANALYSIS_KEYS[key])
            elif key in GENERAL_KEYS:
                general[key] = _coerce(key, value, GENERAL_KEYS[key])
            elif key in desn:
                kind = int if desn[key].type in ("int", int) else float
                reservoir[key] = _coerce(key, value, kind)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if "system" in system and system["system"] not in SYSTEMS:
            raise ConfigError(f"system must be one of {SYSTEMS}, got {system['system']!r}")
        if general.get("preset") not in (None,) + PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {general['preset']!r}")
        return cls(system, reservoir, analysis, general.get("preset"), general.get("out_dir"),
                   general.get("seed", 0))

    def desn_params(self) -> DesnParams:
        from .reservoir import IKEDA_TABLE2, MG_TABLE1

        base = {"ikeda-table2": IKEDA_TABLE2}.get(self.preset, MG_TABLE1)
        if self.preset is None and self.system.get("system") == "ikeda":
            base = IKEDA_TABLE2
        changes = dict(self.reservoir)
        changes.setdefault("seed", self.seed)
        return dataclasses.replace(base, **changes)

    def as_dict(self) -> Dict[str, Any]:
        out = {**self.system, **self.reservoir, **self.analysis, "seed": self.seed}
        if self.preset is not None:
            out["preset"] = self.preset
        if self.out_dir is not None:
            out["out_dir"] = self.out_dir
        return dict(sorted(out.items()))


def parse_config_text(text: str) -> ExperimentConfig:
    """JSON object or ``key = value`` lines (``#`` starts a comment)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return ExperimentConfig.from_mapping(data)
    data = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        key = key.strip()
        if key in data:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        data[key] = value.strip()
    return ExperimentConfig.from_mapping(data)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
