"""CSV datasets and JSON model files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .kernels import Dataset, KernelParams, NoiseParams, TaskCov
from .likelihood import MtgpParams

SCHEMA_VERSION = 1
MISSING_TOKENS = ("", "nan")


class DatasetParseError(ValueError):
    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class ModelFileError(ValueError):
    pass


def bundled_dataset_path():
    """Path of the shipped 30-row two-task example table."""
    return str(resources.files("mtgp") / "data" / "synthetic_30.csv")


def _read_rows(path):
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh)]


def _parse_header(header):
    """Count the leading x1..xD columns; returns D and the remaining names."""
    names = [h.strip() for h in header]
    d = 0
    while d < len(names) and re.fullmatch(rf"x{d + 1}", names[d]):
        d += 1
    if d == 0:
        raise DatasetParseError("header must start with input columns x1..xD", 1)
    return d, names[d:]


def _parse_float(cell, line, col, allow_missing):
    token = cell.strip()
    if allow_missing and token.lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise DatasetParseError(f"column {col}: non-numeric value {cell!r}", line) from None
    if not math.isfinite(value):
        raise DatasetParseError(f"column {col}: non-finite value {cell!r}", line)
    return value


def load_dataset(path):
    """Parse a CSV with header ``x1..xD,y1..yM``.

    An empty cell or ``nan`` (any case) marks a missing output. Raises
    ``DatasetParseError`` naming the offending line.
    """
    rows = _read_rows(path)
    if not rows:
        raise DatasetParseError("empty file, header required", 1)
    d, rest = _parse_header(rows[0])
    m = 0
    while m < len(rest) and rest[m] == f"y{m + 1}":
        m += 1
    if m == 0:
        raise DatasetParseError("header needs output columns y1..yM after the inputs", 1)
    if m != len(rest):
        raise DatasetParseError(f"unexpected header column {rest[m]!r}", 1)

    x, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + m:
            raise DatasetParseError(f"expected {d + m} columns, found {len(row)}", lineno)
        x.append([_parse_float(c, lineno, j + 1, False) for j, c in enumerate(row[:d])])
        y.append([_parse_float(c, lineno, d + j + 1, True) for j, c in enumerate(row[d:])])
    if not x:
        raise DatasetParseError("no data rows")
    y = np.array(y)
    empty = np.flatnonzero(np.all(np.isnan(y), axis=0))
    if empty.size:
        raise DatasetParseError(f"task {empty[0] + 1} (column y{empty[0] + 1}) has no observations")
    return Dataset(np.array(x), y)


def load_queries(path, input_dim):
    """Parse a query CSV ``x1..xD,task``. An empty file yields no queries."""
    rows = [r for r in _read_rows(path) if r]
    if not rows:
        return np.zeros((0, input_dim)), np.zeros(0, dtype=np.intp)
    d, rest = _parse_header(rows[0])
    if rest != ["task"]:
        raise DatasetParseError("query header must be x1..xD,task", 1)
    if d != input_dim:
        raise DatasetParseError(f"queries have {d} inputs but the model expects {input_dim}", 1)
    x, tasks = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 1:
            raise DatasetParseError(f"expected {d + 1} columns, found {len(row)}", lineno)
        x.append([_parse_float(c, lineno, j + 1, False) for j, c in enumerate(row[:d])])
        t = _parse_float(row[d], lineno, d + 1, False)
        if t != int(t) or t < 0:
            raise DatasetParseError(f"task must be a non-negative integer, got {row[d]!r}", lineno)
        tasks.append(int(t))
    return np.array(x, dtype=float).reshape(-1, d), np.array(tasks, dtype=np.intp)


def dataset_fingerprint(ds: Dataset):
    h = hashlib.sha256()
    h.update(np.array(ds.inputs.shape + ds.outputs.shape, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(ds.inputs, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.outputs, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ModelFile:
    params: MtgpParams
    dataset: Dataset
    jitter: float
    fit: dict

    def to_dict(self):
        p = self.params
        outputs = [[None if math.isnan(v) else float(v) for v in row]
                   for row in self.dataset.outputs]
        return {
            "schema_version": SCHEMA_VERSION,
            "kernel": {
                "type": "rbf-ard",
                "log_lengthscales": [float(v) for v in p.kernel.log_lengthscales],
                "log_signal_variance": float(p.kernel.log_signal_variance),
            },
            "task": {"raw_factor": [[float(v) for v in row] for row in p.task.raw]},
            "noise": {"log_noise_variances": [float(v) for v in p.noise.log_noise_variances]},
            "jitter": float(self.jitter),
            "dataset": {
                "fingerprint": dataset_fingerprint(self.dataset),
                "inputs": [[float(v) for v in row] for row in self.dataset.inputs],
                "outputs": outputs,
            },
            "fit": self.fit,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"model file is not valid JSON: {exc}") from None
        version = doc.get("schema_version") if isinstance(doc, dict) else None
        if version != SCHEMA_VERSION:
            raise ModelFileError(f"unsupported schema_version {version!r}")
        try:
            params = MtgpParams(
                KernelParams(doc["kernel"]["log_lengthscales"],
                             doc["kernel"]["log_signal_variance"]),
                TaskCov(doc["task"]["raw_factor"]),
                NoiseParams(doc["noise"]["log_noise_variances"]),
            )
            outputs = np.array([[math.nan if v is None else v for v in row]
                                for row in doc["dataset"]["outputs"]], dtype=float)
            ds = Dataset(np.array(doc["dataset"]["inputs"], dtype=float), outputs)
            jitter = float(doc["jitter"])
            fit = doc.get("fit", {})
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"malformed model file: {exc}") from None
        if dataset_fingerprint(ds) != doc["dataset"].get("fingerprint"):
            raise ModelFileError("dataset fingerprint does not match embedded data")
        if ds.input_dim != params.input_dim or ds.num_tasks != params.num_tasks:
            raise ModelFileError("embedded dataset does not match the parameter shapes")
        return cls(params, ds, jitter, fit)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())
