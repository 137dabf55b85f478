"""Empirical second moments, CSV ingestion and the real-data environment recipes."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from .io import atomic_write_text
from .scm import CovariateMoments, Dataset, EnvironmentMoments, ParameterError

CACHE_FORMAT = "confshift.moments/1"
RECIPES = ("forestfires", "bike", "wine")
_OPS = ("in", "not_in", "eq", "ne", "lt", "le", "gt", "ge")


class IngestError(ValueError):
    """Unreadable file, missing column or an invalid schema."""


# --------------------------------------------------------------------------- estimation


def estimate_moments(data: Dataset) -> EnvironmentMoments:
    """Uncentered plug-in moments ``X^T X / n``, ``X^T y / n`` and ``y^T y / n``.

    No mean is subtracted.  A single row gives a rank-one ``Sigma``, which is
    accepted here; :func:`confshift.scm.best_linear` reports the deficiency.
    """
    x, y = data.x, data.y
    n = x.shape[0]
    sigma = x.T @ x / n
    sigma = 0.5 * (sigma + sigma.T)  # exact symmetry
    return EnvironmentMoments(sigma=sigma, xy=x.T @ y / n, y_sq=float(y @ y) / n, n=n)


# --------------------------------------------------------------------------- schemas


@dataclass(frozen=True)
class RowFilter:
    column: str
    op: str
    values: tuple

    def __post_init__(self):
        if self.op not in _OPS:
            raise IngestError(f"unknown filter operator {self.op!r}; expected one of {_OPS}")
        vals = self.values if isinstance(self.values, (list, tuple)) else (self.values,)
        if not vals:
            raise IngestError(f"filter on {self.column!r} has no values")
        if self.op not in ("in", "not_in") and len(vals) != 1:
            raise IngestError(f"operator {self.op!r} takes a single value")
        object.__setattr__(self, "values", tuple(vals))

    def accepts(self, cell: str) -> bool:
        cell = cell.strip()
        if self.op in ("in", "not_in"):
            hit = any(_cell_equals(cell, v) for v in self.values)
            return hit if self.op == "in" else not hit
        if self.op in ("eq", "ne"):
            hit = _cell_equals(cell, self.values[0])
            return hit if self.op == "eq" else not hit
        a, b = _to_float(cell), _to_float(self.values[0])
        if a is None or b is None:
            return False
        return {"lt": a < b, "le": a <= b, "gt": a > b, "ge": a >= b}[self.op]


def _to_float(v) -> float | None:
    try:
        out = float(v)
    except (TypeError, ValueError):
        return None
    return out if math.isfinite(out) else None


def _cell_equals(cell: str, value) -> bool:
    if cell == str(value).strip():
        return True
    a, b = _to_float(cell), _to_float(value)
    return a is not None and b is not None and a == b


@dataclass(frozen=True)
class DatasetSchema:
    """Which columns to read from a CSV file and which rows to keep.

    ``file`` is resolved against the data directory passed to
    :func:`ingest_csv`; ``environment`` labels the resulting dataset.
    """

    features: tuple[str, ...]
    response: str
    filters: tuple[RowFilter, ...] = ()
    response_transform: str = "identity"
    sep: str = ","
    file: str | None = None
    environment: str = "source"

    def __post_init__(self):
        feats = tuple(self.features)
        if not feats:
            raise IngestError("feature list is empty")
        if len(set(feats)) != len(feats):
            raise IngestError("feature list has duplicates")
        if self.response in feats:
            raise IngestError(f"response {self.response!r} is also listed as a feature")
        if self.response_transform not in ("identity", "log1p"):
            raise IngestError(f"unknown response transform {self.response_transform!r}")
        if len(self.sep) != 1:
            raise IngestError("separator must be a single character")
        if self.environment not in ("source", "target"):
            raise IngestError(f"unknown environment {self.environment!r}")
        filters = tuple(f if isinstance(f, RowFilter) else RowFilter(**f) for f in self.filters)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "filters", filters)

    @property
    def d(self) -> int:
        return len(self.features)

    @classmethod
    def from_dict(cls, data: dict, environment: str = "source") -> "DatasetSchema":
        allowed = {"features", "response", "filters", "response_transform", "sep", "file", "environment"}
        unknown = set(data) - allowed
        if unknown:
            raise IngestError(f"unknown schema keys: {sorted(unknown)}")
        kw = dict(data)
        kw.setdefault("environment", environment)
        kw["filters"] = tuple(kw.get("filters") or ())
        return cls(**kw)

    def replace_features(self, features) -> "DatasetSchema":
        return DatasetSchema(
            tuple(features), self.response, self.filters, self.response_transform, self.sep, self.file, self.environment
        )


def load_recipes() -> dict:
    text = resources.files("confshift").joinpath("recipes.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def dataset_recipe(name: str) -> tuple[DatasetSchema, DatasetSchema]:
    """Source and target schemas for ``forestfires``, ``bike`` or ``wine``."""
    recipes = load_recipes()
    if name not in RECIPES or name not in recipes:
        raise IngestError(f"unknown dataset recipe {name!r}; expected one of {RECIPES}")
    entry = recipes[name]
    return (
        DatasetSchema.from_dict(entry["source"], "source"),
        DatasetSchema.from_dict(entry["target"], "target"),
    )


# --------------------------------------------------------------------------- ingestion


class IngestReport(NamedTuple):
    path: str
    sha256: str
    rows_read: int
    rows_filtered_out: int
    rows_dropped: int
    rows_kept: int


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ingest_csv(path, schema: DatasetSchema, with_report: bool = False):
    """Read the schema's columns from a header-first CSV file.

    Rows failing a filter are skipped.  Rows that pass but hold an empty or
    non-numeric feature or response cell are dropped and counted.  Row order
    follows the file.

    Returns a :class:`Dataset`, or ``(Dataset, IngestReport)`` when
    ``with_report`` is set.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=schema.sep)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path} is empty") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot parse {path}: {exc}") from exc
        header = [h.strip() for h in header]
        index = {h: i for i, h in enumerate(header)}
        wanted = list(schema.features) + [schema.response] + [f.column for f in schema.filters]
        missing = [c for c in wanted if c not in index]
        if missing:
            raise IngestError(f"{path}: missing column(s) {missing}")
        f_idx = [index[c] for c in schema.features]
        y_idx = index[schema.response]
        filt = [(index[f.column], f) for f in schema.filters]
        rows, ys = [], []
        n_read = n_filtered = n_dropped = 0
        try:
            for line in reader:
                if not line or all(not c.strip() for c in line):
                    continue
                n_read += 1
                if len(line) != len(header):
                    n_dropped += 1
                    continue
                if not all(f.accepts(line[i]) for i, f in filt):
                    n_filtered += 1
                    continue
                vals = [_to_float(line[i]) for i in f_idx]
                y = _to_float(line[y_idx])
                if y is not None and schema.response_transform == "log1p":
                    y = math.log1p(y) if y > -1 else None
                if y is None or any(v is None for v in vals):
                    n_dropped += 1
                    continue
                rows.append(vals)
                ys.append(y)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot parse {path}: {exc}") from exc
    if not rows:
        raise IngestError(f"{path}: no usable rows after filtering ({n_read} read, {n_dropped} dropped)")
    data = Dataset(np.array(rows, dtype=float), np.array(ys, dtype=float), schema.environment)
    if not with_report:
        return data
    report = IngestReport(str(path), file_sha256(path), n_read, n_filtered, n_dropped, len(rows))
    return data, report


def append_constant(data: Dataset) -> Dataset:
    """Add an all-ones column (an intercept for the otherwise homogeneous model)."""
    return Dataset(np.hstack([data.x, np.ones((data.n, 1))]), data.y, data.environment)


# --------------------------------------------------------------------------- standardization


@dataclass(frozen=True)
class Scaling:
    mode: str
    feature_mean: tuple[float, ...] = ()
    feature_scale: tuple[float, ...] = ()
    response_mean: float = 0.0
    response_scale: float = 1.0
    columns: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "feature_mean": list(self.feature_mean),
            "feature_scale": list(self.feature_scale),
            "response_mean": self.response_mean,
            "response_scale": self.response_scale,
            "columns": list(self.columns),
        }

    def invert_response(self, y):
        return np.asarray(y, dtype=float) * self.response_scale + self.response_mean


def standardize(
    source: Dataset,
    target: Dataset,
    mode: str = "none",
    response: bool = False,
    columns=None,
) -> tuple[Dataset, Dataset, Scaling]:
    """Center and scale both environments with source-sample statistics.

    ``mode="none"`` returns the inputs untouched.  ``mode="source_stats"``
    subtracts the source mean and divides by the source standard deviation,
    applying the identical map to the target.  ``response=True`` does the
    same to the response.

    Raises
    ------
    ParameterError
        On a zero-variance source feature; the message names the column.
    """
    if source.d != target.d:
        raise ParameterError(f"source d={source.d} but target d={target.d}")
    names = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(source.d))
    if mode == "none":
        return source, target, Scaling("none", columns=names)
    if mode != "source_stats":
        raise ParameterError(f"unknown standardization mode {mode!r}")
    mu = source.x.mean(axis=0)
    sd = source.x.std(axis=0)
    flat = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))
    if flat.size:
        raise ParameterError(f"zero-variance source feature: {', '.join(names[i] for i in flat)}")
    y_mu, y_sd = 0.0, 1.0
    if response:
        y_mu, y_sd = float(source.y.mean()), float(source.y.std())
        if y_sd <= 0:
            raise ParameterError("zero-variance source response")

    def apply(ds: Dataset) -> Dataset:
        return Dataset((ds.x - mu) / sd, (ds.y - y_mu) / y_sd, ds.environment)

    scaling = Scaling("source_stats", tuple(mu.tolist()), tuple(sd.tolist()), y_mu, y_sd, names)
    return apply(source), apply(target), scaling


# --------------------------------------------------------------------------- moment cache


def moments_to_dict(m: EnvironmentMoments | CovariateMoments) -> dict:
    labeled = isinstance(m, EnvironmentMoments)
    return {
        "format": CACHE_FORMAT,
        "d": m.d,
        "sigma": m.sigma.reshape(-1).tolist(),
        "xy": m.xy.tolist() if labeled else None,
        "y_sq": m.y_sq if labeled else None,
        "n": m.n,
    }


def moments_from_dict(data: dict) -> EnvironmentMoments | CovariateMoments:
    if data.get("format") != CACHE_FORMAT:
        raise IngestError(f"unsupported moment cache format {data.get('format')!r}")
    d = int(data["d"])
    sigma = np.asarray(data["sigma"], dtype=float)
    if sigma.size != d * d:
        raise IngestError(f"sigma has {sigma.size} entries, expected {d * d}")
    sigma = sigma.reshape(d, d)
    n = data.get("n")
    if data.get("xy") is None:
        return CovariateMoments(sigma, n)
    return EnvironmentMoments(sigma, np.asarray(data["xy"], dtype=float), float(data["y_sq"]), n)


def dumps_moments(m: EnvironmentMoments | CovariateMoments, covariates_only: bool = False) -> str:
    """Byte-stable JSON text (sorted keys, shortest round-trip floats)."""
    if covariates_only and isinstance(m, EnvironmentMoments):
        m = m.covariates()
    return json.dumps(moments_to_dict(m), sort_keys=True, indent=1) + "\n"


def loads_moments(text: str) -> EnvironmentMoments | CovariateMoments:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestError(f"moment cache is not valid JSON: {exc}") from exc
    return moments_from_dict(data)


def write_moments(path, m, covariates_only: bool = False) -> None:
    atomic_write_text(path, dumps_moments(m, covariates_only))


def read_moments(path) -> EnvironmentMoments | CovariateMoments:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read moment cache {path}: {exc}") from exc
    return loads_moments(text)
