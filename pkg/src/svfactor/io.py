"""Panel ingestion, run configuration and report serialization."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    IoError,
    MisalignedState,
    MissingCell,
    NonFiniteValue,
    ParseError,
    ReportWarning,
    ZeroDenominator,
)
from .kernels import DEFAULT_MIN_EFFECTIVE_SIZE, KERNELS
from .sparsity import SparsitySets

LAYOUTS = ("rows_are_time", "rows_are_series")
TRANSFORMS = ("none", "log", "log_normalized")
OUTPUT_ENV = "SVFACTOR_OUTPUT_DIR"


@dataclass(frozen=True)
class PanelData:
    values: np.ndarray  # (N, T)
    series_ids: tuple
    time_ids: tuple

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class StateSeries:
    values: np.ndarray
    id: str
    transform: str = "none"


# --------------------------------------------------------------------------
# reading


def _read_rows(path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 ({exc})") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ParseError(f"{path}: need a header row and at least one data row")
    return rows


def _cell(text: str, row: int, col: int, where: str) -> float:
    text = text.strip()
    if text == "":
        raise MissingCell(f"{where}: empty cell at row {row}, column {col}")
    try:
        x = float(text)
    except ValueError as exc:
        raise ParseError(f"{where}: cannot parse {text!r} at row {row}, column {col}") from exc
    if not math.isfinite(x):
        raise NonFiniteValue(f"{where}: non-finite value {text!r} at row {row}, column {col}")
    return x


def _label_key(labels: Sequence[str]):
    try:
        return [float(x) for x in labels]
    except ValueError:
        return list(labels)


def _check_times(times: Sequence[str], where: str) -> None:
    key = _label_key(times)
    for k in range(1, len(key)):
        if not key[k] > key[k - 1]:
            raise ParseError(f"{where}: time labels must be strictly increasing; "
                             f"{times[k]!r} follows {times[k - 1]!r} (position {k + 1})")


def transform_state(values, transform: str = "none") -> np.ndarray:
    """Apply ``none``, ``log`` or ``log_normalized`` (standardized log) to a state series."""
    x = np.asarray(values, dtype=float)
    if transform == "none":
        return x.copy()
    if transform not in TRANSFORMS:
        raise ConfigError(f"unknown state transform {transform!r}; choose from {TRANSFORMS}")
    if np.any(x <= 0):
        bad = int(np.flatnonzero(x <= 0)[0])
        raise NonFiniteValue(f"log of non-positive state value {x[bad]!r} at position {bad}")
    lx = np.log(x)
    if transform == "log":
        return lx
    sd = lx.std()
    if sd == 0:
        raise ZeroDenominator("log state has zero standard deviation")
    return (lx - lx.mean()) / sd


def load_panel_csv(path, layout: str = "rows_are_time", state_column: str | None = None,
                   state_transform: str = "none") -> tuple[PanelData, StateSeries | None]:
    """Read a labeled panel and, optionally, the state series stored with it.

    ``rows_are_time``: the header is ``time, series_1, ..., series_N`` and each
    row holds one period.  ``rows_are_series``: the header is
    ``series, time_1, ..., time_T`` and each row holds one series.  The state
    is a column (or, in the second layout, a row) named ``state_column``.
    """
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}; choose from {LAYOUTS}")
    where = str(path)
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    width = len(header)
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(f"{where}: row {k} has {len(row)} fields, header has {width}")
    body = rows[1:]

    if layout == "rows_are_time":
        times = [r[0].strip() for r in body]
        names = header[1:]
        data = np.array([[_cell(r[c], k, c + 1, where) for c in range(1, width)]
                         for k, r in enumerate(body, start=2)]).T if body else np.empty((0, 0))
    else:
        times = header[1:]
        names = [r[0].strip() for r in body]
        data = np.array([[_cell(r[c], k, c + 1, where) for c in range(1, width)]
                         for k, r in enumerate(body, start=2)])
    if len(set(names)) != len(names):
        raise ParseError(f"{where}: duplicate series labels")
    if len(set(times)) != len(times):
        raise ParseError(f"{where}: duplicate time labels")
    _check_times(times, where)

    state = None
    if state_column is not None:
        if state_column not in names:
            raise MisalignedState(f"{where}: state {state_column!r} not found among the series labels")
        j = names.index(state_column)
        state = StateSeries(transform_state(data[j], state_transform), state_column, state_transform)
        data = np.delete(data, j, axis=0)
        names = names[:j] + names[j + 1:]
    if data.shape[0] == 0:
        raise ParseError(f"{where}: no series left after removing the state")
    return PanelData(np.ascontiguousarray(data), tuple(names), tuple(times)), state


def load_state_csv(path, time_ids: Sequence[str], column: str | None = None,
                   transform: str = "none") -> StateSeries:
    """State series from a separate ``time, value`` file, checked against ``time_ids``."""
    where = str(path)
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if column is None:
        if len(header) != 2:
            raise ParseError(f"{where}: name the state column when the file has {len(header)} columns")
        column = header[1]
    if column not in header[1:]:
        raise MisalignedState(f"{where}: no column named {column!r}")
    c = header.index(column)
    times = [r[0].strip() for r in rows[1:]]
    if tuple(times) != tuple(time_ids):
        n = min(len(times), len(time_ids))
        first = next((k for k in range(n) if times[k] != time_ids[k]), n)
        raise MisalignedState(f"{where}: state time labels differ from the panel at position {first + 1} "
                              f"({len(times)} state rows, {len(time_ids)} panel periods)")
    vals = np.array([_cell(r[c], k, c + 1, where) for k, r in enumerate(rows[1:], start=2)])
    return StateSeries(transform_state(vals, transform), column, transform)


# --------------------------------------------------------------------------
# writing


def format_float(x) -> str:
    """17 significant digits; NaN becomes an empty cell."""
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return "" if v is None else str(v)


def _has_nan(values) -> bool:
    for v in values:
        if isinstance(v, (float, np.floating)) and math.isnan(v):
            return True
    return False


def _open_out(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_rows(path, rows: list[list]) -> None:
    flat = [v for r in rows for v in r]
    if _has_nan(flat):
        warnings.warn(f"{path}: NaN values written as empty cells", ReportWarning, stacklevel=3)
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_panel_csv(panel: PanelData, path, layout: str = "rows_are_time",
                    state: StateSeries | None = None) -> None:
    """Inverse of :func:`load_panel_csv` (round trip is exact for finite doubles)."""
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}; choose from {LAYOUTS}")
    names = list(panel.series_ids)
    M = [list(row) for row in panel.values]
    if state is not None:
        names.append(state.id)
        M.append(list(state.values))
    if layout == "rows_are_time":
        rows = [["time", *names]] + [[t, *[M[i][k] for i in range(len(M))]]
                                     for k, t in enumerate(panel.time_ids)]
    else:
        rows = [["series", *panel.time_ids]] + [[n, *m] for n, m in zip(names, M)]
    _write_rows(path, rows)


@dataclass
class Report:
    """Named columns of equal length plus scalar metadata."""

    columns: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lens = {len(v) for v in self.columns.values()}
        if len(lens) > 1:
            raise ValueError(f"report columns have unequal lengths {sorted(lens)}")

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0


def _json_value(v, path, flagged: list):
    if isinstance(v, Mapping):
        return {str(k): _json_value(x, path, flagged) for k, x in v.items()}
    if isinstance(v, np.ndarray):
        return [_json_value(x, path, flagged) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_json_value(x, path, flagged) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            flagged.append(True)
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(v)
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return _json_value(dataclasses.asdict(v), path, flagged)
    return v if v is None or isinstance(v, str) else str(v)


def write_report(report: Report, fmt: str, path) -> Path:
    """Serialize a report as CSV (columns; metadata dropped) or JSON (both).

    Floats carry 17 significant digits in CSV and the shortest exact repr in
    JSON; NaN becomes an empty cell or ``null`` with a warning.
    """
    path = Path(path)
    if fmt == "csv":
        names = list(report.columns)
        rows = [names] + [[report.columns[c][k] for c in names] for k in range(report.n_rows)]
        _write_rows(path, rows)
    elif fmt == "json":
        flagged: list = []
        doc = {"meta": _json_value(report.meta, path, flagged),
               "columns": _json_value(report.columns, path, flagged)}
        if flagged:
            warnings.warn(f"{path}: NaN values written as null", ReportWarning, stacklevel=2)
        with _open_out(path) as fh:
            json.dump(doc, fh, indent=2, sort_keys=False, allow_nan=False)
            fh.write("\n")
    else:
        raise ConfigError(f"unknown report format {fmt!r}; choose csv or json")
    return path


def write_heatmap(states, matrix, path) -> Path:
    """Square grid: states across the first row and down the first column."""
    states = np.asarray(states, dtype=float)
    M = np.asarray(matrix, dtype=float)
    if M.shape != (states.size, states.size):
        raise ValueError(f"heatmap needs a {states.size}x{states.size} matrix, got {M.shape}")
    rows = [["state", *states]] + [[s, *M[k]] for k, s in enumerate(states)]
    _write_rows(path, rows)
    return Path(path)


def read_heatmap(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path)
    states = np.array([float(x) for x in rows[0][1:]])
    M = np.array([[float(x) if x.strip() else np.nan for x in r[1:]] for r in rows[1:]])
    return states, M


# --------------------------------------------------------------------------
# run configuration


def parse_grid(spec: str) -> np.ndarray:
    """``start:stop:num`` (inclusive, evenly spaced) or a comma list of states."""
    spec = spec.strip()
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return np.linspace(float(a), float(b), n)
        vals = np.array([float(x) for x in spec.split(",") if x.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad grid {spec!r}; use start:stop:num or a comma list") from exc
    if vals.size == 0:
        raise ConfigError("grid is empty")
    return vals


@dataclass(frozen=True)
class RunConfig:
    kind: str = "gaussian"
    h: float = 0.3
    r: int = 1
    grid: str = "-1:1:21"
    sparsity: str = "diagonal"
    time_lag: int = 0
    cross_lag: int = 0
    min_effective_size: float = DEFAULT_MIN_EFFECTIVE_SIZE
    seed: int = 0
    output_dir: str = ""
    format: str = "csv"
    periods_per_year: float = 252.0
    refit_every: int = 21
    initial_train: int = 0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"kind: unknown kernel {self.kind!r}; choose from {tuple(KERNELS)}")
        if not self.h > 0:
            raise ConfigError(f"h: bandwidth must be positive, got {self.h}")
        if self.r < 1:
            raise ConfigError(f"r: need at least one factor, got {self.r}")
        if self.sparsity not in ("diagonal", "banded"):
            raise ConfigError(f"sparsity: choose diagonal or banded, got {self.sparsity!r}")
        if self.time_lag < 0 or self.cross_lag < 0:
            raise ConfigError("time_lag and cross_lag must be nonnegative")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format: choose csv or json, got {self.format!r}")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be at least 1")
        parse_grid(self.grid)

    @property
    def states(self) -> np.ndarray:
        return parse_grid(self.grid)

    @property
    def sets(self) -> SparsitySets:
        if self.sparsity == "diagonal":
            return SparsitySets.diagonal()
        return SparsitySets.banded(time_lag=self.time_lag, cross_lag=self.cross_lag)

    @property
    def out(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV, "") or ".")

    def fit_kwargs(self) -> dict:
        return {"min_effective_size": self.min_effective_size}

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            conv = {"int": int, "float": float, "str": str}[str(types[name])]
            try:
                kw[name] = conv(raw) if not isinstance(raw, str) else conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot read {raw!r} as {types[name]}") from exc
        return cls(**kw)

    def with_overrides(self, values: Mapping[str, object]) -> "RunConfig":
        merged = {f.name: getattr(self, f.name) for f in fields(self)}
        merged.update({k: v for k, v in values.items() if v is not None})
        return RunConfig.from_mapping(merged)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{k}: expected key = value, got {line!r}")
        key, val = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{k}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{k}: key {key!r} given twice")
        out[key] = val
    return out


def load_config(path=None, overrides: Mapping[str, object] | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = parse_config_text(text, str(path))
    cfg = RunConfig.from_mapping(values)
    return cfg.with_overrides(overrides or {})
