"""Panel files (wide and long CSV), trace/weight exports and JSON reports."""

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import ParseError
from .pipeline import PanelData

GROUP_COLUMN = "Treat"


def _read_rows(source):
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text(encoding="utf-8")
    elif hasattr(source, "read"):
        text = source.read()
    else:
        raise FileNotFoundError(f"no such file: {source}")
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("file is empty", row=1)
    return rows


def _count(value, row, column):
    value = value.strip()
    if value == "":
        return np.nan
    try:
        x = float(value)
    except ValueError:
        raise ParseError(f"column {column!r}: {value!r} is not a number", row=row) from None
    if not math.isfinite(x) or x != math.floor(x):
        raise ParseError(f"column {column!r}: {value!r} is not an integer count", row=row)
    if x < 0:
        raise ParseError(f"column {column!r}: negative count {value}", row=row)
    return x


def _number(value, row, column):
    try:
        x = float(value)
    except ValueError:
        raise ParseError(f"column {column!r}: {value!r} is not a number", row=row) from None
    if not math.isfinite(x):
        raise ParseError(f"column {column!r}: {value!r} is not finite", row=row)
    return x


def _code(value):
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        return value


def read_panel(source, format="wide", time_trend=False, group_column=GROUP_COLUMN):
    """Read a panel file.

    ``wide``: one row per unit, response columns followed by a group column
    (blank response = missing). Groups become an intercept plus dummies; a
    linear time column is added with ``time_trend``.

    ``long``: columns ``unit,time,y`` then numeric covariates, one row per
    unit-time cell; the covariates (plus an intercept) enter both model parts.
    """
    rows = _read_rows(source)
    if format == "wide":
        return _read_wide(rows, time_trend, group_column)
    if format == "long":
        return _read_long(rows, time_trend)
    raise ValueError(f"unknown panel format {format!r}")


def _read_wide(rows, time_trend, group_column):
    header = [h.strip() for h in rows[0]]
    if group_column not in header:
        raise ParseError(f"header lacks the group column {group_column!r}", row=1)
    g = header.index(group_column)
    times = [h for j, h in enumerate(header) if j != g]
    if not times:
        raise ParseError("header has no response columns", row=1)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", row=1)
    if len(rows) < 2:
        raise ParseError("no data rows", row=1)
    y, groups = [], []
    for r, fields in enumerate(rows[1:], start=2):
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(fields)}", row=r)
        code = fields[g].strip()
        if code == "":
            raise ParseError(f"column {group_column!r} is blank", row=r)
        groups.append(_code(code))
        y.append([_count(v, r, header[j]) for j, v in enumerate(fields) if j != g])
    return PanelData.from_groups(np.array(y, dtype=float), np.array(groups, dtype=object),
                                 time_trend=time_trend, time_names=times)


def _read_long(rows, time_trend):
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["unit", "time", "y"]:
        raise ParseError("long format needs leading columns unit,time,y", row=1)
    cov_names = header[3:]
    cells = {}
    for r, fields in enumerate(rows[1:], start=2):
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(fields)}", row=r)
        unit = _code(fields[0])
        time = _code(fields[1])
        if (unit, time) in cells:
            raise ParseError(f"duplicate cell (unit={unit}, time={time})", row=r)
        y = _count(fields[2], r, "y")
        cov = [_number(v, r, cov_names[j]) for j, v in enumerate(fields[3:])]
        cells[(unit, time)] = (y, cov)
    if not cells:
        raise ParseError("no data rows", row=1)
    units = list(dict.fromkeys(u for u, _ in cells))
    times = sorted(set(t for _, t in cells), key=lambda v: (isinstance(v, str), v))
    n, T = len(units), len(times)
    if len(cells) != n * T:
        raise ParseError(f"incomplete grid: {len(cells)} cells for {n} units x {T} times")
    p = 1 + len(cov_names) + int(time_trend)
    y = np.empty((n, T))
    base = np.empty((n, T, p))
    for i, u in enumerate(units):
        for k, t in enumerate(times):
            val, cov = cells[(u, t)]
            y[i, k] = val
            base[i, k, 0] = 1.0
            base[i, k, 1:1 + len(cov)] = cov
            if time_trend:
                base[i, k, -1] = k + 1
    names = ["intercept"] + cov_names + (["time"] if time_trend else [])
    return PanelData(y=y, base_x=base, base_z=base.copy(), x_names=names,
                     z_names=list(names), unit_ids=units,
                     time_names=[str(t) for t in times])


def _fmt_count(v):
    return "" if np.isnan(v) else str(int(v))


def _fmt_number(v):
    v = float(v)
    return str(int(v)) if v == int(v) else repr(v)


def panel_to_text(panel, format="wide", group_column=GROUP_COLUMN):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if format == "wide":
        if panel.groups is None:
            raise ValueError("wide output needs group codes")
        w.writerow(list(panel.time_names) + [group_column])
        for i in range(panel.n):
            w.writerow([_fmt_count(v) for v in panel.y[i]] + [panel.groups[i]])
    elif format == "long":
        covs = [j for j, c in enumerate(panel.x_names) if c not in ("intercept", "time")]
        w.writerow(["unit", "time", "y"] + [panel.x_names[j] for j in covs])
        for i in range(panel.n):
            for k in range(panel.T):
                w.writerow([panel.unit_ids[i], panel.time_names[k], _fmt_count(panel.y[i, k])]
                           + [_fmt_number(panel.base_x[i, k, j]) for j in covs])
    else:
        raise ValueError(f"unknown panel format {format!r}")
    return buf.getvalue()


def write_panel(panel, path, format="wide", group_column=GROUP_COLUMN):
    """Write a panel in canonical form (``\\n`` line endings, blank = missing)."""
    Path(path).write_text(panel_to_text(panel, format, group_column), encoding="utf-8")


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def write_trace(result, path):
    """Imputation trace: ``unit,time,pi_hat,lambda_hat,p0,imputed``."""
    write_rows(path, ["unit", "time", "pi_hat", "lambda_hat", "p0", "imputed"],
               [(r.unit, r.time, r.pi_hat, r.lambda_hat, r.p0, r.imputed)
                for r in result.trace])


def write_weights(result, panel, path):
    """Final Step-1 candidate weights: ``unit,time,k,weight``."""
    rows = []
    for t, tf in result.times.items():
        for j, i in enumerate(tf.step1.missing):
            for k, w in enumerate(tf.step1.weights[j]):
                rows.append((panel.unit_ids[i], t, k, float(w)))
    write_rows(path, ["unit", "time", "k", "weight"], rows)


def jsonable(obj):
    """Convert numpy containers and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(obj, path):
    Path(path).write_text(json.dumps(jsonable(obj), indent=2) + "\n", encoding="utf-8")
