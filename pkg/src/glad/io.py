"""File formats shared by the command-line tools.

Everything here is deliberately plain text so artifacts diff cleanly and a
rerun with the same inputs reproduces every output byte for byte:

* feature matrix: CSV ``node_id,f_1,...,f_V`` with integer counts.  Static
  datasets have one row per node; activity-level datasets repeat ``node_id``
  with one one-hot row per activity.
* edge list: TSV ``p<TAB>q`` (static) or ``p<TAB>q<TAB>t`` (dynamic), lines
  sorted, one line per unordered pair, no self loops.
* ground truth: JSON ``{"anomalous_groups": [...], "grouping": [...],
  "change_times": {...}}``.
* configs: ``key=value`` lines with ``#`` comments; unknown keys are errors.
* numeric tables: CSV with a header row and ``repr``-exact floats so values
  survive a round trip unchanged.

Node ids are 0-based and contiguous everywhere.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ActivityDataset, Dataset, DynamicDataset

__all__ = [
    "coerce_config",
    "fmt_cell",
    "format_config",
    "parse_config_text",
    "read_activity_features",
    "read_dataset",
    "read_dynamic_edges",
    "read_edges",
    "read_matrix_csv",
    "read_static_features",
    "read_truth",
    "svg_line_plot",
    "write_dataset",
    "write_json",
    "write_matrix_csv",
    "write_truth",
]


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def fmt_cell(value) -> str:
    """Format one cell: integers stay integers, floats use repr (exact)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_json(path, obj) -> None:
    """Write ``obj`` as stably ordered, indented JSON (plus trailing newline)."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# feature CSV
# ---------------------------------------------------------------------------

def _feature_header(n_features: int) -> str:
    return ",".join(["node_id"] + [f"f_{j + 1}" for j in range(n_features)])


def _write_feature_rows(path, rows, n_features: int) -> None:
    lines = [_feature_header(n_features)]
    for node, counts in rows:
        lines.append(",".join([str(node)] + [str(int(c)) for c in counts]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_feature_file(path):
    """Return (node_ids, counts) from a feature CSV, validating the header."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty feature file; expected 'node_id,f_1,...' CSV")
    header = lines[0].split(",")
    if header[0] != "node_id" or any(
        h != f"f_{j + 1}" for j, h in enumerate(header[1:])
    ) or len(header) < 2:
        raise ValueError(f"{path}: feature header must read 'node_id,f_1,...,f_V'")
    n_features = len(header) - 1
    ids, counts = [], []
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_features + 1:
            raise ValueError(f"{path} line {i}: expected {n_features + 1} integer cells")
        try:
            row = [int(c) for c in cells]
        except ValueError:
            raise ValueError(f"{path} line {i}: feature cells must be integers") from None
        ids.append(row[0])
        counts.append(row[1:])
    return np.asarray(ids, dtype=np.int64), np.asarray(counts, dtype=np.int64).reshape(
        len(ids), n_features
    )


def read_static_features(path) -> np.ndarray:
    """Read a static feature CSV: one row per node, ids 0..N-1 in order."""
    ids, counts = _parse_feature_file(path)
    if not np.array_equal(ids, np.arange(ids.size)):
        raise ValueError(
            f"{path}: static feature rows must list node ids 0..N-1 exactly once, in order"
        )
    return counts


def read_activity_features(path, n_nodes: int):
    """Read an activity-level feature CSV into per-person index arrays.

    Every row must be one-hot (one count of 1, rest 0); rows group by
    ``node_id`` in file order.  Nodes without rows get empty arrays, which is
    why the caller must supply ``n_nodes``.
    """
    ids, counts = _parse_feature_file(path)
    if counts.size and (counts.min() < 0 or counts.max() > 1 or np.any(counts.sum(axis=1) != 1)):
        raise ValueError(f"{path}: activity feature rows must be one-hot (a single 1)")
    if ids.size and (ids.min() < 0 or ids.max() >= n_nodes):
        raise ValueError(f"{path}: node ids must lie in [0, {n_nodes})")
    per_person = [[] for _ in range(n_nodes)]
    tokens = counts.argmax(axis=1) if counts.size else np.zeros(0, dtype=np.int64)
    for node, tok in zip(ids, tokens):
        per_person[node].append(int(tok))
    return tuple(np.asarray(p, dtype=np.int64) for p in per_person)


# ---------------------------------------------------------------------------
# edge TSV
# ---------------------------------------------------------------------------

def _edge_lines_static(links: np.ndarray):
    for p, q in zip(*np.triu_indices(links.shape[0], k=1)):
        if links[p, q]:
            yield f"{p}\t{q}"


def _parse_edge_line(path, i, line, n_cols):
    cells = line.split("\t")
    shape = "p<TAB>q" if n_cols == 2 else "p<TAB>q<TAB>t"
    if len(cells) != n_cols:
        raise ValueError(f"{path} line {i}: expected '{shape}' with {n_cols} integer fields")
    try:
        return [int(c) for c in cells]
    except ValueError:
        raise ValueError(f"{path} line {i}: expected '{shape}' with integer fields") from None


def read_edges(path, n_nodes: int) -> np.ndarray:
    """Read a static edge TSV into a symmetric (N, N) 0/1 matrix."""
    links = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        p, q = _parse_edge_line(path, i, line, 2)
        if p == q or not (0 <= p < n_nodes and 0 <= q < n_nodes):
            raise ValueError(f"{path} line {i}: ids must be distinct and in [0, {n_nodes})")
        if links[p, q]:
            raise ValueError(f"{path} line {i}: duplicate unordered pair ({p}, {q})")
        links[p, q] = links[q, p] = 1
    return links


def read_dynamic_edges(path, n_nodes: int, horizon: int):
    """Read a dynamic edge TSV into per-snapshot symmetric matrices."""
    snaps = [np.zeros((n_nodes, n_nodes), dtype=np.int8) for _ in range(horizon)]
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        p, q, t = _parse_edge_line(path, i, line, 3)
        if p == q or not (0 <= p < n_nodes and 0 <= q < n_nodes):
            raise ValueError(f"{path} line {i}: ids must be distinct and in [0, {n_nodes})")
        if not 0 <= t < horizon:
            raise ValueError(f"{path} line {i}: snapshot index must lie in [0, {horizon})")
        if snaps[t][p, q]:
            raise ValueError(f"{path} line {i}: duplicate pair ({p}, {q}) at snapshot {t}")
        snaps[t][p, q] = snaps[t][q, p] = 1
    return snaps


# ---------------------------------------------------------------------------
# ground truth JSON
# ---------------------------------------------------------------------------

def write_truth(path, anomalous_groups, grouping, change_times=None) -> None:
    write_json(
        path,
        {
            "anomalous_groups": sorted(int(g) for g in anomalous_groups),
            "grouping": [int(g) for g in np.asarray(grouping).ravel()],
            "change_times": {str(int(g)): int(t) for g, t in (change_times or {}).items()},
        },
    )


def read_truth(path) -> dict:
    """Read a truth JSON; ``change_times`` keys come back as ints."""
    raw = _read_json(path)
    missing = {"anomalous_groups", "grouping", "change_times"} - raw.keys()
    if missing:
        raise ValueError(f"{path}: truth file missing keys {sorted(missing)}")
    return {
        "anomalous_groups": frozenset(int(g) for g in raw["anomalous_groups"]),
        "grouping": np.asarray(raw["grouping"], dtype=np.int64),
        "change_times": {int(g): int(t) for g, t in raw["change_times"].items()},
    }


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def write_dataset(dirpath, data, truth=None) -> None:
    """Write a dataset directory: manifest + feature CSV(s) + edge TSV.

    Layout: ``dataset.json`` names the kind ("static" | "activity" |
    "dynamic") and shapes; static and activity kinds use ``features.csv`` +
    ``edges.tsv``; the dynamic kind writes one ``features_t{t}.csv`` per
    snapshot plus a single t-tagged ``edges.tsv``.  ``truth.json`` appears
    when ground truth is supplied.
    """
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"n_nodes": int(data.n_nodes), "n_features": int(data.n_features)}
    if isinstance(data, DynamicDataset):
        manifest["kind"] = "dynamic"
        manifest["horizon"] = data.horizon
        lines = []
        for t, snap in enumerate(data.snapshots):
            _write_feature_rows(
                out / f"features_t{t}.csv",
                list(enumerate(snap.features)),
                data.n_features,
            )
            lines.extend(f"{e}\t{t}" for e in _edge_lines_static(snap.links))
        (out / "edges.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    elif isinstance(data, ActivityDataset):
        manifest["kind"] = "activity"
        rows = []
        for p, ids in enumerate(data.feature_ids):
            for tok in ids:
                one_hot = np.zeros(data.n_features, dtype=np.int64)
                one_hot[tok] = 1
                rows.append((p, one_hot))
        _write_feature_rows(out / "features.csv", rows, data.n_features)
        text = "\n".join(_edge_lines_static(data.links))
        (out / "edges.tsv").write_text(text + ("\n" if text else ""))
    elif isinstance(data, Dataset):
        manifest["kind"] = "static"
        _write_feature_rows(
            out / "features.csv", list(enumerate(data.features)), data.n_features
        )
        text = "\n".join(_edge_lines_static(data.links))
        (out / "edges.tsv").write_text(text + ("\n" if text else ""))
    else:
        raise TypeError("write_dataset expects a Dataset, ActivityDataset or DynamicDataset")
    write_json(out / "dataset.json", manifest)
    if truth is not None:
        write_truth(
            out / "truth.json",
            truth.anomalous_groups,
            _node_grouping(truth.group),
            truth.change_times,
        )


def _node_grouping(group) -> np.ndarray:
    """Per-node group labels from either an (N,) or a constant-row (T, N) array."""
    g = np.asarray(group)
    return g[0] if g.ndim == 2 else g


def read_dataset(dirpath):
    """Load a dataset directory written by :func:`write_dataset`."""
    root = Path(dirpath)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise ValueError(f"{dirpath}: not a dataset directory (missing dataset.json)")
    manifest = _read_json(manifest_path)
    kind = manifest.get("kind")
    n = int(manifest["n_nodes"])
    if kind == "static":
        features = read_static_features(root / "features.csv")
        return Dataset(features=features, links=read_edges(root / "edges.tsv", n))
    if kind == "activity":
        ids = read_activity_features(root / "features.csv", n)
        return ActivityDataset(
            feature_ids=ids,
            links=read_edges(root / "edges.tsv", n),
            n_features=int(manifest["n_features"]),
        )
    if kind == "dynamic":
        horizon = int(manifest["horizon"])
        link_snaps = read_dynamic_edges(root / "edges.tsv", n, horizon)
        snaps = [
            Dataset(
                features=read_static_features(root / f"features_t{t}.csv"),
                links=link_snaps[t],
            )
            for t in range(horizon)
        ]
        return DynamicDataset(snapshots=tuple(snaps))
    raise ValueError(f"{dirpath}: unknown dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# key=value configs
# ---------------------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment; duplicates are errors."""
    raw: dict = {}
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {i}: expected 'key=value', got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ValueError(f"config line {i}: empty key")
        if key in raw:
            raise ValueError(f"config line {i}: duplicate key {key!r}")
        raw[key] = value
    return raw


_MISSING = object()


def coerce_config(raw: dict, schema: dict) -> dict:
    """Typed view of a parsed config.

    ``schema`` maps key -> (kind, default); kinds are "int", "float", "bool",
    "str", "int_list" / "float_list" (comma-separated) and "float_pair".
    Keys absent from the schema are errors, as are missing keys whose default
    is the required marker ``...``.
    """
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, (kind, default) in schema.items():
        text = raw.get(key, _MISSING)
        if text is _MISSING:
            if default is ...:
                raise ValueError(f"config is missing required key {key!r}")
            out[key] = default
            continue
        try:
            if kind == "int":
                out[key] = int(text)
            elif kind == "float":
                out[key] = float(text)
            elif kind == "str":
                out[key] = text
            elif kind == "bool":
                low = text.lower()
                if low in ("true", "1", "yes"):
                    out[key] = True
                elif low in ("false", "0", "no"):
                    out[key] = False
                else:
                    raise ValueError
            elif kind == "int_list":
                out[key] = [int(c) for c in text.split(",") if c.strip() != ""]
                if not out[key]:
                    raise ValueError
            elif kind == "float_list":
                out[key] = tuple(float(c) for c in text.split(",") if c.strip() != "")
                if not out[key]:
                    raise ValueError
            elif kind == "float_pair":
                cells = [float(c) for c in text.split(",")]
                if len(cells) != 2:
                    raise ValueError
                out[key] = tuple(cells)
            else:  # pragma: no cover - schema bug, not user input
                raise AssertionError(f"unknown schema kind {kind!r}")
        except ValueError:
            raise ValueError(f"config key {key!r}: cannot parse {text!r} as {kind}") from None
    return out


def format_config(cfg: dict) -> str:
    """Render a config back to sorted ``key=value`` text."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, (list, tuple)):
            rendered = ",".join(fmt_cell(v) for v in value)
        else:
            rendered = fmt_cell(value)
        lines.append(f"{key}={rendered}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# numeric tables
# ---------------------------------------------------------------------------

def write_matrix_csv(path, matrix, header) -> None:
    """Write a 2-D table as CSV with ``header`` naming the columns."""
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError("write_matrix_csv expects a 2-D table")
    if arr.shape[1] != len(header):
        raise ValueError("header length must match the number of columns")
    lines = [",".join(header)]
    for row in arr:
        lines.append(",".join(fmt_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path):
    """Read a CSV table back as ``(header, float64 array)``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty table")
    header = lines[0].split(",")
    rows = [[float(c) for c in line.split(",")] for line in lines[1:]]
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, data


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

_PALETTE = ("#1f6fb2", "#d1495b", "#3a9e4f", "#8d5fb0", "#c98a24", "#4f6d7a")


def svg_line_plot(path, xs, series, labels, title="", xlabel="", ylabel="") -> None:
    """Write a self-contained SVG line plot (no external assets or scripts).

    ``series`` is a list of y-arrays sharing ``xs``; ``labels`` names them in
    the legend.  Purely deterministic text output.
    """
    xs = np.asarray(xs, dtype=float)
    series = [np.asarray(y, dtype=float) for y in series]
    if len(series) != len(labels):
        raise ValueError("one label per series")
    for y in series:
        if y.shape != xs.shape:
            raise ValueError("every series must match xs in length")
    width, height = 640, 420
    left, right, top, bottom = 70, 20, 40, 50
    inner_w, inner_h = width - left - right, height - top - bottom

    all_y = np.concatenate(series) if series else np.zeros(1)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * inner_w

    def sy(y):
        return top + inner_h - (y - y_lo) / (y_hi - y_lo) * inner_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + inner_h}" x2="{left + inner_w}" '
        f'y2="{top + inner_h}" stroke="#333" stroke-width="1"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + inner_h}" '
        f'stroke="#333" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{left + inner_w / 2:.1f}" y="{height - 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="18" y="{top + inner_h / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 18 {top + inner_h / 2:.1f})">{ylabel}</text>'
        )
    for value, anchor_x in ((x_lo, left), (x_hi, left + inner_w)):
        parts.append(
            f'<text x="{anchor_x}" y="{top + inner_h + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{value:.4g}</text>'
        )
    for value in (y_lo, y_hi):
        parts.append(
            f'<text x="{left - 8}" y="{sy(value) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{value:.4g}</text>'
        )
    for idx, (y, label) in enumerate(zip(series, labels)):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(xs, y))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        ly = top + 16 * idx
        parts.append(
            f'<line x1="{left + inner_w - 130}" y1="{ly + 4}" x2="{left + inner_w - 110}" '
            f'y2="{ly + 4}" stroke="{color}" stroke-width="3"/>'
        )
        parts.append(
            f'<text x="{left + inner_w - 104}" y="{ly + 8}" font-family="sans-serif" '
            f'font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
