"""CSV and SVG writers.

Floats are written with ``repr`` so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

CURVE_HEADER = ("episode", "return", "method", "seed")

# Viridis anchor colours; interpolated linearly in RGB.
_ANCHORS = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=np.float64)
UNREACHABLE_FILL = "#ffffff"
CELL = 14


def _fmt(x) -> str:
    return repr(float(x))


def _write_text(path, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return p


# --------------------------------------------------------------------------
# CSV

def curve_rows(returns: Sequence[float], method: str, seed: int):
    for i, r in enumerate(returns):
        yield (i, _fmt(r), method, seed)


def write_curves_csv(path, runs: Iterable[tuple[str, int, Sequence[float]]]) -> Path:
    """``runs`` yields (method, seed, returns)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for method, seed, returns in runs:
        w.writerows(curve_rows(returns, method, seed))
    return _write_text(path, buf.getvalue())


def read_curves_csv(path) -> dict[tuple[str, int], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != CURVE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CURVE_HEADER)}, got {','.join(header)}")
        series: dict[tuple[str, int], list[float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            series.setdefault((row[2], int(row[3])), []).append(float(row[1]))
    return {k: np.asarray(v) for k, v in series.items()}


def write_matrix_csv(path, matrix: np.ndarray) -> Path:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(range(m.shape[1]))
    for row in m:
        w.writerow(_fmt(x) for x in row)
    return _write_text(path, buf.getvalue())


def read_matrix_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: no matrix rows")
    width = len(rows[0])
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise ValueError(f"{path}:{lineno}: ragged row ({len(r)} fields, header has {width})")
    try:
        return np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_agent_csv(path, agent) -> Path:
    """One row per state: logits, then the two baselines."""
    from ..agent import value_of

    theta = value_of(agent.theta)
    header = ["state"] + [f"theta_{a}" for a in range(theta.shape[1])] + ["psi", "phi"]
    psi, phi = value_of(agent.psi).reshape(-1), value_of(agent.phi).reshape(-1)
    rows = ([s, *theta[s], psi[s], phi[s]] for s in range(theta.shape[0]))
    return write_table_csv(path, header, rows)


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row)
    return _write_text(path, buf.getvalue())


# --------------------------------------------------------------------------
# SVG

def colour(value: float) -> str:
    """Map [0, 1] onto the anchor ramp; values outside are clamped."""
    x = min(max(float(value), 0.0), 1.0) * (len(_ANCHORS) - 1)
    i = min(int(x), len(_ANCHORS) - 2)
    rgb = _ANCHORS[i] + (x - i) * (_ANCHORS[i + 1] - _ANCHORS[i])
    r, g, b = (int(round(c)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(matrix: np.ndarray, mask: Optional[np.ndarray] = None, title: str = "") -> str:
    """Grid of cells, row = source state, column = target state.

    Cells where ``mask`` is False are drawn white.  Each cell carries its
    row, column and value as data attributes.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != m.shape:
            raise ValueError(f"mask shape {mask.shape} does not match matrix {m.shape}")
    n_rows, n_cols = m.shape
    pad, top = 30, 30
    width, height = pad + n_cols * CELL + 10, top + n_rows * CELL + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    if title:
        out.append(f'<title>{title}</title>')
    out.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff" class="background"/>')
    for j in range(n_cols):
        out.append(f'<text x="{pad + j * CELL + CELL / 2}" y="{top - 4}" font-size="8" '
                   f'text-anchor="middle">{j}</text>')
    for i in range(n_rows):
        out.append(f'<text x="{pad - 4}" y="{top + i * CELL + CELL * 0.7}" font-size="8" '
                   f'text-anchor="end">{i}</text>')
        for j in range(n_cols):
            reachable = mask is None or mask[i, j]
            fill = colour(m[i, j]) if reachable else UNREACHABLE_FILL
            cls = "cell" if reachable else "cell unreachable"
            out.append(f'<rect class="{cls}" x="{pad + j * CELL}" y="{top + i * CELL}" '
                       f'width="{CELL}" height="{CELL}" fill="{fill}" data-row="{i}" '
                       f'data-col="{j}" data-value="{_fmt(m[i, j])}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_svg(series: dict[str, np.ndarray], smooth: int = 100, title: str = "") -> str:
    """Line chart of smoothed return curves, one polyline per key."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    width, height, pad = 640, 360, 40
    smoothed = {}
    for name, y in series.items():
        y = np.asarray(y, dtype=np.float64)
        k = max(1, min(smooth, y.size))
        c = np.concatenate([[0.0], np.cumsum(y)])
        smoothed[name] = (c[k:] - c[:-k]) / k
    x_max = max((v.size for v in smoothed.values()), default=1) + smooth
    vals = np.concatenate([v for v in smoothed.values()]) if smoothed else np.zeros(1)
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    sx = (width - 2 * pad) / max(x_max, 1)
    sy = (height - 2 * pad) / (hi - lo)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    if title:
        out.append(f'<title>{title}</title>')
    out.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>')
    out.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#000"/>')
    out.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#000"/>')
    out.append(f'<text x="{pad}" y="{pad - 8}" font-size="10">{hi:.3g}</text>')
    out.append(f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{lo:.3g}</text>')
    out.append(f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" '
               f'text-anchor="end">episode {x_max}</text>')
    for n, (name, y) in enumerate(sorted(smoothed.items())):
        step = max(1, y.size // 400)
        xs = np.arange(y.size)[::step] + min(smooth, y.size) - 1
        pts = " ".join(f"{pad + x * sx:.1f},{height - pad - (v - lo) * sy:.1f}"
                       for x, v in zip(xs, y[::step]))
        c = palette[n % len(palette)]
        out.append(f'<polyline class="curve" data-name="{name}" fill="none" stroke="{c}" '
                   f'stroke-width="1.2" points="{pts}"/>')
        out.append(f'<text x="{width - pad - 4}" y="{pad + 12 * n}" font-size="10" fill="{c}" '
                   f'text-anchor="end">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_heatmap(path, matrix, mask=None, title: str = "") -> Path:
    return _write_text(path, heatmap_svg(matrix, mask, title))


def write_curves_svg(path, series, smooth: int = 100, title: str = "") -> Path:
    return _write_text(path, curves_svg(series, smooth, title))
