"""Figures from plot-data CSVs.  Reads files only, so it works on any finished run."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402


def read_columns(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path} holds no data rows")
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


def plot_series(csv_path: str | Path, out_png: str | Path, x: str | None = None, ys: list[str] | None = None,
                logx: bool = False, logy: bool = False, title: str | None = None) -> Path:
    """Line plot of columns ``ys`` against ``x`` (defaults: first column against the rest)."""
    cols = read_columns(csv_path)
    names = list(cols)
    x = x or names[0]
    ys = ys or [n for n in names if n != x]
    missing = [c for c in [x, *ys] if c not in cols]
    if missing:
        raise ConfigError(f"unknown column(s) {missing}; available: {', '.join(names)}")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for y in ys:
        v = cols[y]
        keep = v > 0 if logy else np.ones_like(v, dtype=bool)
        ax.plot(cols[x][keep], v[keep], "o-", ms=3, label=y)
    ax.set_xscale("log" if logx else "linear")
    ax.set_yscale("log" if logy else "linear")
    ax.set_xlabel(x)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
