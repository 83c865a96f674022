"""Figure rendering from benchmark CSV artifacts.

Four figure kinds, all driven by a small JSON spec:

  over-line    one panel per dol_*.csv, value against arclength fraction
  over-time    dot_*.csv series overlaid in a single panel
  spread-band  spread_*.csv band between the 10th and 90th percentiles,
               with the area ratio annotated in the title
  bars         grouped bar chart of per-patch totals from flux JSON files

plotkit never computes physics: every ordinate is plotted verbatim from the
input files. Figures are written as SVG and PNG with stripped volatile
metadata so identical inputs reproduce identical bytes; a SHA-256 checksum
of the input data is embedded in the figure metadata for provenance.
"""
from __future__ import annotations

import glob
import hashlib
import json
import os
from dataclasses import dataclass, field

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KINDS = ("over-line", "over-time", "spread-band", "bars")

SCHEMAS = {
    "dol": ["fraction", "arclength_m", "value"],
    "dot": ["time_s", "value"],
    "spread": [None, "p10", "mean", "p90"],  # abscissa name varies
}


class PlotError(ValueError):
    """Raised for bad specs, missing inputs or schema-violating CSVs."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str  # path stem; .svg and .png are appended
    title: str = ""
    labels: list = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown figure kind {self.kind!r} "
                            f"(choose from {KINDS})")
        if not self.inputs:
            raise PlotError("figure spec lists no inputs")

    @staticmethod
    def from_json(source) -> "FigureSpec":
        if isinstance(source, dict):
            data = source
        else:
            with open(source) as fh:
                data = json.load(fh)
        try:
            return FigureSpec(
                kind=data["kind"], inputs=list(data["inputs"]),
                output=data["output"], title=data.get("title", ""),
                labels=list(data.get("labels", [])),
                xlabel=data.get("xlabel", ""), ylabel=data.get("ylabel", ""))
        except KeyError as exc:
            raise PlotError(f"figure spec missing field {exc}") from exc


def expand_inputs(patterns) -> list:
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        if not hits:
            if os.path.exists(pat):
                hits = [pat]
            else:
                raise PlotError(f"input {pat!r} matches no files")
        paths.extend(hits)
    return paths


def read_csv(path: str, schema: str):
    """Read one CSV and check its columns against the named schema;
    mismatches report the offending column."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    expected = SCHEMAS[schema]
    if len(header) != len(expected):
        raise PlotError(f"{path}: expected {len(expected)} columns "
                        f"{expected}, got {len(header)} {header}")
    for i, (got, want) in enumerate(zip(header, expected)):
        if want is not None and got != want:
            raise PlotError(f"{path}: column {i} is {got!r}, expected {want!r}")
    if data.shape[1] != len(expected):
        raise PlotError(f"{path}: row width {data.shape[1]} does not match "
                        f"the header")
    return header, data


def input_checksum(paths) -> str:
    digest = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            digest.update(fh.read())
    return digest.hexdigest()


def _label(spec: FigureSpec, i: int, path: str) -> str:
    if i < len(spec.labels):
        return spec.labels[i]
    return os.path.splitext(os.path.basename(path))[0]


def _render_over_line(spec, paths, fig):
    axes = fig.subplots(1, len(paths), sharey=True, squeeze=False)[0]
    for i, (ax, path) in enumerate(zip(axes, paths)):
        _, data = read_csv(path, "dol")
        ax.plot(data[:, 0], data[:, 2], lw=1.2)
        ax.set_title(_label(spec, i, path), fontsize=9)
        ax.set_xlabel(spec.xlabel or "arclength fraction")
    axes[0].set_ylabel(spec.ylabel or "value")


def _render_over_time(spec, paths, fig):
    ax = fig.subplots()
    for i, path in enumerate(paths):
        _, data = read_csv(path, "dot")
        ax.plot(data[:, 0], data[:, 1], lw=1.2, label=_label(spec, i, path))
    ax.set_xlabel(spec.xlabel or "time [s]")
    ax.set_ylabel(spec.ylabel or "value")
    ax.legend(fontsize=8)


def _render_spread_band(spec, paths, fig):
    axes = fig.subplots(1, len(paths), sharey=True, squeeze=False)[0]
    for i, (ax, path) in enumerate(zip(axes, paths)):
        header, data = read_csv(path, "spread")
        x, p10, mean, p90 = data.T
        ax.fill_between(x, p10, p90, alpha=0.35, lw=0)
        ax.plot(x, mean, lw=1.2)
        title = _label(spec, i, path)
        sidecar = os.path.splitext(path)[0] + ".json"
        if os.path.exists(sidecar):
            with open(sidecar) as fh:
                ratio = json.load(fh).get("area_ratio")
            if ratio is not None:
                title = f"{title}  {ratio:.3g}"
        ax.set_title(title, fontsize=9)
        ax.set_xlabel(spec.xlabel or header[0])
    axes[0].set_ylabel(spec.ylabel or "value")


def _render_bars(spec, paths, fig):
    ax = fig.subplots()
    groups = []
    for path in paths:
        with open(path) as fh:
            data = json.load(fh)
        if "patches" not in data:
            raise PlotError(f"{path}: flux JSON lacks a 'patches' field")
        groups.append(data["patches"])
    patch_ids = sorted({pid for g in groups for pid in g})
    width = 0.8 / len(groups)
    xs = np.arange(len(patch_ids))
    for i, g in enumerate(groups):
        vals = [g.get(pid, 0.0) for pid in patch_ids]
        ax.bar(xs + i * width, vals, width, label=_label(spec, i, paths[i]))
    ax.set_xticks(xs + 0.4 - width / 2.0)
    ax.set_xticklabels(patch_ids, fontsize=8)
    ax.set_ylabel(spec.ylabel or "boundary flux [m^3/s]")
    ax.legend(fontsize=8)


RENDERERS = {
    "over-line": _render_over_line,
    "over-time": _render_over_time,
    "spread-band": _render_spread_band,
    "bars": _render_bars,
}


def plot(spec: FigureSpec) -> list:
    """Render one figure spec; returns the written file paths."""
    paths = expand_inputs(spec.inputs)
    checksum = input_checksum(paths)
    with plt.rc_context({"svg.hashsalt": "plotkit", "figure.dpi": 100}):
        fig = plt.figure(figsize=(3.2 * min(len(paths), 3), 2.8))
        try:
            RENDERERS[spec.kind](spec, paths, fig)
            if spec.title:
                fig.suptitle(spec.title, fontsize=10)
            fig.tight_layout()
            out_dir = os.path.dirname(spec.output)
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
            svg = spec.output + ".svg"
            png = spec.output + ".png"
            fig.savefig(svg, format="svg",
                        metadata={"Date": None,
                                  "Description": f"sha256:{checksum}"})
            fig.savefig(png, format="png",
                        metadata={"Software": "plotkit",
                                  "Description": f"sha256:{checksum}"})
        finally:
            plt.close(fig)
    return [svg, png]
