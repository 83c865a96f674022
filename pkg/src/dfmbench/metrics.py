"""Comparison quantities: line samples, percentile spreads across curve
sets, integrated and mean concentrations, boundary flux totals and cost
indicators.

Line samples are piecewise constant (the value of the containing cell at
each of n evenly spaced points, endpoints included); points that miss every
cell of the target subdomain snap to the nearest cell within a configurable
tolerance. Percentiles interpolate linearly between order statistics
(rank r = p * (n - 1)); areas use the trapezoid rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dfmbench.flow import FlowSolution
from dfmbench.grid import MixedDimGrid
from dfmbench.transport import TransportState, _cell_porosity


class MetricsError(ValueError):
    """Raised for degenerate probes, empty selections or mismatched curves."""


@dataclass
class Curve:
    x: np.ndarray  # strictly increasing abscissas
    y: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.size != self.y.size:
            raise MetricsError("curve abscissa/ordinate length mismatch")
        if self.x.size >= 2 and np.any(np.diff(self.x) <= 0.0):
            raise MetricsError("curve abscissas must be strictly increasing")


@dataclass
class LineProbe:
    """Sample line from start to end with n evenly spaced points (both
    endpoints included) on subdomain sd_id."""

    start: tuple
    end: tuple
    n: int = 1000
    sd_id: str = "matrix"
    id: str = "line"


@dataclass
class RegionProbe:
    """Cell selection for concentration integrals: restrict by subdomain ids
    and/or dimension, then by region tag and/or axis-aligned box. weighting
    is "weighted" (sum of eps * phi * measure * c) or "mean"
    (measure-weighted average of c)."""

    id: str = "region"
    dim: int | None = None
    sd_ids: tuple | None = None
    tag: str | None = None
    box: tuple | None = None
    weighting: str = "weighted"


@dataclass
class SpreadReport:
    x: np.ndarray
    mean: np.ndarray
    p10: np.ndarray
    p90: np.ndarray
    spread_area: float
    area_ratio: float  # spread area / area under the mean


def sample_over_line(grid: MixedDimGrid, values: np.ndarray, probe: LineProbe,
                     snap_tol: float = np.inf) -> Curve:
    """Piecewise-constant sample of a per-cell field along a straight line.

    The abscissa is the arclength fraction in [0, 1]; the line length is
    available as curve metadata (`arclength`)."""
    start = np.asarray(probe.start, dtype=np.float64)
    end = np.asarray(probe.end, dtype=np.float64)
    length = float(np.linalg.norm(end - start))
    if length == 0.0:
        raise MetricsError("degenerate line probe (zero length)")
    if probe.n < 2:
        raise MetricsError("line probe needs at least 2 points")
    sd = grid.subdomain(probe.sd_id)
    values = np.asarray(values)
    if values.size != sd.n_cells:
        raise MetricsError(
            f"field has {values.size} values, {probe.sd_id} has {sd.n_cells} cells")
    if sd.locator is None:
        raise MetricsError(f"{probe.sd_id} has no point locator")
    frac = np.linspace(0.0, 1.0, probe.n)
    pts = start + frac[:, None] * (end - start)
    idx = sd.locator.locate(pts)
    miss = idx < 0
    if np.any(miss):
        near, dist = sd.locator.nearest(pts[miss])
        ok = dist <= snap_tol
        if not np.all(ok):
            raise MetricsError(
                f"{int((~ok).sum())} sample points farther than {snap_tol} "
                f"from subdomain {probe.sd_id}")
        idx[miss] = near
    curve = Curve(frac, values[idx], label=probe.id)
    curve.arclength = length
    return curve


def percentile_spread(curves) -> SpreadReport:
    """Pointwise mean / 10th / 90th percentile band over >= 2 curves sharing
    their abscissas, with trapezoid-rule areas."""
    curves = list(curves)
    if len(curves) < 2:
        raise MetricsError("need at least 2 curves for a spread")
    x = curves[0].x
    for c in curves[1:]:
        if c.x.size != x.size or not np.allclose(c.x, x, rtol=0.0, atol=1e-12):
            raise MetricsError("curves do not share a common abscissa")
    ys = np.stack([c.y for c in curves])
    mean = ys.mean(axis=0)
    p10 = np.quantile(ys, 0.10, axis=0, method="linear")
    p90 = np.quantile(ys, 0.90, axis=0, method="linear")
    spread_area = float(np.trapezoid(p90 - p10, x))
    mean_area = float(np.trapezoid(mean, x))
    if spread_area == 0.0:
        ratio = 0.0
    elif mean_area == 0.0:
        ratio = float("inf")
    else:
        ratio = spread_area / mean_area
    return SpreadReport(x, mean, p10, p90, spread_area, ratio)


def _select_cells(grid: MixedDimGrid, region: RegionProbe):
    """Yield (sd position, bool cell mask) pairs for the probe selection."""
    for pos, sd in enumerate(grid.subdomains):
        if region.sd_ids is not None and sd.id not in region.sd_ids:
            continue
        if region.dim is not None and sd.dim != region.dim:
            continue
        mask = np.ones(sd.n_cells, dtype=bool)
        if region.tag is not None:
            mask &= sd.region_tags == region.tag
        if region.box is not None:
            box = np.asarray(region.box, dtype=np.float64)
            mask &= np.all((sd.centers >= box[:, 0]) & (sd.centers <= box[:, 1]),
                           axis=1)
        if np.any(mask):
            yield pos, mask


def integrate_concentration(grid: MixedDimGrid, state: TransportState,
                            region: RegionProbe, porosity=None) -> float:
    """Weighted mode: sum of eps_d * phi_d * measure * c over the selection
    (requires porosity, a TransportParams-style mapping). Mean mode:
    measure-weighted average of c."""
    total = 0.0
    norm = 0.0
    empty = True
    for pos, mask in _select_cells(grid, region):
        empty = False
        sd = grid.subdomains[pos]
        c = state.conc_of(pos)[mask]
        meas = sd.measures[mask]
        if region.weighting == "mean":
            total += float(meas @ c)
            norm += float(meas.sum())
        elif region.weighting == "weighted":
            if porosity is None:
                raise MetricsError("weighted integration requires porosities")
            pmap = porosity if isinstance(porosity, dict) else porosity.porosity
            phi = _porosity_of(sd, pmap)[mask]
            total += float(sd.epsilon * (meas * phi) @ c)
        else:
            raise MetricsError(f"unknown weighting {region.weighting!r}")
    if empty:
        raise MetricsError(f"region probe {region.id!r} selects no cells")
    if region.weighting == "mean":
        return total / norm
    return total


def _porosity_of(sd, pmap: dict) -> np.ndarray:
    class _P:
        porosity = pmap
    return _cell_porosity(sd, _P)


@dataclass
class FluxReport:
    totals: dict  # patch id -> signed outward total, m^3/s
    total_out: float  # sum of positive patch totals
    total_in: float  # sum of negative patch totals


def boundary_flux_report(grid: MixedDimGrid, sol: FlowSolution) -> FluxReport:
    """Signed outward flux totals per boundary patch, over all dimensions."""
    totals = {pid: 0.0 for pid in grid.patches}
    for pos, sd in enumerate(grid.subdomains):
        if not sd.bface_cell.size:
            continue
        bf = sol.boundary_flux[pos]
        for pid in np.unique(sd.bface_patch.astype(str)):
            totals[pid] = totals.get(pid, 0.0) + float(bf[sd.bface_patch == pid].sum())
    pos_sum = sum(v for v in totals.values() if v > 0.0)
    neg_sum = sum(v for v in totals.values() if v < 0.0)
    return FluxReport(totals, pos_sum, neg_sum)


def outflow_ratio(report: FluxReport, patch_id: str) -> float:
    """Fraction of the total outflow leaving through one patch."""
    if report.total_out == 0.0:
        return 0.0
    return report.totals[patch_id] / report.total_out


def outlet_concentration_flux(grid: MixedDimGrid, sol: FlowSolution,
                              state: TransportState, patch_id: str) -> float:
    """Advective tracer flux out of a patch: sum of outward flux times the
    upwind (interior cell) concentration over the patch's outflow faces."""
    total = 0.0
    for pos, sd in enumerate(grid.subdomains):
        if not sd.bface_cell.size:
            continue
        sel = sd.bface_patch == patch_id
        if not np.any(sel):
            continue
        q = sol.boundary_flux[pos][sel]
        c = state.conc_of(pos)[sd.bface_cell[sel]]
        total += float(np.maximum(q, 0.0) @ c)
    return total


def cost_report(grid: MixedDimGrid, flow_matrix=None,
                transport_matrix=None) -> dict:
    """Cost indicators: cells per dimension, degrees of freedom (one per
    cell), and nonzeros of the assembled systems."""
    out = {"cells": grid.stats(), "dofs": grid.total_cells()}
    if flow_matrix is not None:
        out["nnz"] = int(flow_matrix.nnz)
    if transport_matrix is not None:
        out["nnz_transport"] = int(transport_matrix.nnz)
    return out
