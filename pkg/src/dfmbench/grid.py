"""Mixed-dimensional grids for fractured porous media.

A grid is a collection of subdomains of dimension 3 (matrix), 2 (fracture
planes), 1 (fracture intersection lines) and 0 (intersection points), plus
mortar couplings between successive dimensions and boundary patches.

Two structured builders are provided: a Cartesian hexahedral builder for
axis-aligned fracture rectangles, and a sheared variant that conforms one
grid layer to an inclined plane z = z0 + s*x. Simplicial grids are built
from mesh files by :mod:`dfmbench.mshio`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

TOPOLOGY_SCHEMA = "dfmbench-topology/1"

# relative tolerance (times the domain diagonal) for geometric coincidence
COINCIDENCE_RTOL = 1e-8


class GridError(ValueError):
    """Raised for misaligned fractures, empty grids and other geometry errors."""


@dataclass(frozen=True)
class FractureRect:
    """Axis-aligned fracture rectangle: plane normal to `axis` at `coord`,
    spanning `extent` = ((lo, hi), (lo, hi)) over the two remaining axes in
    ascending axis order."""

    axis: int
    coord: float
    extent: tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class PatchSpec:
    """Boundary patch definition. A boundary face belongs to the first spec
    whose box contains the face center; unmatched faces fall into the default
    no-flow patch."""

    id: str
    kind: str  # "dirichlet" | "neumann" | "noflow"
    value: float = 0.0  # head (m) for Dirichlet, outward velocity (m/s) for Neumann
    box: tuple | None = None  # ((x0,x1),(y0,y1),(z0,z1)), None matches everything


@dataclass(frozen=True)
class BoundaryPatch:
    id: str
    kind: str
    value: float


NOFLOW_PATCH = BoundaryPatch("noflow", "noflow", 0.0)


@dataclass
class Subdomain:
    """One d-dimensional subdomain with its cells, interior faces and
    boundary faces. Geometry arrays are immutable after construction."""

    id: str
    dim: int
    epsilon: float
    centers: np.ndarray  # (nc, 3)
    measures: np.ndarray  # (nc,) d-dimensional cell measure (1 for d = 0)
    region_tags: np.ndarray  # (nc,) object array of tags
    # interior faces
    face_owner: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    face_neighbor: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    face_area: np.ndarray = field(default_factory=lambda: np.zeros(0))
    face_center: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    face_normal: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    face_axis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # boundary faces (exactly one adjacent cell each)
    bface_cell: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bface_area: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bface_center: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    bface_normal: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    bface_axis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bface_patch: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    locator: object | None = None
    plane_axis: int = -1  # for structured fracture subdomains

    @property
    def n_cells(self) -> int:
        return int(self.centers.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.face_owner.size)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.centers)):
            raise GridError(f"{self.id}: non-finite cell centers")
        if self.dim >= 1 and np.any(self.measures <= 0.0):
            raise GridError(f"{self.id}: non-positive cell measure")
        if self.epsilon <= 0.0:
            raise GridError(f"{self.id}: non-positive epsilon")


@dataclass
class MortarBlock:
    """Couplings between (d+1)-subdomain faces and d-subdomain cells,
    stored as flat arrays. Orientation is high -> low."""

    high_sd: np.ndarray  # index into grid.subdomains
    high_cell: np.ndarray
    low_sd: np.ndarray
    low_cell: np.ndarray
    area: np.ndarray  # coupling measure (1 for d = 0)
    high_half_distance: np.ndarray  # high cell center to interface, along normal
    center: np.ndarray  # (n, 3) interface centers
    normal: np.ndarray  # (n, 3) unit interface normal (sign is arbitrary)

    @property
    def n(self) -> int:
        return int(self.high_sd.size)

    @staticmethod
    def from_lists(records: list[tuple]) -> "MortarBlock":
        if not records:
            z = np.zeros(0, dtype=np.int64)
            return MortarBlock(z, z.copy(), z.copy(), z.copy(), np.zeros(0),
                               np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        hs, hc, ls, lc, ar, hd, ce, nr = zip(*records)
        return MortarBlock(
            np.asarray(hs, dtype=np.int64),
            np.asarray(hc, dtype=np.int64),
            np.asarray(ls, dtype=np.int64),
            np.asarray(lc, dtype=np.int64),
            np.asarray(ar, dtype=np.float64),
            np.asarray(hd, dtype=np.float64),
            np.asarray(ce, dtype=np.float64).reshape(-1, 3),
            np.asarray(nr, dtype=np.float64).reshape(-1, 3),
        )


@dataclass
class MixedDimGrid:
    subdomains: list[Subdomain]
    mortars: dict[int, MortarBlock]  # keyed by the low dimension d in {0, 1, 2}
    patches: dict[str, BoundaryPatch]
    domain_box: np.ndarray | None = None  # (3, 2)

    def subdomain(self, sd_id: str) -> Subdomain:
        for sd in self.subdomains:
            if sd.id == sd_id:
                return sd
        raise KeyError(sd_id)

    def sd_index(self, sd_id: str) -> int:
        for i, sd in enumerate(self.subdomains):
            if sd.id == sd_id:
                return i
        raise KeyError(sd_id)

    def of_dim(self, dim: int) -> list[Subdomain]:
        return [sd for sd in self.subdomains if sd.dim == dim]

    @property
    def matrix(self) -> Subdomain:
        return self.of_dim(3)[0]

    def total_cells(self) -> int:
        return sum(sd.n_cells for sd in self.subdomains)

    def stats(self) -> dict[str, int]:
        out = {"0d": 0, "1d": 0, "2d": 0, "3d": 0}
        for sd in self.subdomains:
            out[f"{sd.dim}d"] += sd.n_cells
        return out

    def topology_dict(self) -> dict:
        """Versioned JSON-serializable topology summary for debugging."""
        subs = []
        for sd in self.subdomains:
            subs.append({
                "id": sd.id,
                "dim": sd.dim,
                "epsilon": sd.epsilon,
                "cells": sd.n_cells,
                "interior_faces": sd.n_faces,
                "boundary_faces": int(sd.bface_cell.size),
                "boundary_patches": sorted(set(sd.bface_patch.tolist())),
            })
        mortars = {
            str(d): {
                "couplings": blk.n,
                "total_area": float(blk.area.sum()),
            }
            for d, blk in self.mortars.items()
        }
        return {
            "schema": TOPOLOGY_SCHEMA,
            "cells": self.stats(),
            "subdomains": subs,
            "mortars": mortars,
            "patches": {
                p.id: {"kind": p.kind, "value": p.value}
                for p in self.patches.values()
            },
        }

    def dump_topology(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.topology_dict(), fh, indent=2, sort_keys=True)


def grid_stats(grid: MixedDimGrid) -> dict[str, int]:
    """Cell counts per dimension, keys '0d'..'3d'."""
    return grid.stats()


# ---------------------------------------------------------------------------
# point-in-cell locators


class CartesianLocator:
    """Half-open box lookup on a (possibly sheared) Cartesian cell grid.
    Points exactly on an internal interface resolve to the lower-index cell."""

    def __init__(self, origin, pitch, dims, shear: float = 0.0):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.pitch = np.asarray(pitch, dtype=np.float64)
        self.dims = np.asarray(dims, dtype=np.int64)
        self.shear = float(shear)

    def _reference(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64)).copy()
        if self.shear != 0.0:
            pts[:, 2] -= self.shear * pts[:, 0]
        return pts

    def locate(self, pts) -> np.ndarray:
        pts = self._reference(pts)
        t = (pts - self.origin) / self.pitch
        idx = np.floor(t).astype(np.int64)
        # exact interface hits go to the lower cell
        on_iface = (t == idx) & (idx > 0)
        idx[on_iface] -= 1
        inside = np.all((idx >= 0) & (idx < self.dims), axis=1)
        flat = (idx[:, 0] * self.dims[1] + idx[:, 1]) * self.dims[2] + idx[:, 2]
        flat[~inside] = -1
        return flat

    def nearest(self, pts):
        """(cell index, distance) of the closest cell, clamping into the box.
        Distances are measured in reference (unsheared) coordinates."""
        ref = self._reference(pts)
        span = self.pitch * self.dims
        clamped = np.clip(ref, self.origin, self.origin + span)
        dist = np.linalg.norm(ref - clamped, axis=1)
        return self.locate_reference(clamped), dist

    def locate_reference(self, ref_pts: np.ndarray) -> np.ndarray:
        t = (np.atleast_2d(ref_pts) - self.origin) / self.pitch
        idx = np.clip(np.floor(t).astype(np.int64), 0, self.dims - 1)
        on_iface = (t == idx) & (idx > 0)
        idx[on_iface] -= 1
        return (idx[:, 0] * self.dims[1] + idx[:, 1]) * self.dims[2] + idx[:, 2]


class FracturePlaneLocator:
    """Lookup on a structured fracture plane (axis-aligned before shear)."""

    def __init__(self, axis, coord, b_axis, c_axis, b_origin, c_origin,
                 pitch_b, pitch_c, nb, nc, tol, shear: float = 0.0):
        self.axis = axis
        self.coord = coord
        self.b_axis, self.c_axis = b_axis, c_axis
        self.origin = np.array([b_origin, c_origin])
        self.pitch = np.array([pitch_b, pitch_c])
        self.dims = np.array([nb, nc], dtype=np.int64)
        self.tol = tol
        self.shear = float(shear)

    def locate(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        plane = np.full(pts.shape[0], self.coord)
        if self.shear != 0.0 and self.axis == 2:
            plane = plane + self.shear * pts[:, 0]
        on_plane = np.abs(pts[:, self.axis] - plane) <= self.tol
        uv = np.stack([pts[:, self.b_axis], pts[:, self.c_axis]], axis=1)
        t = (uv - self.origin) / self.pitch
        idx = np.floor(t).astype(np.int64)
        on_iface = (t == idx) & (idx > 0)
        idx[on_iface] -= 1
        inside = np.all((idx >= 0) & (idx < self.dims), axis=1) & on_plane
        flat = idx[:, 0] * self.dims[1] + idx[:, 1]
        flat[~inside] = -1
        return flat

    def nearest(self, pts):
        """(cell index, distance) of the closest in-plane cell; the distance
        combines in-plane clamping with the off-plane offset."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        plane = np.full(pts.shape[0], self.coord)
        if self.shear != 0.0 and self.axis == 2:
            plane = plane + self.shear * pts[:, 0]
        off = np.abs(pts[:, self.axis] - plane)
        uv = np.stack([pts[:, self.b_axis], pts[:, self.c_axis]], axis=1)
        span = self.pitch * self.dims
        clamped = np.clip(uv, self.origin, self.origin + span)
        d_in = np.linalg.norm(uv - clamped, axis=1)
        t = (clamped - self.origin) / self.pitch
        idx = np.clip(np.floor(t).astype(np.int64), 0, self.dims - 1)
        on_iface = (t == idx) & (idx > 0)
        idx[on_iface] -= 1
        return idx[:, 0] * self.dims[1] + idx[:, 1], np.hypot(off, d_in)


# ---------------------------------------------------------------------------
# Cartesian builder


def _as_box(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    if b.shape != (3, 2) or np.any(b[:, 1] <= b[:, 0]):
        raise GridError(f"invalid box {box}")
    return b


def _snap_index(value: float, lo: float, h: float, tol: float, what: str) -> int:
    t = (value - lo) / h
    i = int(round(t))
    if abs(t - i) * h > tol:
        raise GridError(f"{what}: coordinate {value} is not on a grid plane "
                        f"(pitch {h}, offset {abs(t - i) * h:.3e})")
    return i

def _point_in_box(pts: np.ndarray, box, tol: float = 0.0) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    return np.all((pts >= box[:, 0] - tol) & (pts <= box[:, 1] + tol), axis=1)


def _assign_patches(centers: np.ndarray, specs, tol: float) -> np.ndarray:
    out = np.full(centers.shape[0], NOFLOW_PATCH.id, dtype=object)
    unset = np.ones(centers.shape[0], dtype=bool)
    for spec in specs:
        if spec.box is None:
            hit = unset.copy()
        else:
            hit = unset & _point_in_box(centers, spec.box, tol)
        out[hit] = spec.id
        unset &= ~hit
    return out


def _patch_registry(specs) -> dict[str, BoundaryPatch]:
    patches = {NOFLOW_PATCH.id: NOFLOW_PATCH}
    for spec in specs:
        if spec.kind not in ("dirichlet", "neumann", "noflow"):
            raise GridError(f"unknown patch kind {spec.kind!r}")
        if spec.id in patches and spec.id != NOFLOW_PATCH.id:
            raise GridError(f"duplicate patch id {spec.id!r}")
        patches[spec.id] = BoundaryPatch(spec.id, spec.kind, spec.value)
    return patches


class _CartesianBuild:
    """Workspace for the structured builder; produces a MixedDimGrid."""

    def __init__(self, box, n, fractures, region_boxes, eps, default_region):
        self.box = _as_box(box)
        self.n = np.asarray(n, dtype=np.int64)
        if np.any(self.n < 1):
            raise GridError(f"zero cell count in {n}")
        self.h = (self.box[:, 1] - self.box[:, 0]) / self.n
        self.diag = float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))
        self.tol = COINCIDENCE_RTOL * self.diag
        self.eps2, self.eps1, self.eps0 = eps
        self.fractures = [
            f if isinstance(f, FractureRect) else FractureRect(**f) for f in fractures
        ]
        self.region_boxes = list(region_boxes)
        self.default_region = default_region
        self.subdomains: list[Subdomain] = []
        self.mortars: dict[int, list[tuple]] = {0: [], 1: [], 2: []}

    # -- index helpers ------------------------------------------------------

    def cell_flat(self, i, j, k):
        ny, nz = self.n[1], self.n[2]
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def vertex_coord(self, iv) -> np.ndarray:
        return self.box[:, 0] + np.asarray(iv, dtype=np.float64) * self.h

    # -- fracture index data ------------------------------------------------

    def _fracture_indices(self):
        self.fr_idx = []
        for fi, fr in enumerate(self.fractures):
            a = fr.axis
            if a not in (0, 1, 2):
                raise GridError(f"fracture {fi}: bad axis {fr.axis}")
            b, c = [ax for ax in range(3) if ax != a]
            pi = _snap_index(fr.coord, self.box[a, 0], self.h[a], self.tol,
                             f"fracture {fi}")
            if pi <= 0 or pi >= self.n[a]:
                raise GridError(f"fracture {fi}: plane at {fr.coord} is on or "
                                "outside the domain boundary")
            (blo, bhi), (clo, chi) = fr.extent
            b0 = _snap_index(blo, self.box[b, 0], self.h[b], self.tol, f"fracture {fi}")
            b1 = _snap_index(bhi, self.box[b, 0], self.h[b], self.tol, f"fracture {fi}")
            c0 = _snap_index(clo, self.box[c, 0], self.h[c], self.tol, f"fracture {fi}")
            c1 = _snap_index(chi, self.box[c, 0], self.h[c], self.tol, f"fracture {fi}")
            if b1 <= b0 or c1 <= c0:
                raise GridError(f"fracture {fi}: empty extent")
            if b0 < 0 or b1 > self.n[b] or c0 < 0 or c1 > self.n[c]:
                raise GridError(f"fracture {fi}: extent outside the domain")
            self.fr_idx.append(dict(axis=a, b=b, c=c, pi=pi, b0=b0, b1=b1,
                                    c0=c0, c1=c1))

    # -- matrix -------------------------------------------------------------

    def _build_matrix(self):
        nx, ny, nz = self.n
        lo = self.box[:, 0]
        h = self.h
        ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        centers = np.stack([
            lo[0] + (ii.ravel() + 0.5) * h[0],
            lo[1] + (jj.ravel() + 0.5) * h[1],
            lo[2] + (kk.ravel() + 0.5) * h[2],
        ], axis=1)
        volume = float(np.prod(h))
        measures = np.full(nx * ny * nz, volume)
        tags = np.full(nx * ny * nz, self.default_region, dtype=object)
        for rbox, tag in self.region_boxes:
            tags[_point_in_box(centers, rbox, 0.0)] = tag

        # keep-mask per direction; fractures knock covered faces out
        keep = [np.ones((self.n[a] - 1,) + tuple(self.n[b] for b in range(3) if b != a),
                        dtype=bool) for a in range(3)]
        for fr in self.fr_idx:
            a, b, c = fr["axis"], fr["b"], fr["c"]
            order = sorted([(b, slice(fr["b0"], fr["b1"])),
                            (c, slice(fr["c0"], fr["c1"]))])
            sub = keep[a][fr["pi"] - 1]
            if not np.all(sub[order[0][1], order[1][1]]):
                raise GridError("overlapping fracture rectangles")
            sub[order[0][1], order[1][1]] = False

        owners, neighbors, areas, fcenters, faxes = [], [], [], [], []
        for a in range(3):
            b, c = [ax for ax in range(3) if ax != a]
            idx = np.nonzero(keep[a])
            # idx dims are ordered (a-interface, then remaining axes ascending)
            gi = {a: idx[0] + 1}
            rem = [ax for ax in range(3) if ax != a]
            gi[rem[0]] = idx[1]
            gi[rem[1]] = idx[2]
            own_idx = {ax: gi[ax].copy() for ax in range(3)}
            own_idx[a] = gi[a] - 1
            nb_idx = {ax: gi[ax].copy() for ax in range(3)}
            owners.append(self.cell_flat(own_idx[0], own_idx[1], own_idx[2]))
            neighbors.append(self.cell_flat(nb_idx[0], nb_idx[1], nb_idx[2]))
            areas.append(np.full(idx[0].size, h[b] * h[c]))
            fc = np.zeros((idx[0].size, 3))
            fc[:, a] = lo[a] + gi[a] * h[a]
            fc[:, b] = lo[b] + (gi[b] + 0.5) * h[b]
            fc[:, c] = lo[c] + (gi[c] + 0.5) * h[c]
            fcenters.append(fc)
            faxes.append(np.full(idx[0].size, a, dtype=np.int64))

        face_axis = np.concatenate(faxes)
        normals = np.zeros((face_axis.size, 3))
        normals[np.arange(face_axis.size), face_axis] = 1.0

        sd = Subdomain(
            id="matrix", dim=3, epsilon=1.0, centers=centers, measures=measures,
            region_tags=tags,
            face_owner=np.concatenate(owners),
            face_neighbor=np.concatenate(neighbors),
            face_area=np.concatenate(areas),
            face_center=np.concatenate(fcenters),
            face_normal=normals,
            face_axis=face_axis,
        )
        # boundary faces on the hull
        b_cell, b_area, b_center, b_normal, b_axis = [], [], [], [], []
        for a in range(3):
            b, c = [ax for ax in range(3) if ax != a]
            jj, kk = np.meshgrid(np.arange(self.n[b]), np.arange(self.n[c]),
                                 indexing="ij")
            jj, kk = jj.ravel(), kk.ravel()
            for side, ia, na in ((0, 0, -1.0), (1, self.n[a] - 1, 1.0)):
                gidx = {a: np.full(jj.size, ia), b: jj, c: kk}
                b_cell.append(self.cell_flat(gidx[0], gidx[1], gidx[2]))
                b_area.append(np.full(jj.size, h[b] * h[c]))
                fc = np.zeros((jj.size, 3))
                fc[:, a] = self.box[a, side]
                fc[:, b] = lo[b] + (jj + 0.5) * h[b]
                fc[:, c] = lo[c] + (kk + 0.5) * h[c]
                b_center.append(fc)
                nr = np.zeros((jj.size, 3))
                nr[:, a] = na
                b_normal.append(nr)
                b_axis.append(np.full(jj.size, a, dtype=np.int64))
        sd.bface_cell = np.concatenate(b_cell)
        sd.bface_area = np.concatenate(b_area)
        sd.bface_center = np.concatenate(b_center)
        sd.bface_normal = np.concatenate(b_normal)
        sd.bface_axis = np.concatenate(b_axis)
        sd.bface_patch = np.full(sd.bface_cell.size, NOFLOW_PATCH.id, dtype=object)
        sd.locator = CartesianLocator(self.box[:, 0], h, self.n)
        self.subdomains.append(sd)

    # -- intersection lines and points --------------------------------------

    def _build_lines_points(self):
        # collect candidate line segments from non-coplanar fracture pairs
        segments: dict[tuple, list[tuple[int, int]]] = {}
        for i in range(len(self.fr_idx)):
            for j in range(i + 1, len(self.fr_idx)):
                A, B = self.fr_idx[i], self.fr_idx[j]
                if A["axis"] == B["axis"]:
                    continue
                a, b = A["axis"], B["axis"]
                t = 3 - a - b
                # A spans axis b over [Ab0, Ab1]; B's plane must sit inside
                Ab = (A["b0"], A["b1"]) if A["b"] == b else (A["c0"], A["c1"])
                Ba = (B["b0"], B["b1"]) if B["b"] == a else (B["c0"], B["c1"])
                if not (Ab[0] <= B["pi"] <= Ab[1] and Ba[0] <= A["pi"] <= Ba[1]):
                    continue
                At = (A["b0"], A["b1"]) if A["b"] == t else (A["c0"], A["c1"])
                Bt = (B["b0"], B["b1"]) if B["b"] == t else (B["c0"], B["c1"])
                t0, t1 = max(At[0], Bt[0]), min(At[1], Bt[1])
                if t1 <= t0:
                    continue
                fixed = [0, 0, 0]
                fixed[a], fixed[b], fixed[t] = A["pi"], B["pi"], -1
                segments.setdefault((t, tuple(fixed)), []).append((t0, t1))

        # merge overlapping / touching intervals per geometric line
        self.lines = []  # dicts with t, fixed, t0, t1, sd_index
        for (t, fixed), ivals in sorted(segments.items()):
            ivals = sorted(ivals)
            cur = list(ivals[0])
            merged = []
            for lo_, hi_ in ivals[1:]:
                if lo_ <= cur[1]:
                    cur[1] = max(cur[1], hi_)
                else:
                    merged.append(tuple(cur))
                    cur = [lo_, hi_]
            merged.append(tuple(cur))
            for t0, t1 in merged:
                self.lines.append(dict(t=t, fixed=fixed, t0=t0, t1=t1))

        # edge -> (line index, cell index) map
        self.edge_map: dict[tuple, tuple[int, int]] = {}
        for li, ln in enumerate(self.lines):
            t, fixed = ln["t"], list(ln["fixed"])
            for cell, ti in enumerate(range(ln["t0"], ln["t1"])):
                key = list(fixed)
                key[t] = ti
                self.edge_map[(t, tuple(key))] = (li, cell)

        # 0d points: vertices touched by >= 2 non-collinear lines
        vertex_dirs: dict[tuple, set[int]] = {}
        for ln in self.lines:
            t, fixed = ln["t"], list(ln["fixed"])
            for ti in range(ln["t0"], ln["t1"] + 1):
                v = list(fixed)
                v[t] = ti
                vertex_dirs.setdefault(tuple(v), set()).add(t)
        self.points = sorted(v for v, dirs in vertex_dirs.items() if len(dirs) >= 2)
        self.point_index = {v: pi for pi, v in enumerate(self.points)}

    def _emit_line_subdomains(self, matrix_sd_count_offset: int):
        """Create 1d subdomains, their interior/boundary faces and d=0
        couplings to intersection points. Returns sd index base for lines."""
        line_base = len(self.subdomains)
        h = self.h
        for li, ln in enumerate(self.lines):
            t, fixed = ln["t"], list(ln["fixed"])
            ncell = ln["t1"] - ln["t0"]
            centers = np.zeros((ncell, 3))
            for cell, ti in enumerate(range(ln["t0"], ln["t1"])):
                v = list(fixed)
                v[t] = ti
                centers[cell] = self.vertex_coord(v)
                centers[cell, t] += 0.5 * h[t]
            sd = Subdomain(
                id=f"line_{li}", dim=1, epsilon=self.eps1,
                centers=centers, measures=np.full(ncell, h[t]),
                region_tags=np.full(ncell, f"line_{li}", dtype=object),
            )
            f_own, f_nb, f_area, f_ctr, f_axis = [], [], [], [], []
            b_cell, b_area, b_ctr, b_normal, b_axis = [], [], [], [], []
            for ti in range(ln["t0"], ln["t1"] + 1):
                v = list(fixed)
                v[t] = ti
                vc = self.vertex_coord(v)
                at_point = tuple(v) in self.point_index
                left = ti - 1 - ln["t0"]   # cell below the vertex
                right = ti - ln["t0"]      # cell above the vertex
                interior = ln["t0"] < ti < ln["t1"]
                if at_point:
                    pidx = self.point_index[tuple(v)]
                    tnrm = np.zeros(3)
                    tnrm[t] = 1.0
                    for cell in ([left] if ti > ln["t0"] else []) + \
                                ([right] if ti < ln["t1"] else []):
                        self.mortars[0].append(
                            (line_base + li, cell, "point", pidx, 1.0,
                             0.5 * h[t], tuple(vc), tuple(tnrm)))
                elif interior:
                    f_own.append(left)
                    f_nb.append(right)
                    f_area.append(1.0)
                    f_ctr.append(vc)
                    f_axis.append(t)
                else:
                    # line endpoint: boundary face if on the hull, else a tip
                    on_hull = (abs(vc[t] - self.box[t, 0]) <= self.tol
                               or abs(vc[t] - self.box[t, 1]) <= self.tol)
                    if on_hull:
                        b_cell.append(left if ti == ln["t1"] else right)
                        b_area.append(1.0)
                        b_ctr.append(vc)
                        nr = np.zeros(3)
                        nr[t] = 1.0 if ti == ln["t1"] else -1.0
                        b_normal.append(nr)
                        b_axis.append(t)
            if f_own:
                sd.face_owner = np.asarray(f_own, dtype=np.int64)
                sd.face_neighbor = np.asarray(f_nb, dtype=np.int64)
                sd.face_area = np.asarray(f_area)
                sd.face_center = np.asarray(f_ctr)
                nrm = np.zeros((len(f_own), 3))
                nrm[:, t] = 1.0
                sd.face_normal = nrm
                sd.face_axis = np.asarray(f_axis, dtype=np.int64)
            if b_cell:
                sd.bface_cell = np.asarray(b_cell, dtype=np.int64)
                sd.bface_area = np.asarray(b_area)
                sd.bface_center = np.asarray(b_ctr)
                sd.bface_normal = np.asarray(b_normal)
                sd.bface_axis = np.asarray(b_axis, dtype=np.int64)
                sd.bface_patch = np.full(len(b_cell), NOFLOW_PATCH.id, dtype=object)
            self.subdomains.append(sd)
        self.line_base = line_base

    def _emit_point_subdomains(self):
        point_base = len(self.subdomains)
        for pi, v in enumerate(self.points):
            vc = self.vertex_coord(v)
            sd = Subdomain(
                id=f"point_{pi}", dim=0, epsilon=self.eps0,
                centers=vc.reshape(1, 3), measures=np.ones(1),
                region_tags=np.full(1, f"point_{pi}", dtype=object),
            )
            self.subdomains.append(sd)
        # fix up the provisional "point" markers in the d=0 couplings
        self.mortars[0] = [
            (hs, hc, point_base + lc_idx, 0, ar, hd, ce, nr)
            for (hs, hc, _marker, lc_idx, ar, hd, ce, nr) in self.mortars[0]
        ]

    # -- fractures ----------------------------------------------------------

    def _build_fractures(self):
        h = self.h
        lo = self.box[:, 0]
        for fi, fr in enumerate(self.fr_idx):
            a, b, c = fr["axis"], fr["b"], fr["c"]
            pi, b0, b1, c0, c1 = fr["pi"], fr["b0"], fr["b1"], fr["c0"], fr["c1"]
            nb, ncc = b1 - b0, c1 - c0
            area = h[b] * h[c]
            uu, vv = np.meshgrid(np.arange(nb), np.arange(ncc), indexing="ij")
            uu, vv = uu.ravel(), vv.ravel()
            centers = np.zeros((nb * ncc, 3))
            centers[:, a] = lo[a] + pi * h[a]
            centers[:, b] = lo[b] + (b0 + uu + 0.5) * h[b]
            centers[:, c] = lo[c] + (c0 + vv + 0.5) * h[c]
            sd = Subdomain(
                id=f"fracture_{fi}", dim=2, epsilon=self.eps2,
                centers=centers, measures=np.full(nb * ncc, area),
                region_tags=np.full(nb * ncc, f"fracture_{fi}", dtype=object),
                plane_axis=a,
            )
            sd.locator = FracturePlaneLocator(
                a, lo[a] + pi * h[a], b, c, lo[b] + b0 * h[b], lo[c] + c0 * h[c],
                h[b], h[c], nb, ncc, self.tol)
            sd_idx = len(self.subdomains)
            self.subdomains.append(sd)

            # mortar couplings to the two matrix neighbours of each covered face
            plane_nrm = np.zeros(3)
            plane_nrm[a] = 1.0
            for side_off in (0, 1):
                gidx = {a: np.full(uu.size, pi - 1 + side_off),
                        b: b0 + uu, c: c0 + vv}
                mcells = self.cell_flat(gidx[0], gidx[1], gidx[2])
                for fc_local in range(uu.size):
                    self.mortars[2].append(
                        (0, int(mcells[fc_local]), sd_idx, fc_local, area,
                         0.5 * h[a], tuple(centers[fc_local]), tuple(plane_nrm)))

            # in-plane faces / couplings to intersection lines / hull faces
            f_own, f_nb, f_area, f_ctr, f_axis, f_nrm = [], [], [], [], [], []
            b_cell, b_area, b_ctr, b_nrm, b_axis = [], [], [], [], []

            def edge_key(edge_axis, bu, cv):
                v = [0, 0, 0]
                v[a], v[b], v[c] = pi, bu, cv
                return (edge_axis, tuple(v))

            def edge_center(edge_axis, bu, cv):
                v = [0, 0, 0]
                v[a], v[b], v[c] = pi, bu, cv
                ec = self.vertex_coord(v)
                ec[edge_axis] += 0.5 * h[edge_axis]
                return ec

            for u in range(nb):
                for v in range(ncc):
                    cell = u * ncc + v
                    # edges: (dir axis, vertex b index, vertex c index,
                    #         sign -1 low / +1 high, transverse axis)
                    edges = (
                        (c, b0 + u, c0 + v, -1, b),       # u-low, along c
                        (c, b0 + u + 1, c0 + v, +1, b),   # u-high
                        (b, b0 + u, c0 + v, -1, c),       # v-low, along b
                        (b, b0 + u, c0 + v + 1, +1, c),   # v-high
                    )
                    for eaxis, bu, cv, sign, taxis in edges:
                        key = edge_key(eaxis, bu, cv)
                        ec = edge_center(eaxis, bu, cv)
                        if key in self.edge_map:
                            li, lcell = self.edge_map[key]
                            tnrm = np.zeros(3)
                            tnrm[taxis] = 1.0
                            self.mortars[1].append(
                                (sd_idx, cell, self.line_base + li, lcell,
                                 h[eaxis], 0.5 * h[taxis], tuple(ec), tuple(tnrm)))
                            continue
                        # interior in-plane adjacency (emit once, on high side)
                        tv = bu - b0 if taxis == b else cv - c0
                        ntrans = nb if taxis == b else ncc
                        if 0 < tv < ntrans:
                            if sign > 0:
                                if taxis == b:
                                    nb_cell = (u + 1) * ncc + v
                                else:
                                    nb_cell = u * ncc + (v + 1)
                                f_own.append(cell)
                                f_nb.append(nb_cell)
                                f_area.append(h[eaxis])
                                f_ctr.append(ec)
                                f_axis.append(eaxis)
                                nrm = np.zeros(3)
                                nrm[taxis] = 1.0
                                f_nrm.append(nrm)
                            continue
                        # extent boundary: hull -> boundary face, else a tip
                        on_hull = (abs(ec[taxis] - self.box[taxis, 0]) <= self.tol
                                   or abs(ec[taxis] - self.box[taxis, 1]) <= self.tol)
                        if on_hull:
                            b_cell.append(cell)
                            b_area.append(h[eaxis])
                            b_ctr.append(ec)
                            nrm = np.zeros(3)
                            nrm[taxis] = float(sign)
                            b_nrm.append(nrm)
                            b_axis.append(eaxis)
            if f_own:
                sd.face_owner = np.asarray(f_own, dtype=np.int64)
                sd.face_neighbor = np.asarray(f_nb, dtype=np.int64)
                sd.face_area = np.asarray(f_area)
                sd.face_center = np.asarray(f_ctr)
                sd.face_normal = np.asarray(f_nrm)
                sd.face_axis = np.asarray(f_axis, dtype=np.int64)
            if b_cell:
                sd.bface_cell = np.asarray(b_cell, dtype=np.int64)
                sd.bface_area = np.asarray(b_area)
                sd.bface_center = np.asarray(b_ctr)
                sd.bface_normal = np.asarray(b_nrm)
                sd.bface_axis = np.asarray(b_axis, dtype=np.int64)
                sd.bface_patch = np.full(len(b_cell), NOFLOW_PATCH.id, dtype=object)

    def build(self) -> MixedDimGrid:
        self._fracture_indices()
        self._build_matrix()
        self._build_lines_points()
        self._emit_line_subdomains(1)
        self._build_fractures()
        self._emit_point_subdomains()
        mortars = {d: MortarBlock.from_lists(recs)
                   for d, recs in self.mortars.items()}
        grid = MixedDimGrid(self.subdomains, mortars, {NOFLOW_PATCH.id: NOFLOW_PATCH},
                            domain_box=self.box)
        for sd in grid.subdomains:
            sd.validate()
        return grid


def build_cartesian_grid(box, n, fractures=(), region_boxes=(),
                         eps=(1.0, 1.0, 1.0), patch_specs=(),
                         default_region="matrix") -> MixedDimGrid:
    """Structured hexahedral mixed-dimensional grid.

    Fracture rectangles must lie on grid coordinate planes and their extents
    on cell boundaries; region boxes are applied to cell centers in order.
    Intersection lines (1d) and points (0d) are derived from the fracture
    arrangement, matrix connectivity through covered faces is replaced by
    mortar couplings on both sides.
    """
    build = _CartesianBuild(box, n, fractures, region_boxes, eps, default_region)
    grid = build.build()
    apply_patches(grid, patch_specs)
    return grid


def apply_patches(grid: MixedDimGrid, patch_specs) -> None:
    """(Re)assign every boundary face of every subdomain to a patch by face
    center membership, and register the patch set on the grid."""
    grid.patches.clear()
    grid.patches.update(_patch_registry(patch_specs))
    tol = COINCIDENCE_RTOL
    if grid.domain_box is not None:
        tol *= float(np.linalg.norm(grid.domain_box[:, 1] - grid.domain_box[:, 0]))
    for sd in grid.subdomains:
        if sd.bface_cell.size:
            sd.bface_patch = _assign_patches(sd.bface_center, patch_specs, tol)


# ---------------------------------------------------------------------------
# sheared builder


def build_sheared_grid(box, n, plane, region_boxes=(), eps=(1.0, 1.0, 1.0),
                       patch_specs=(), default_region="matrix") -> MixedDimGrid:
    """Hexahedral grid conforming to a single inclined fracture plane
    z = z0 + s*x via the shear (x, y, z) -> (x, y, z + s*x).

    The reference plane z = z0 must coincide with a grid layer interface and
    the inclined plane must stay strictly inside the vertical extent over the
    whole domain footprint. Region boxes are evaluated in reference (unsheared)
    coordinates; patch boxes are evaluated on sheared (physical) face centers.
    Cell volumes equal the unsheared volumes (shear preserves volume).
    """
    z0, s = plane
    bx = _as_box(box)
    for x_end in (bx[0, 0], bx[0, 1]):
        z_end = z0 + s * x_end
        if not (bx[2, 0] < z_end < bx[2, 1]):
            raise GridError(
                f"fracture plane z = {z0} + {s}*x exits the box at x = {x_end}")
    fr = FractureRect(axis=2, coord=z0,
                      extent=((bx[0, 0], bx[0, 1]), (bx[1, 0], bx[1, 1])))
    build = _CartesianBuild(bx, n, [fr], region_boxes, eps, default_region)
    grid = build.build()
    if s != 0.0:
        _apply_shear(grid, s)
    apply_patches(grid, patch_specs)
    return grid


def _shear_points(pts: np.ndarray, s: float) -> None:
    pts[:, 2] += s * pts[:, 0]


def _apply_shear(grid: MixedDimGrid, s: float) -> None:
    f = math.sqrt(1.0 + s * s)
    tilted_normal = np.array([-s, 0.0, 1.0]) / f
    for sd in grid.subdomains:
        _shear_points(sd.centers, s)
        if sd.face_center.size:
            _shear_points(sd.face_center, s)
        if sd.bface_center.size:
            _shear_points(sd.bface_center, s)
        if sd.dim == 3:
            zf = sd.face_axis == 2
            sd.face_area[zf] *= f
            sd.face_normal[zf] = tilted_normal
            zb = sd.bface_axis == 2
            sd.bface_area[zb] *= f
            signs = sd.bface_normal[zb, 2:3]
            sd.bface_normal[zb] = signs * tilted_normal
            sd.locator.shear = s
        elif sd.dim == 2:
            if sd.plane_axis != 2:
                raise GridError("shear supports z-normal fractures only")
            sd.measures *= f
            xe = sd.face_axis == 0  # in-plane edges along x tilt with the plane
            sd.face_area[xe] *= f
            ynrm = sd.face_normal[:, 1] != 0.0
            # u-adjacency (normal ~x) tilts; v-adjacency (normal y) is unchanged
            sd.face_normal[~ynrm & ~xe] = np.array([1.0, 0.0, s]) / f
            xb = sd.bface_axis == 0
            sd.bface_area[xb] *= f
            sd.locator.shear = s
        else:
            raise GridError("shear supports a single plane fracture only")
    blk = grid.mortars[2]
    blk.area *= f
    blk.high_half_distance /= f
    blk.normal[:] = tilted_normal
    _shear_points(blk.center, s)
