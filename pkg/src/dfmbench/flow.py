"""Single-phase incompressible Darcy flow on a mixed-dimensional grid.

Cell-centered two-point flux approximation on every subdomain, with the
normal (mortar) couplings eliminated into the cell system: the coupling
transmissibility combines the half-cell resistance on the high-dimensional
side with the interface resistance 1/kappa in series. The assembled system
is symmetric positive definite; the solution carries reconstructed face,
boundary and coupling fluxes (m^3/s in every dimension, since conductivities
are stored in their aperture-scaled effective form).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.csgraph as csgraph

from dfmbench import sparsela
from dfmbench.grid import MixedDimGrid, Subdomain


class FlowError(ValueError):
    """Raised for missing parameters or non-solvable configurations."""


def effective_tangential_conductivity(k_eq: float, aperture: float, dim: int) -> float:
    """Aperture-scaled conductivity eps_d * k_eq with eps_d = a**(3 - d)."""
    return aperture ** (3 - dim) * k_eq


def effective_normal_conductivity(k_eq: float, aperture: float, dim_low: int) -> float:
    """Interface conductivity eps_{d+1} * (2 / a) * k_eq for couplings onto a
    d-dimensional subdomain; eps_{d+1} = a**(2 - d)."""
    return aperture ** (2 - dim_low) * (2.0 / aperture) * k_eq


@dataclass
class FlowParams:
    """Effective conductivities and sources.

    matrix_k maps matrix region tags to a scalar or a diagonal (Kx, Ky, Kz);
    tangential_k maps lower-dimensional subdomain ids to their effective
    in-plane conductivity; normal_k maps a low subdomain id to the effective
    interface conductivity of couplings onto it. source maps subdomain ids to
    per-cell volumetric rates (m^3/s)."""

    matrix_k: dict
    tangential_k: dict = field(default_factory=dict)
    normal_k: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)


@dataclass
class DofMap:
    """Flat dof layout: subdomains in grid order, cells in subdomain order."""

    offsets: np.ndarray  # (n_sd + 1,)
    ids: list

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    def index(self, sd_pos: int, cells=None):
        base = int(self.offsets[sd_pos])
        if cells is None:
            return np.arange(base, int(self.offsets[sd_pos + 1]))
        return base + np.asarray(cells)

    def of_id(self, sd_id: str) -> int:
        return self.ids.index(sd_id)


def build_dof_map(grid: MixedDimGrid) -> DofMap:
    offsets = np.zeros(len(grid.subdomains) + 1, dtype=np.int64)
    for i, sd in enumerate(grid.subdomains):
        offsets[i + 1] = offsets[i] + sd.n_cells
    return DofMap(offsets, [sd.id for sd in grid.subdomains])


def _cell_conductivity(sd: Subdomain, params: FlowParams):
    """Per-cell conductivity: (nc, 3) diagonal for the matrix, (nc,) scalar
    for fractures and intersection lines, None for points."""
    if sd.dim == 3:
        out = np.empty((sd.n_cells, 3))
        for tag in np.unique(sd.region_tags.astype(str)):
            if tag not in params.matrix_k:
                raise FlowError(f"no matrix conductivity for region {tag!r}")
            k = np.asarray(params.matrix_k[tag], dtype=np.float64)
            out[sd.region_tags == tag] = k  # broadcasts scalars to (.., 3)
        return out
    if sd.dim == 0:
        return None
    if sd.id not in params.tangential_k:
        raise FlowError(f"no tangential conductivity for {sd.id!r}")
    return np.full(sd.n_cells, float(params.tangential_k[sd.id]))


@dataclass
class FlowDiscretization:
    """Reusable transmissibilities: interior faces and Dirichlet boundary
    faces per subdomain, and one array per mortar block."""

    dof_map: DofMap
    face_t: list  # per sd: (n_faces,)
    bface_t: list  # per sd: (n_bfaces,) zero on non-Dirichlet faces
    mortar_t: dict  # d -> (n,)


def discretize_flow(grid: MixedDimGrid, params: FlowParams) -> FlowDiscretization:
    dof_map = build_dof_map(grid)
    cell_k = [_cell_conductivity(sd, params) for sd in grid.subdomains]
    face_t, bface_t = [], []
    for sd, ck in zip(grid.subdomains, cell_k):
        if sd.n_faces:
            own, nbr = sd.face_owner, sd.face_neighbor
            if sd.dim == 3:
                k_own = _normal_component_rows(ck[own], sd.face_normal)
                k_nbr = _normal_component_rows(ck[nbr], sd.face_normal)
            else:
                k_own, k_nbr = ck[own], ck[nbr]
            d_own = np.linalg.norm(sd.centers[own] - sd.face_center, axis=1)
            d_nbr = np.linalg.norm(sd.centers[nbr] - sd.face_center, axis=1)
            t_own = sd.face_area * k_own / d_own
            t_nbr = sd.face_area * k_nbr / d_nbr
            face_t.append(t_own * t_nbr / (t_own + t_nbr))
        else:
            face_t.append(np.zeros(0))
        if sd.bface_cell.size:
            cells = sd.bface_cell
            if sd.dim == 3:
                k_b = _normal_component_rows(ck[cells], sd.bface_normal)
            else:
                k_b = ck[cells]
            dist = np.linalg.norm(sd.centers[cells] - sd.bface_center, axis=1)
            t_b = sd.bface_area * k_b / dist
            kinds = np.array([grid.patches[p].kind for p in sd.bface_patch])
            t_b[kinds != "dirichlet"] = 0.0
            bface_t.append(t_b)
        else:
            bface_t.append(np.zeros(0))

    mortar_t = {}
    for d, blk in grid.mortars.items():
        if blk.n == 0:
            mortar_t[d] = np.zeros(0)
            continue
        t = np.empty(blk.n)
        for hs in np.unique(blk.high_sd):
            sel = blk.high_sd == hs
            sd = grid.subdomains[hs]
            ck = cell_k[hs]
            if sd.dim == 3:
                k_h = _normal_component_rows(ck[blk.high_cell[sel]], blk.normal[sel])
            else:
                k_h = ck[blk.high_cell[sel]]
            kappa = np.empty(sel.sum())
            for i, ls in enumerate(np.where(sel)[0]):
                low_id = grid.subdomains[blk.low_sd[ls]].id
                if low_id not in params.normal_k:
                    raise FlowError(f"no normal conductivity for {low_id!r}")
                kappa[i] = params.normal_k[low_id]
            t[sel] = blk.area[sel] / (blk.high_half_distance[sel] / k_h + 1.0 / kappa)
        mortar_t[d] = t
    return FlowDiscretization(dof_map, face_t, bface_t, mortar_t)


def _normal_component_rows(k_rows: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """n . K . n per row for (nc, 3) diagonal conductivities."""
    return np.einsum("ij,ij->i", normals ** 2, k_rows)


def assemble_flow(grid: MixedDimGrid, params: FlowParams,
                  disc: FlowDiscretization | None = None):
    """Assemble the SPD cell-centered system. Returns (A, rhs, disc)."""
    if disc is None:
        disc = discretize_flow(grid, params)
    dm = disc.dof_map
    buf = sparsela.TripletBuffer(dm.n)
    rhs = np.zeros(dm.n)
    for pos, sd in enumerate(grid.subdomains):
        base = int(dm.offsets[pos])
        t = disc.face_t[pos]
        if t.size:
            gi = base + sd.face_owner
            gj = base + sd.face_neighbor
            buf.add(gi, gi, t)
            buf.add(gj, gj, t)
            buf.add(gi, gj, -t)
            buf.add(gj, gi, -t)
        if sd.bface_cell.size:
            gc = base + sd.bface_cell
            tb = disc.bface_t[pos]
            dir_mask = tb > 0.0
            if np.any(dir_mask):
                vals = np.array([grid.patches[p].value
                                 for p in sd.bface_patch[dir_mask]])
                buf.add(gc[dir_mask], gc[dir_mask], tb[dir_mask])
                np.add.at(rhs, gc[dir_mask], tb[dir_mask] * vals)
            kinds = np.array([grid.patches[p].kind for p in sd.bface_patch])
            neu = kinds == "neumann"
            if np.any(neu):
                vals = np.array([grid.patches[p].value for p in sd.bface_patch[neu]])
                np.add.at(rhs, gc[neu], -vals * sd.bface_area[neu])
        if sd.id in params.source:
            rhs[dm.index(pos)] += np.asarray(params.source[sd.id])
    for d, blk in grid.mortars.items():
        if blk.n == 0:
            continue
        t = disc.mortar_t[d]
        gh = dm.offsets[blk.high_sd] + blk.high_cell
        gl = dm.offsets[blk.low_sd] + blk.low_cell
        buf.add(gh, gh, t)
        buf.add(gl, gl, t)
        buf.add(gh, gl, -t)
        buf.add(gl, gh, -t)
    return buf.to_csr(), rhs, disc


def _check_solvable(grid: MixedDimGrid, A: sparsela.CsrMatrix,
                    disc: FlowDiscretization) -> None:
    """Every connected component of the coupled grid must see a Dirichlet
    face, otherwise the system is singular."""
    n = disc.dof_map.n
    m = sps.csr_matrix((np.ones_like(A.data), A.indices, A.indptr), shape=(n, n))
    ncomp, labels = csgraph.connected_components(m, directed=False)
    anchored = np.zeros(ncomp, dtype=bool)
    for pos, sd in enumerate(grid.subdomains):
        tb = disc.bface_t[pos]
        if tb.size and np.any(tb > 0.0):
            cells = disc.dof_map.offsets[pos] + sd.bface_cell[tb > 0.0]
            anchored[np.unique(labels[cells])] = True
    if not np.all(anchored):
        bad = int(np.argmin(anchored))
        members = [grid.subdomains[pos].id
                   for pos in range(len(grid.subdomains))
                   if np.any(labels[disc.dof_map.index(pos)] == bad)]
        raise FlowError(
            "singular flow system: component with no Dirichlet boundary "
            f"(subdomains {members})")


@dataclass
class FlowSolution:
    head: np.ndarray  # flat dof vector
    dof_map: DofMap
    face_flux: list  # per sd: (n_faces,) owner -> neighbor positive, m^3/s
    boundary_flux: list  # per sd: (n_bfaces,) outward positive, m^3/s
    mortar_flux: dict  # d -> (n,) high -> low positive, m^3/s
    report: sparsela.SolveReport
    disc: FlowDiscretization

    def head_of(self, sd_pos_or_id) -> np.ndarray:
        pos = (self.dof_map.of_id(sd_pos_or_id)
               if isinstance(sd_pos_or_id, str) else sd_pos_or_id)
        return self.head[self.dof_map.index(pos)]


def solve_flow(grid: MixedDimGrid, params: FlowParams, tol: float = 1e-12,
               solver: str = "auto") -> FlowSolution:
    """Assemble and solve; reconstruct all fluxes.

    solver: "cg" (Jacobi-preconditioned), "lu" (dense, n <= 2000) or "auto"
    (lu for small systems, cg otherwise)."""
    A, rhs, disc = assemble_flow(grid, params)
    _check_solvable(grid, A, disc)
    if solver == "auto":
        solver = "lu" if A.n <= 2000 else "cg"
    if solver == "lu":
        h = sparsela.solve_dense_lu(A, rhs)
        res = float(np.linalg.norm(A @ h - rhs))
        scale = float(np.linalg.norm(rhs)) or 1.0
        report = sparsela.SolveReport(1, res / scale, True)
    elif solver == "cg":
        h, report = sparsela.solve_cg(A, rhs, tol=tol)
    else:
        raise FlowError(f"unknown solver {solver!r}")
    dm = disc.dof_map

    face_flux, boundary_flux = [], []
    for pos, sd in enumerate(grid.subdomains):
        hv = h[dm.index(pos)]
        if sd.n_faces:
            face_flux.append(disc.face_t[pos] * (hv[sd.face_owner] - hv[sd.face_neighbor]))
        else:
            face_flux.append(np.zeros(0))
        if sd.bface_cell.size:
            bf = np.zeros(sd.bface_cell.size)
            tb = disc.bface_t[pos]
            dir_mask = tb > 0.0
            if np.any(dir_mask):
                vals = np.array([grid.patches[p].value
                                 for p in sd.bface_patch[dir_mask]])
                bf[dir_mask] = tb[dir_mask] * (hv[sd.bface_cell[dir_mask]] - vals)
            kinds = np.array([grid.patches[p].kind for p in sd.bface_patch])
            neu = kinds == "neumann"
            if np.any(neu):
                vals = np.array([grid.patches[p].value for p in sd.bface_patch[neu]])
                bf[neu] = vals * sd.bface_area[neu]
            boundary_flux.append(bf)
        else:
            boundary_flux.append(np.zeros(0))
    mortar_flux = {}
    for d, blk in grid.mortars.items():
        if blk.n == 0:
            mortar_flux[d] = np.zeros(0)
            continue
        hh = h[dm.offsets[blk.high_sd] + blk.high_cell]
        hl = h[dm.offsets[blk.low_sd] + blk.low_cell]
        mortar_flux[d] = disc.mortar_t[d] * (hh - hl)
    return FlowSolution(h, dm, face_flux, boundary_flux, mortar_flux, report, disc)


def check_conservation(grid: MixedDimGrid, sol: FlowSolution,
                       params: FlowParams | None = None) -> dict:
    """Max per-cell mass balance residual by dimension, in m^3/s."""
    dm = sol.dof_map
    residual = np.zeros(dm.n)
    for pos, sd in enumerate(grid.subdomains):
        base = int(dm.offsets[pos])
        if sd.n_faces:
            np.add.at(residual, base + sd.face_owner, sol.face_flux[pos])
            np.add.at(residual, base + sd.face_neighbor, -sol.face_flux[pos])
        if sd.bface_cell.size:
            np.add.at(residual, base + sd.bface_cell, sol.boundary_flux[pos])
        if params is not None and sd.id in params.source:
            residual[dm.index(pos)] -= np.asarray(params.source[sd.id])
    for d, blk in grid.mortars.items():
        if blk.n == 0:
            continue
        np.add.at(residual, dm.offsets[blk.high_sd] + blk.high_cell,
                  sol.mortar_flux[d])
        np.add.at(residual, dm.offsets[blk.low_sd] + blk.low_cell,
                  -sol.mortar_flux[d])
    out = {}
    for dim in (0, 1, 2, 3):
        vals = [np.abs(residual[dm.index(pos)])
                for pos, sd in enumerate(grid.subdomains) if sd.dim == dim]
        out[f"{dim}d"] = float(np.max(np.concatenate(vals))) if vals else 0.0
    return out
