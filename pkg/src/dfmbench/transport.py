"""Passive tracer transport on a mixed-dimensional flow field.

Cell-centered finite volumes with first-order donor-cell (upwind) fluxes and
implicit Euler time stepping. The step matrix M/dt + U has positive diagonal
and non-positive off-diagonals, so concentrations stay within the bounds set
by the initial and inflow data. Pore volumes are aperture-scaled
(eps_d * measure * porosity), consistently with the flow fluxes being m^3/s
in every dimension.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dfmbench import sparsela
from dfmbench.flow import DofMap, FlowSolution
from dfmbench.grid import MixedDimGrid


class TransportError(ValueError):
    """Raised for missing porosities or non-positive time steps."""


@dataclass
class TransportParams:
    """porosity maps subdomain ids, matrix region tags, or dimension group
    keys ("3d".."0d") to porosities; lookup order is id, tag, group.
    inlet_c maps boundary patch ids to the inflow concentration (default 0)."""

    porosity: dict
    dt: float
    n_steps: int
    inlet_c: dict | None = None

    def __post_init__(self):
        if self.dt <= 0.0 or self.n_steps < 0:
            raise TransportError("need dt > 0 and n_steps >= 0")
        if self.inlet_c is None:
            self.inlet_c = {}


@dataclass
class TransportState:
    time: float
    step_index: int
    conc: np.ndarray  # flat over the flow dof map
    dof_map: DofMap

    def conc_of(self, sd_pos_or_id) -> np.ndarray:
        pos = (self.dof_map.of_id(sd_pos_or_id)
               if isinstance(sd_pos_or_id, str) else sd_pos_or_id)
        return self.conc[self.dof_map.index(pos)]


def _cell_porosity(sd, params: TransportParams) -> np.ndarray:
    group = f"{sd.dim}d"
    if sd.id in params.porosity:
        return np.full(sd.n_cells, float(params.porosity[sd.id]))
    out = np.empty(sd.n_cells)
    for tag in np.unique(sd.region_tags.astype(str)):
        if tag in params.porosity:
            phi = params.porosity[tag]
        elif group in params.porosity:
            phi = params.porosity[group]
        else:
            raise TransportError(f"no porosity for {sd.id!r} (region {tag!r})")
        out[sd.region_tags == tag] = float(phi)
    return out


@dataclass
class TransportDiscretization:
    dof_map: DofMap
    mass_over_dt: np.ndarray  # pore volume / dt per cell
    A: sparsela.CsrMatrix  # M/dt + U
    b: np.ndarray  # inflow boundary contribution per step

    _lu = None  # cached dense factorization for small systems


def assemble_transport(grid: MixedDimGrid, sol: FlowSolution,
                       params: TransportParams) -> TransportDiscretization:
    dm = sol.dof_map
    mass = np.zeros(dm.n)
    for pos, sd in enumerate(grid.subdomains):
        phi = _cell_porosity(sd, params)
        mass[dm.index(pos)] = sd.epsilon * sd.measures * phi
    if np.any(mass <= 0.0):
        raise TransportError("non-positive pore volume")
    mass_over_dt = mass / params.dt

    buf = sparsela.TripletBuffer(dm.n)
    buf.add(np.arange(dm.n), np.arange(dm.n), mass_over_dt)
    b = np.zeros(dm.n)

    def upwind(gi, gj, q):
        qp = np.maximum(q, 0.0)
        qm = np.minimum(q, 0.0)
        buf.add(gi, gi, qp)
        buf.add(gi, gj, qm)
        buf.add(gj, gj, -qm)
        buf.add(gj, gi, -qp)

    for pos, sd in enumerate(grid.subdomains):
        base = int(dm.offsets[pos])
        if sd.n_faces:
            upwind(base + sd.face_owner, base + sd.face_neighbor,
                   sol.face_flux[pos])
        if sd.bface_cell.size:
            q = sol.boundary_flux[pos]  # outward positive
            gc = base + sd.bface_cell
            out = q > 0.0
            if np.any(out):
                buf.add(gc[out], gc[out], q[out])
            inflow = q < 0.0
            if np.any(inflow):
                cbar = np.array([params.inlet_c.get(p, 0.0)
                                 for p in sd.bface_patch[inflow]])
                np.add.at(b, gc[inflow], -q[inflow] * cbar)
    for d, blk in grid.mortars.items():
        if blk.n == 0:
            continue
        upwind(dm.offsets[blk.high_sd] + blk.high_cell,
               dm.offsets[blk.low_sd] + blk.low_cell, sol.mortar_flux[d])
    return TransportDiscretization(dm, mass_over_dt, buf.to_csr(), b)


def step(disc: TransportDiscretization, conc: np.ndarray, solver: str = "auto",
         tol: float = 1e-12) -> tuple[np.ndarray, sparsela.SolveReport]:
    """One implicit Euler step: solve (M/dt + U) c_next = (M/dt) c + b."""
    rhs = disc.mass_over_dt * conc + disc.b
    if solver == "auto":
        solver = "lu" if disc.A.n <= 2000 else "bicgstab"
    if solver == "lu":
        import scipy.linalg
        if disc._lu is None:
            disc._lu = scipy.linalg.lu_factor(disc.A.to_dense())
        c = scipy.linalg.lu_solve(disc._lu, rhs)
        res = float(np.linalg.norm(disc.A @ c - rhs))
        scale = float(np.linalg.norm(rhs)) or 1.0
        return c, sparsela.SolveReport(1, res / scale, True)
    if solver == "bicgstab":
        return sparsela.solve_bicgstab(disc.A, rhs, tol=tol)
    raise TransportError(f"unknown solver {solver!r}")


def run_transport(grid: MixedDimGrid, sol: FlowSolution,
                  params: TransportParams, c0: np.ndarray | None = None,
                  observer=None, solver: str = "auto",
                  tol: float = 1e-12) -> TransportState:
    """March n_steps implicit Euler steps from c0 (default zero).

    observer(state) is called on the initial state and after every step."""
    disc = assemble_transport(grid, sol, params)
    conc = np.zeros(disc.dof_map.n) if c0 is None else np.array(c0, dtype=float)
    state = TransportState(0.0, 0, conc, disc.dof_map)
    if observer is not None:
        observer(state)
    for k in range(1, params.n_steps + 1):
        conc, _ = step(disc, conc, solver=solver, tol=tol)
        state = TransportState(k * params.dt, k, conc, disc.dof_map)
        if observer is not None:
            observer(state)
    return state
