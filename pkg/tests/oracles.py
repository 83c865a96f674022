"""Independent reference implementations used by the test suite.

Everything here is deliberately written with dense numpy arrays and explicit
loops, sharing no assembly code with the package, so that agreement between
the two is meaningful.
"""
import numpy as np


def dense_flow_system(grid, disc, patches):
    """Dense (A, b) from a FlowDiscretization's transmissibilities, built by
    explicit loops over faces and mortars."""
    offsets = disc.dof_map.offsets
    n = disc.dof_map.n
    A = np.zeros((n, n))
    b = np.zeros(n)
    for pos, sd in enumerate(grid.subdomains):
        base = offsets[pos]
        for f in range(sd.n_faces):
            i = base + sd.face_owner[f]
            j = base + sd.face_neighbor[f]
            t = disc.face_t[pos][f]
            A[i, i] += t
            A[j, j] += t
            A[i, j] -= t
            A[j, i] -= t
        for f in range(sd.bface_cell.size):
            i = base + sd.bface_cell[f]
            patch = patches[sd.bface_patch[f]]
            if patch.kind == "dirichlet":
                t = disc.bface_t[pos][f]
                A[i, i] += t
                b[i] += t * patch.value
            elif patch.kind == "neumann":
                b[i] -= patch.value * sd.bface_area[f]
    for d, blk in grid.mortars.items():
        t = disc.mortar_t[d]
        for m in range(blk.n):
            i = offsets[blk.high_sd[m]] + blk.high_cell[m]
            j = offsets[blk.low_sd[m]] + blk.low_cell[m]
            A[i, i] += t[m]
            A[j, j] += t[m]
            A[i, j] -= t[m]
            A[j, i] -= t[m]
    return A, b


def pore_volumes(grid, porosity):
    """Per-dof pore volume eps * measure * phi, resolving porosity by
    subdomain id, region tag, then dimension group."""
    out = []
    for sd in grid.subdomains:
        phi = np.empty(sd.n_cells)
        group = f"{sd.dim}d"
        for c in range(sd.n_cells):
            tag = str(sd.region_tags[c])
            if sd.id in porosity:
                phi[c] = porosity[sd.id]
            elif tag in porosity:
                phi[c] = porosity[tag]
            else:
                phi[c] = porosity[group]
        out.append(sd.epsilon * sd.measures * phi)
    return np.concatenate(out)


def dense_upwind_system(grid, sol, porosity, inlet_c):
    """Dense donor-cell upwind operator U and inflow vector r such that
    implicit Euler reads (diag(pv)/dt + U) c1 = diag(pv)/dt c0 + r."""
    offsets = sol.dof_map.offsets
    n = sol.dof_map.n
    U = np.zeros((n, n))
    r = np.zeros(n)
    for pos, sd in enumerate(grid.subdomains):
        base = offsets[pos]
        for f in range(sd.n_faces):
            q = sol.face_flux[pos][f]
            i = base + sd.face_owner[f]
            j = base + sd.face_neighbor[f]
            donor = i if q > 0.0 else j
            U[i, donor] += q
            U[j, donor] -= q
        for f in range(sd.bface_cell.size):
            q = sol.boundary_flux[pos][f]
            i = base + sd.bface_cell[f]
            if q > 0.0:
                U[i, i] += q
            elif q < 0.0:
                r[i] += -q * inlet_c.get(str(sd.bface_patch[f]), 0.0)
    for d, blk in grid.mortars.items():
        for m in range(blk.n):
            lam = sol.mortar_flux[d][m]
            i = offsets[blk.high_sd[m]] + blk.high_cell[m]
            j = offsets[blk.low_sd[m]] + blk.low_cell[m]
            donor = i if lam > 0.0 else j
            U[i, donor] += lam
            U[j, donor] -= lam
    return U, r


def dense_transport_march(grid, sol, params, n_steps=None):
    """March the implicit-upwind recurrence with dense numpy solves."""
    pv = pore_volumes(grid, params.porosity)
    U, r = dense_upwind_system(grid, sol, params.porosity, params.inlet_c)
    dt = params.dt
    A = np.diag(pv / dt) + U
    c = np.zeros(pv.size)
    for _ in range(params.n_steps if n_steps is None else n_steps):
        c = np.linalg.solve(A, pv / dt * c + r)
    return c


def mass_budget_errors(grid, sol, params, solver="auto"):
    """Relative per-step mass balance defects of the package's own march:
    |pv.(c1 - c0) - dt (inflow(c1) - outflow(c1))| / (dt * inflow rate)."""
    from dfmbench.transport import run_transport

    pv = pore_volumes(grid, params.porosity)
    U, r = dense_upwind_system(grid, sol, params.porosity, params.inlet_c)
    states = []
    run_transport(grid, sol, params, observer=states.append, solver=solver)
    errors = []
    for prev, cur in zip(states, states[1:]):
        dm = float(pv @ (cur.conc - prev.conc))
        in_rate = float(r.sum())
        out_rate = float(U.sum(axis=0) @ cur.conc)
        scale = params.dt * max(in_rate, abs(out_rate), 1e-300)
        errors.append(abs(dm - params.dt * (in_rate - out_rate)) / scale)
    return np.array(errors)
