"""Per-subdomain workspaces: factorizations, right-hand sides, local solves.

Each subdomain owns its local mesh, DOF map, assembled blocks, sparse LU
factorizations (one per solve variant and time step), and the sparse trace
maps that connect its stress/velocity normal-trace DOFs to the interface
multiplier space.

Solve variants (unknown ordering in parentheses):

* ``biot``          (sigma, udot, gammadot, z, p): time-differenced coupled
                    step; row-1 couplings scaled by dt.
* ``biot_total``    (sigma, u, gamma, z, p): plain backward Euler, used by
                    the single-domain reference solver.
* ``elasticity``    (sigma, u, gamma): quasi-static mechanics.
* ``darcy``         (z, p): single flow step.
* ``velocity_mass`` (z,): velocity mass solve for the initial Darcy state.

"Bar" right-hand sides carry the problem data and previous-state terms with
zero interface multiplier; "star" right-hand sides carry only multiplier
terms.  The interface multiplier space has, per interface edge, four
displacement(-rate) slots (two components x two Legendre moments) and two
pressure slots, ordered (edge, component, moment); its basis is the
L2-orthonormal Legendre pair on each edge, so trace pairings are diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    Blocks,
    DataAssembler,
    MaterialField,
    ProblemData,
    apply_essential_rows,
    assemble_blocks,
    variant_matrix,
)
from .mesh import Decomposition, Subdomain
from .spaces import DofMap, build_dofmap, cell_geometry, multiplier_scales

# interface slots per edge: 4 displacement (component x moment) + 2 pressure
U_SLOTS = 4
P_SLOTS = 2
EDGE_SLOTS = U_SLOTS + P_SLOTS


def interface_dim(n_edges: int) -> int:
    return EDGE_SLOTS * n_edges


def slot_masks(n_edges: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of displacement and pressure slots in the monolithic
    interface layout."""
    u_mask = np.zeros(interface_dim(n_edges), dtype=bool)
    u_mask.reshape(n_edges, EDGE_SLOTS)[:, :U_SLOTS] = True
    return u_mask, ~u_mask


@dataclass
class LocalState:
    """Coefficient vectors of the five fields on one subdomain."""

    sigma: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    z: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, dm: DofMap) -> "LocalState":
        return cls(
            np.zeros(dm.n_sigma),
            np.zeros(dm.n_u),
            np.zeros(dm.n_gamma),
            np.zeros(dm.n_z),
            np.zeros(dm.n_p),
        )

    def copy(self) -> "LocalState":
        return LocalState(
            self.sigma.copy(), self.u.copy(), self.gamma.copy(),
            self.z.copy(), self.p.copy(),
        )


class SubdomainSolver:
    """Assembly + factorization + solve bundle for one subdomain."""

    def __init__(
        self,
        sub: Subdomain,
        material: MaterialField,
        decomp: Decomposition,
        n_gauss: int = 3,
    ):
        self.sub = sub
        self.mesh = sub.mesh
        self.mat = material.restrict(sub.cell_map)
        self.dofmap = build_dofmap(self.mesh, decomp.local_bc(sub))
        self.geo = cell_geometry(self.mesh, n_gauss)
        self.blocks: Blocks = assemble_blocks(self.mesh, self.dofmap, self.geo, self.mat)
        self.data_asm = DataAssembler(self.mesh, self.dofmap, self.geo)
        self._lu: dict[tuple[str, float], object] = {}
        self._build_traces(decomp.n_interface_edges)

    # -- traces -----------------------------------------------------------
    def _build_traces(self, n_iface: int) -> None:
        """Sparse maps from sigma / z coefficients to interface slot values.

        R_u maps sigma -> displacement slots, R_p maps z -> pressure slots;
        entries are sign * s_k with s_k the orthonormal-Legendre pairing
        scales, sign +1 iff this subdomain sits on the minus side of the
        global edge normal (its outward normal equals the edge normal).
        """
        dm = self.dofmap
        le = self.sub.iface_local_edges
        pos = self.sub.iface_index
        sgn = self.sub.iface_signs
        scales = multiplier_scales(self.mesh.edge_lengths()[le])  # (n_ie, 2)
        n_ie = le.size

        rows_u, cols_u, vals_u = [], [], []
        rows_p, cols_p, vals_p = [], [], []
        for k in range(2):
            v = sgn * scales[:, k]
            for comp in range(2):
                rows_u.append(EDGE_SLOTS * pos + 2 * comp + k)
                cols_u.append(comp * dm.n_bdm + 2 * le + k)
                vals_u.append(v)
            rows_p.append(EDGE_SLOTS * pos + U_SLOTS + k)
            cols_p.append(2 * le + k)
            vals_p.append(v)
        dim = interface_dim(n_iface)
        self.R_u = sp.csr_matrix(
            (np.concatenate(vals_u), (np.concatenate(rows_u), np.concatenate(cols_u))),
            shape=(dim, dm.n_sigma),
        )
        self.R_p = sp.csr_matrix(
            (np.concatenate(vals_p), (np.concatenate(rows_p), np.concatenate(cols_p))),
            shape=(dim, dm.n_z),
        )
        # split layouts: displacement-only and pressure-only numbering
        umask, pmask = slot_masks(n_iface)
        self.R_u_split = self.R_u[umask]      # (4 n_iface, n_sigma)
        self.R_p_split = self.R_p[pmask]      # (2 n_iface, n_z)
        self.iface_slot_rows = np.nonzero(
            np.asarray(abs(self.R_u).sum(axis=1)).ravel()
            + np.asarray(abs(self.R_p).sum(axis=1)).ravel()
        )[0]

    # -- factorization ----------------------------------------------------
    def factorize(self, variant: str, dt: float = 1.0):
        """LU (with pivoting) of one variant matrix, essential rows applied.

        Cached per (variant, dt); dt only matters for the coupled/darcy
        variants.
        """
        if variant in ("elasticity", "velocity_mass"):
            dt = 1.0
        key = (variant, float(dt))
        if key not in self._lu:
            mat = variant_matrix(self.blocks, self.dofmap, variant, dt)
            mat = apply_essential_rows(mat, self.dofmap.essential_dofs(variant))
            self._lu[key] = splu(mat.tocsc())
        return self._lu[key]

    def solve(self, variant: str, rhs: np.ndarray, dt: float = 1.0) -> np.ndarray:
        return self.factorize(variant, dt).solve(rhs)

    # -- right-hand sides --------------------------------------------------
    def rhs_star(self, variant: str, lam: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """Multiplier-driven RHS (zero data, zero previous state).

        biot: dt * R_u^T lam into the stress rows, -R_p^T lam into the
        velocity rows; elasticity: R_u^T lam_u; darcy / velocity_mass:
        -R_p^T lam_p.
        """
        dm = self.dofmap
        off = dm.offsets(variant)
        rhs = np.zeros(dm.n_total(variant))
        if variant == "biot":
            rhs[: dm.n_sigma] = dt * (self.R_u.T @ lam)
            rhs[off[3] : off[4]] = -(self.R_p.T @ lam)
        elif variant == "elasticity":
            rhs[: dm.n_sigma] = self.R_u_split.T @ lam
        elif variant in ("darcy", "velocity_mass"):
            rhs[: dm.n_z] = -(self.R_p_split.T @ lam)
        else:
            raise ValueError(f"no star variant {variant!r}")
        return rhs

    def trace_out(self, variant: str, x: np.ndarray) -> np.ndarray:
        """Interface contribution of a local solution: + stress traces into
        displacement slots, - velocity traces into pressure slots."""
        dm = self.dofmap
        off = dm.offsets(variant)
        if variant == "biot":
            return self.R_u @ x[: dm.n_sigma] - self.R_p @ x[off[3] : off[4]]
        if variant == "elasticity":
            return self.R_u_split @ x[: dm.n_sigma]
        if variant in ("darcy", "velocity_mass"):
            return -(self.R_p_split @ x[: dm.n_z])
        raise ValueError(f"no trace map for variant {variant!r}")

    def rhs_bar_biot(
        self,
        state: LocalState,
        data: ProblemData,
        t_prev: float,
        t_next: float,
        dt: float,
    ) -> np.ndarray:
        """Data + previous-state RHS of the time-differenced coupled step.

        The displacement-data term uses the difference quotient
        <g_u(t^{n+1}) - g_u(t^n), tau.n>, which makes the scheme telescope
        to the undifferenced backward Euler solution exactly.
        """
        dm, b, da = self.dofmap, self.blocks, self.data_asm
        off = dm.offsets("biot")
        rhs = np.zeros(dm.n_total("biot"))
        rhs[: dm.n_sigma] = (
            b.A_ss @ state.sigma
            + b.A_sp @ state.p
            + da.mech_natural(data.gu, t_next)
            - da.mech_natural(data.gu, t_prev)
        )
        rhs[off[1] : off[2]] = -da.volume_u(data.f, t_next)
        rhs[off[3] : off[4]] = -da.flow_natural(data.gp, t_next)
        rhs[off[4] : off[5]] = (
            dt * da.volume_p(data.g, t_next)
            + b.A_sp.T @ state.sigma
            + (b.M_p_diag + b.S_pp_diag) * state.p
        )
        self._set_essential(rhs, "biot", data, t_next)
        return rhs

    def rhs_bar_biot_total(
        self, state: LocalState, data: ProblemData, t_next: float, dt: float
    ) -> np.ndarray:
        """Plain backward Euler RHS (single-domain reference solver)."""
        dm, b, da = self.dofmap, self.blocks, self.data_asm
        off = dm.offsets("biot_total")
        rhs = np.zeros(dm.n_total("biot_total"))
        rhs[: dm.n_sigma] = da.mech_natural(data.gu, t_next)
        rhs[off[1] : off[2]] = -da.volume_u(data.f, t_next)
        rhs[off[3] : off[4]] = -da.flow_natural(data.gp, t_next)
        rhs[off[4] : off[5]] = (
            dt * da.volume_p(data.g, t_next)
            + b.A_sp.T @ state.sigma
            + (b.M_p_diag + b.S_pp_diag) * state.p
        )
        self._set_essential(rhs, "biot_total", data, t_next)
        return rhs

    def rhs_bar_elasticity(
        self, p_cells: np.ndarray, data: ProblemData, t: float
    ) -> np.ndarray:
        """Mechanics RHS with explicit pressure coupling -(A alpha p I, tau)."""
        dm, b, da = self.dofmap, self.blocks, self.data_asm
        off = dm.offsets("elasticity")
        rhs = np.zeros(dm.n_total("elasticity"))
        rhs[: dm.n_sigma] = da.mech_natural(data.gu, t) - b.A_sp @ p_cells
        rhs[off[1] : off[2]] = -da.volume_u(data.f, t)
        self._set_essential(rhs, "elasticity", data, t)
        return rhs

    def rhs_bar_darcy(
        self,
        p_prev: np.ndarray,
        sigma_diff: np.ndarray,
        data: ProblemData,
        t_next: float,
        dt: float,
    ) -> np.ndarray:
        """Flow step RHS; sigma_diff is the stress increment of the split."""
        dm, b, da = self.dofmap, self.blocks, self.data_asm
        off = dm.offsets("darcy")
        rhs = np.zeros(dm.n_total("darcy"))
        rhs[: dm.n_z] = -da.flow_natural(data.gp, t_next)
        rhs[off[1] : off[2]] = (
            dt * da.volume_p(data.g, t_next)
            + (b.M_p_diag + b.S_pp_diag) * p_prev
            - b.A_sp.T @ sigma_diff
        )
        self._set_essential(rhs, "darcy", data, t_next)
        return rhs

    def rhs_bar_velocity_mass(
        self, p_cells: np.ndarray, data: ProblemData, t: float
    ) -> np.ndarray:
        """Velocity mass RHS M_z z = B_p^T p - <g_p, q.n> for the initial z."""
        da = self.data_asm
        rhs = self.blocks.B_p.T @ p_cells - da.flow_natural(data.gp, t)
        self._set_essential(rhs, "velocity_mass", data, t)
        return rhs

    def _set_essential(
        self, rhs: np.ndarray, variant: str, data: ProblemData, t: float
    ) -> None:
        """Overwrite essential-row entries with prescribed trace moments."""
        dm = self.dofmap
        if variant in ("biot", "biot_total", "elasticity") and dm.sigma_essential.size:
            rhs[dm.sigma_essential] = self.data_asm.sigma_essential_values(
                data.traction, t
            )
        if variant in ("biot", "biot_total", "darcy", "velocity_mass") and dm.z_essential.size:
            off = dm.offsets(variant)
            zoff = off[3] if variant in ("biot", "biot_total") else 0
            rhs[zoff + dm.z_essential] = self.data_asm.z_essential_values(data.flux, t)

    # -- field packing -----------------------------------------------------
    def split_fields(self, variant: str, x: np.ndarray) -> dict[str, np.ndarray]:
        names = {
            "biot": ("sigma", "u", "gamma", "z", "p"),
            "biot_total": ("sigma", "u", "gamma", "z", "p"),
            "elasticity": ("sigma", "u", "gamma"),
            "darcy": ("z", "p"),
            "velocity_mass": ("z",),
        }[variant]
        off = self.dofmap.offsets(variant)
        return {n: x[off[i] : off[i + 1]] for i, n in enumerate(names)}

    # -- projections and norms --------------------------------------------
    def project_pressure(self, p0) -> np.ndarray:
        """L2 projection of a function onto piecewise constants (cell means)."""
        vals = np.asarray(p0(self.geo.phys_pts))
        return np.einsum("cq,cq->c", self.geo.weights, vals) / self.blocks.vol

    def energy_norms(self, s: LocalState) -> dict[str, float]:
        """Squared norms used by the stability monitor."""
        b = self.blocks
        u2 = s.u.reshape(-1, 2)
        return {
            "z": float(s.z @ (b.M_bdm @ s.z)),
            "p": float(b.vol @ (s.p**2)),
            "Asigma": float(s.sigma @ (b.A_ss @ s.sigma)),
            "u": float(b.vol @ (u2**2).sum(axis=1)),
            "gamma": float(b.vol @ (s.gamma**2)),
        }


def build_subdomain_solvers(
    decomp: Decomposition, material: MaterialField, n_gauss: int = 3
) -> list[SubdomainSolver]:
    """One SubdomainSolver per subdomain of the decomposition."""
    return [SubdomainSolver(sub, material, decomp) for sub in decomp.subdomains]
