"""Cell-level assembly of the five-field poroelastic blocks and data terms.

Per (sub)mesh this module builds the sparse blocks of the coupled system

    (A(sigma + alpha p I), tau) + (u, div tau) + (gamma, tau)   [stress row]
    (div sigma, v)                                              [momentum]
    (sigma, skew)                                               [symmetry]
    (K^-1 z, q) - (p, div q)                                    [Darcy row]
    c0 (p, w) + alpha (A(sigma + alpha p I), w I) + dt (div z, w)  [mass row]

with the compliance A tau = (1/2mu) (tau - lam/(2mu + 2 lam) tr(tau) I) in
two dimensions (so A(I) = I/(2 mu + 2 lam)).  Blocks are independent of the
time step; the time-stepping variants combine them as

    biot (time-differenced, unknowns sigma, du/dt, dgamma/dt, z, p):
        [A_ss  dt*B_u^T  dt*B_g^T  0      A_sp ]
        [B_u   0         0         0      0    ]
        [B_g   0         0         0      0    ]
        [0     0         0         M_z    -B_p^T]
        [A_sp^T 0        0         dt*B_p M_p + S_pp]
    elasticity: upper-left 3x3 without the dt factors (unknowns sigma, u, gamma)
    darcy: lower-right 2x2 (unknowns z, p)
    velocity_mass: M_z alone.

Essential (traction / normal-flux) boundary DOFs are imposed by replacing
their rows with identity rows; natural data enter as boundary functionals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import BOUNDARY_SIDES, Mesh
from .spaces import CellGeometry, DofMap, edge_quad, edge_points

# Outward-normal sign of the single adjacent cell on each boundary side
# (global edge normals are +x / +y).
BOUNDARY_OUT_SIGN = {"left": -1.0, "right": 1.0, "bottom": -1.0, "top": 1.0}

# Outward unit normals of the unit square (boundary vertices never move).
SIDE_NORMALS = {
    "left": np.array([-1.0, 0.0]),
    "right": np.array([1.0, 0.0]),
    "bottom": np.array([0.0, -1.0]),
    "top": np.array([0.0, 1.0]),
}

VARIANTS = ("biot", "biot_total", "elasticity", "darcy", "velocity_mass")


@dataclass
class MaterialField:
    """Per-cell isotropic poroelastic coefficients.

    mu, lam, perm are per-cell arrays (Lame parameters and scalar
    permeability); c0 is the constrained storage coefficient and alpha the
    Biot-Willis constant.  Invariants: mu > 0, lam >= 0, perm > 0 (so K is
    SPD), c0 >= 0, 0 < alpha <= 1.
    """

    mu: np.ndarray
    lam: np.ndarray
    perm: np.ndarray
    c0: float = 0.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.perm = np.asarray(self.perm, dtype=float)
        if not np.all(self.mu > 0.0):
            raise ValueError("shear modulus must be positive")
        if not np.all(self.lam >= 0.0):
            raise ValueError("first Lame parameter must be nonnegative")
        if not np.all(self.perm > 0.0):
            raise ValueError("permeability must be positive definite")
        if self.c0 < 0.0:
            raise ValueError("storage coefficient must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("Biot-Willis constant must lie in (0, 1]")

    @classmethod
    def uniform(
        cls,
        n_cells: int,
        mu: float,
        lam: float,
        perm: float = 1.0,
        c0: float = 0.0,
        alpha: float = 1.0,
    ) -> "MaterialField":
        ones = np.ones(n_cells)
        return cls(mu * ones, lam * ones, perm * ones, c0, alpha)

    @property
    def inv_bulk(self) -> np.ndarray:
        """1/(2 mu + 2 lam) per cell: the A(I) = inv_bulk * I scale in 2D."""
        return 1.0 / (2.0 * self.mu + 2.0 * self.lam)

    def restrict(self, cells: np.ndarray) -> "MaterialField":
        """Restriction to a subdomain via its local-to-global cell map."""
        return MaterialField(
            self.mu[cells], self.lam[cells], self.perm[cells], self.c0, self.alpha
        )


@dataclass
class Blocks:
    """Assembled sparse blocks (csr) and diagonal data for one (sub)mesh."""

    A_ss: sp.csr_matrix     # (n_sigma, n_sigma) compliance
    A_sp: sp.csr_matrix     # (n_sigma, n_p) pressure-stress coupling
    B_u: sp.csr_matrix      # (n_u, n_sigma) divergence
    B_g: sp.csr_matrix      # (n_gamma, n_sigma) weak symmetry
    M_z: sp.csr_matrix      # (n_z, n_z) K^-1-weighted velocity mass
    B_p: sp.csr_matrix      # (n_p, n_z) divergence
    M_bdm: sp.csr_matrix    # (n_z, n_z) unweighted velocity mass (norms)
    M_p_diag: np.ndarray    # (n_p,) c0 * |E|
    S_pp_diag: np.ndarray   # (n_p,) alpha^2 * 2/(2mu+2lam) * |E|
    vol: np.ndarray         # (n_p,) cell volumes


def _bdm_global(mesh: Mesh) -> np.ndarray:
    """Local BDM dof (2*side + moment) to global (2*edge + moment): (n_c, 8)."""
    return (2 * mesh.cell_edges[:, :, None] + np.arange(2)[None, None, :]).reshape(-1, 8)


def assemble_blocks(
    mesh: Mesh, dofmap: DofMap, geo: CellGeometry, mat: MaterialField
) -> Blocks:
    """Assemble all time-step-independent blocks with vectorized scatters."""
    n_c = mesh.n_cells
    nb = dofmap.n_bdm
    bdm_g = _bdm_global(mesh)

    w = geo.weights                                        # (n_c, n_q)
    phi = geo.phi                                          # (n_c, 8, n_q, 2)
    mass = np.einsum("cq,ciqd,cjqd->cij", w, phi, phi)     # BDM mass per cell
    comp = np.einsum("cq,ciqr,cjqs->cirjs", w, phi, phi)   # component products
    comp_int = np.einsum("cq,ciqr->cir", w, phi)           # (n_c, 8, 2)
    div_int = np.einsum("cq,ciq->ci", w, geo.div_phi)      # (n_c, 8), exact

    inv2mu = 1.0 / (2.0 * mat.mu)
    ctr = mat.lam * inv2mu * mat.inv_bulk                  # lam/(2mu(2mu+2lam))

    # compliance: delta_rr'/(2mu) * mass - ctr * comp[i,r,j,r']
    loc = np.zeros((n_c, 2, 8, 2, 8))
    for r in range(2):
        loc[:, r, :, r, :] += inv2mu[:, None, None] * mass
    loc -= ctr[:, None, None, None, None] * comp.transpose(0, 2, 1, 4, 3)
    sig_g = np.concatenate([bdm_g, nb + bdm_g], axis=1)    # (n_c, 16) rows then rows
    loc16 = loc.reshape(n_c, 16, 16)
    A_ss = sp.coo_matrix(
        (
            loc16.ravel(),
            (
                np.repeat(sig_g, 16, axis=1).ravel(),
                np.tile(sig_g, (1, 16)).ravel(),
            ),
        ),
        shape=(dofmap.n_sigma, dofmap.n_sigma),
    ).tocsr()

    # pressure-stress coupling: alpha * inv_bulk * int tr(tau) per cell
    asp = (mat.alpha * mat.inv_bulk)[:, None, None] * comp_int.transpose(0, 2, 1)
    cells = np.arange(n_c)
    A_sp = sp.coo_matrix(
        (
            asp.reshape(n_c, 16).ravel(),
            (sig_g.ravel(), np.repeat(cells, 16)),
        ),
        shape=(dofmap.n_sigma, dofmap.n_p),
    ).tocsr()

    # divergence blocks: rows (c, r), entries div_int at row-r sigma dofs
    bu_rows = np.stack([2 * cells, 2 * cells + 1], axis=1)  # (n_c, 2)
    B_u = sp.coo_matrix(
        (
            np.concatenate([div_int, div_int], axis=1).ravel(),
            (np.repeat(bu_rows, 8, axis=1).ravel(), sig_g.ravel()),
        ),
        shape=(dofmap.n_u, dofmap.n_sigma),
    ).tocsr()

    # weak symmetry: int (tau_12 - tau_21) = +comp_int[:, :, 1] for row 0 dofs,
    # -comp_int[:, :, 0] for row 1 dofs
    bg_vals = np.concatenate([comp_int[:, :, 1], -comp_int[:, :, 0]], axis=1)
    B_g = sp.coo_matrix(
        (bg_vals.ravel(), (np.repeat(cells, 16), sig_g.ravel())),
        shape=(dofmap.n_gamma, dofmap.n_sigma),
    ).tocsr()

    rows8 = np.repeat(bdm_g, 8, axis=1).ravel()
    cols8 = np.tile(bdm_g, (1, 8)).ravel()
    M_z = sp.coo_matrix(
        ((mass / mat.perm[:, None, None]).ravel(), (rows8, cols8)),
        shape=(dofmap.n_z, dofmap.n_z),
    ).tocsr()
    M_bdm = sp.coo_matrix(
        (mass.ravel(), (rows8, cols8)), shape=(dofmap.n_z, dofmap.n_z)
    ).tocsr()
    B_p = sp.coo_matrix(
        (div_int.ravel(), (np.repeat(cells, 8), bdm_g.ravel())),
        shape=(dofmap.n_p, dofmap.n_z),
    ).tocsr()

    vol = geo.cell_volumes
    M_p_diag = mat.c0 * vol
    S_pp_diag = mat.alpha**2 * 2.0 * mat.inv_bulk * vol
    return Blocks(A_ss, A_sp, B_u, B_g, M_z, B_p, M_bdm, M_p_diag, S_pp_diag, vol)


def variant_matrix(blocks: Blocks, dofmap: DofMap, variant: str, dt: float = 1.0) -> sp.csr_matrix:
    """Assemble one solve variant from the blocks (no essential rows yet)."""
    b = blocks
    Mp = sp.diags(b.M_p_diag + b.S_pp_diag)
    if variant in ("biot", "biot_total"):
        # biot: time-differenced mechanics (unknowns are displacement and
        # rotation rates, so the row-1 couplings carry dt);
        # biot_total: plain backward Euler with total displacement unknowns.
        s = dt if variant == "biot" else 1.0
        Z = None
        mat = sp.bmat(
            [
                [b.A_ss, s * b.B_u.T, s * b.B_g.T, Z, b.A_sp],
                [b.B_u, Z, Z, Z, Z],
                [b.B_g, Z, Z, Z, Z],
                [Z, Z, Z, b.M_z, -b.B_p.T],
                [b.A_sp.T, Z, Z, dt * b.B_p, Mp],
            ],
            format="csr",
        )
    elif variant == "elasticity":
        Z = None
        mat = sp.bmat(
            [[b.A_ss, b.B_u.T, b.B_g.T], [b.B_u, Z, Z], [b.B_g, Z, Z]],
            format="csr",
        )
    elif variant == "darcy":
        mat = sp.bmat([[b.M_z, -b.B_p.T], [dt * b.B_p, Mp]], format="csr")
    elif variant == "velocity_mass":
        mat = b.M_z.copy()
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return mat


def apply_essential_rows(mat: sp.csr_matrix, dofs: np.ndarray) -> sp.csr_matrix:
    """Replace the listed rows by identity rows (columns untouched)."""
    if dofs.size == 0:
        return mat.tocsr()
    keep = np.ones(mat.shape[0])
    keep[dofs] = 0.0
    out = sp.diags(keep) @ mat + sp.coo_matrix(
        (np.ones(dofs.size), (dofs, dofs)), shape=mat.shape
    )
    return out.tocsr()


# ---------------------------------------------------------------------------
# Problem data and boundary/volume functionals
# ---------------------------------------------------------------------------

@dataclass
class ProblemData:
    """Callable data of one initial-boundary-value problem.

    All callables take (x, t) with x of shape (..., 2) and broadcast:
    f -> (..., 2) body force; g -> (...) fluid source; gu -> (..., 2)
    boundary displacement; gp -> (...) boundary pressure; traction ->
    (..., 2) prescribed normal stress on traction sides; flux -> (...)
    prescribed normal velocity on flux sides; p0(x) -> (...) initial
    pressure.
    """

    f: Callable
    g: Callable
    gu: Callable
    gp: Callable
    p0: Callable
    traction: Callable | None = None   # (x, t, n_out) -> (..., 2)
    flux: Callable | None = None       # (x, t, n_out) -> (...)


def _zero_vec(x, t):
    return np.zeros(x.shape[:-1] + (2,))


def _zero_scal(x, t):
    return np.zeros(x.shape[:-1])


def zero_data(p0: Callable) -> ProblemData:
    """Homogeneous data except the initial pressure."""
    return ProblemData(
        f=_zero_vec, g=_zero_scal, gu=_zero_vec, gp=_zero_scal, p0=lambda x: p0(x),
        traction=lambda x, t, n: np.zeros(x.shape[:-1] + (2,)),
        flux=lambda x, t, n: np.zeros(x.shape[:-1]),
    )


class DataAssembler:
    """Evaluates volume loads, natural boundary functionals, and essential
    DOF values for one (sub)mesh.

    Natural functionals use the closed-form dual-basis traces: for edge e
    and moment k, <g, phi_(e,k).nu>_e = int_0^1 g(x(t)) Lhat_k(t) dt with
    Lhat_0 = 1, Lhat_1 = 3(2t-1) (no |e| factor).  Essential DOF values are
    the flux moments of the prescribed trace: sign * |e| * int_0^1 w L_k dt.
    """

    def __init__(self, mesh: Mesh, dofmap: DofMap, geo: CellGeometry, n_edge_gauss: int = 3):
        self.mesh = mesh
        self.dofmap = dofmap
        self.geo = geo
        t, w, leg = edge_quad(n_edge_gauss)
        self._t = t
        self._wq = w
        self._leg = leg                       # (2, n_q): [1, 2t-1]
        self._nat_w = np.stack([w, 3.0 * (2.0 * t - 1.0) * w])   # (2, n_q)
        self._ess_w = leg * w[None, :]                            # (2, n_q)
        lengths = mesh.edge_lengths()
        self._side_pts = {}
        self._side_len = {}
        for s in BOUNDARY_SIDES:
            edges = dofmap.boundary_edges[s]
            self._side_pts[s] = edge_points(mesh, edges, t)
            self._side_len[s] = lengths[edges]

    # -- volume loads -----------------------------------------------------
    def volume_u(self, f: Callable, t: float) -> np.ndarray:
        """(f, v) for piecewise-constant vector test functions: (n_u,)."""
        vals = np.asarray(f(self.geo.phys_pts, t))            # (n_c, n_q, 2)
        out = np.einsum("cq,cqr->cr", self.geo.weights, vals)
        return out.ravel()

    def volume_p(self, g: Callable, t: float) -> np.ndarray:
        """(g, w) for piecewise-constant scalar test functions: (n_p,)."""
        vals = np.asarray(g(self.geo.phys_pts, t))            # (n_c, n_q)
        return np.einsum("cq,cq->c", self.geo.weights, vals)

    # -- natural boundary functionals ------------------------------------
    def mech_natural(self, gu: Callable, t: float) -> np.ndarray:
        """<g_u, tau . n_out> on displacement sides, scattered to (n_sigma,)."""
        out = np.zeros(self.dofmap.n_sigma)
        nb = self.dofmap.n_bdm
        for s in BOUNDARY_SIDES:
            if self.dofmap.bc.mech[s] != "displacement":
                continue
            edges = self.dofmap.boundary_edges[s]
            if edges.size == 0:
                continue
            vals = np.asarray(gu(self._side_pts[s], t))       # (n_e, n_q, 2)
            mom = BOUNDARY_OUT_SIGN[s] * np.einsum("kq,eqr->erk", self._nat_w, vals)
            for r in range(2):
                dofs = r * nb + 2 * edges
                out[dofs] += mom[:, r, 0]
                out[dofs + 1] += mom[:, r, 1]
        return out

    def flow_natural(self, gp: Callable, t: float) -> np.ndarray:
        """<g_p, q . n_out> on pressure sides, scattered to (n_z,)."""
        out = np.zeros(self.dofmap.n_z)
        for s in BOUNDARY_SIDES:
            if self.dofmap.bc.flow[s] != "pressure":
                continue
            edges = self.dofmap.boundary_edges[s]
            if edges.size == 0:
                continue
            vals = np.asarray(gp(self._side_pts[s], t))       # (n_e, n_q)
            mom = BOUNDARY_OUT_SIGN[s] * np.einsum("kq,eq->ek", self._nat_w, vals)
            out[2 * edges] += mom[:, 0]
            out[2 * edges + 1] += mom[:, 1]
        return out

    # -- essential DOF values --------------------------------------------
    def sigma_essential_values(self, traction: Callable, t: float) -> np.ndarray:
        """Prescribed-traction flux moments aligned with dofmap.sigma_essential.

        traction(x, t, n_out) prescribes sigma . n_out; the DOF value is
        sign * |e| * int_0^1 traction_r L_k dxi per tensor row r.
        """
        chunks = []
        for s in self.dofmap.traction_sides:
            vals = np.asarray(traction(self._side_pts[s], t, SIDE_NORMALS[s]))
            mom = BOUNDARY_OUT_SIGN[s] * self._side_len[s][:, None, None] * np.einsum(
                "kq,eqr->erk", self._ess_w, vals
            )
            for r in range(2):
                chunks.append(mom[:, r, :].ravel())            # (e0k0, e0k1, ...)
        if not chunks:
            return np.empty(0)
        return np.concatenate(chunks)

    def z_essential_values(self, flux: Callable, t: float) -> np.ndarray:
        """Prescribed normal-flux moments aligned with dofmap.z_essential."""
        chunks = []
        for s in self.dofmap.flux_sides:
            vals = np.asarray(flux(self._side_pts[s], t, SIDE_NORMALS[s]))
            mom = BOUNDARY_OUT_SIGN[s] * self._side_len[s][:, None] * np.einsum(
                "kq,eq->ek", self._ess_w, vals
            )
            chunks.append(mom.ravel())
        if not chunks:
            return np.empty(0)
        return np.concatenate(chunks)
