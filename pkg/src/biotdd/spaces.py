"""Lowest-order BDM spaces on quadrilaterals, quadrature, and DOF maps.

The H(div) space per cell is the image under the contravariant (Piola)
transform of the 8-dimensional reference space

    span{ (1,0), (xh,0), (yh,0), (0,1), (0,xh), (0,yh),
          (xh^2, -2 xh yh), (2 xh yh, -yh^2) }

on [0,1]^2 (full vector P1 plus two curl-like quadratics).  Reference
divergences are the constants (0,1,0,0,0,1,0,0), so divergence of a mapped
function is constant/detJ per cell.

Degrees of freedom are the two normal-flux moments per edge

    l_{e,k}(v) = int_e (v . nu_e) L_k(xi) ds,   L_0 = 1, L_1 = 2 xi - 1,

with nu_e the fixed global edge normal and xi in [0,1] the global edge
parameter (left-to-right / bottom-to-top).  Because these are flux moments,
the Piola flux identity makes the local Vandermonde geometry-independent;
on straight-edged quads the dual-basis edge traces have the closed forms

    phi_(e,0) . nu |_e = 1/|e|,      phi_(e,1) . nu |_e = 3 (2 xi - 1)/|e|.

Scalar fields (u components, rotation, pressure) are piecewise constants.

The companion five-field ordering per subdomain is (sigma, u, gamma, z, p)
with sigma stored row-wise as two BDM fields (rows of the tensor).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import SIDE_SIGNS, BOUNDARY_SIDES, BoundaryMap, Mesh, bilinear_jacobians, bilinear_map

# Reference divergences of the eight primitives.
REF_DIVS = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])

# Reference edges in local side order (bottom, right, top, left):
# start point, direction, outward unit normal.
_REF_EDGE_START = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
_REF_EDGE_DIR = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
_REF_EDGE_NORMAL = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


def gauss1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1] (exact for degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quad_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on [0,1]^2: points (n*n, 2), weights (n*n,)."""
    x, w = gauss1d(n)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    return pts, np.outer(w, w).ravel()


def reference_primitives(pts: np.ndarray) -> np.ndarray:
    """Primitive values at reference points: shape (8, n_q, 2)."""
    xh, yh = pts[:, 0], pts[:, 1]
    z = np.zeros_like(xh)
    one = np.ones_like(xh)
    vals = np.stack(
        [
            np.stack([one, z], -1),
            np.stack([xh, z], -1),
            np.stack([yh, z], -1),
            np.stack([z, one], -1),
            np.stack([z, xh], -1),
            np.stack([z, yh], -1),
            np.stack([xh * xh, -2.0 * xh * yh], -1),
            np.stack([2.0 * xh * yh, -yh * yh], -1),
        ]
    )
    return vals


@lru_cache(maxsize=1)
def _dual_coefficients() -> np.ndarray:
    """Coefficients C with phi_i = sum_j C[j, i] * (Piola w_j).

    Local DOF order i = 2*side + moment, sides (bottom, right, top, left).
    The Vandermonde uses the Piola flux identity, so it is exact and the
    same for every cell (edge parameters never flip on these meshes).
    """
    t, wq = gauss1d(3)
    vand = np.empty((8, 8))
    for s in range(4):
        r = _REF_EDGE_START[s][None, :] + t[:, None] * _REF_EDGE_DIR[s][None, :]
        wvals = reference_primitives(r)  # (8, nq, 2)
        flux = wvals @ _REF_EDGE_NORMAL[s]  # (8, nq)
        for k in range(2):
            leg = np.ones_like(t) if k == 0 else 2.0 * t - 1.0
            vand[2 * s + k] = SIDE_SIGNS[s] * (flux * (leg * wq)).sum(axis=1)
    return np.linalg.inv(vand)


def map_hdiv_basis(mesh: Mesh, ref_pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dual-basis values and divergences at reference points, per cell.

    Returns (phi, div_phi) with shapes (n_cells, 8, n_q, 2) and
    (n_cells, 8, n_q); local DOF i = 2*side + moment pairs with the global
    DOF 2*cell_edges[c, side] + moment.
    """
    coeff = _dual_coefficients()
    wvals = reference_primitives(ref_pts)              # (8, nq, 2)
    combo = np.einsum("ji,jqd->iqd", coeff, wvals)     # (8, nq, 2)
    div_combo = coeff.T @ REF_DIVS                     # (8,)
    jac, det = bilinear_jacobians(mesh.cell_corners(), ref_pts)
    phi = np.einsum("cqde,iqe->ciqd", jac, combo) / det[:, None, :, None]
    div_phi = div_combo[None, :, None] / det[:, None, :]
    return phi, div_phi


@dataclass
class CellGeometry:
    """Cached per-cell quadrature geometry and mapped basis tables."""

    ref_pts: np.ndarray        # (n_q, 2)
    ref_wts: np.ndarray        # (n_q,)
    phys_pts: np.ndarray       # (n_c, n_q, 2)
    weights: np.ndarray        # (n_c, n_q)  quadrature weight * detJ
    phi: np.ndarray            # (n_c, 8, n_q, 2)
    div_phi: np.ndarray        # (n_c, 8, n_q)
    cell_volumes: np.ndarray   # (n_c,)


def cell_geometry(mesh: Mesh, n_gauss: int) -> CellGeometry:
    """Build quadrature geometry + BDM basis tables with an n-by-n Gauss rule."""
    pts, wts = quad_rule(n_gauss)
    corners = mesh.cell_corners()
    _, det = bilinear_jacobians(corners, pts)
    if np.any(det <= 0.0):
        raise ValueError("mesh has inverted cells")
    phys = bilinear_map(corners, pts)
    phi, div_phi = map_hdiv_basis(mesh, pts)
    weights = wts[None, :] * det
    return CellGeometry(pts, wts, phys, weights, phi, div_phi, weights.sum(axis=1))


# ---------------------------------------------------------------------------
# Edge traces and moments
# ---------------------------------------------------------------------------

def edge_quad(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """1D rule plus Legendre values: (t, w, leg) with leg shape (2, n)."""
    t, w = gauss1d(n)
    return t, w, np.stack([np.ones_like(t), 2.0 * t - 1.0])


def edge_points(mesh: Mesh, edges: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Physical points along (straight) edges at parameters t: (n_e, n_t, 2)."""
    a = mesh.vertices[mesh.edge_vertices[edges, 0]]
    b = mesh.vertices[mesh.edge_vertices[edges, 1]]
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def trace_coefficients(edge_length: np.ndarray) -> np.ndarray:
    """Closed-form dual-basis trace scale per moment: (n_e, 2).

    phi_(e,0).nu = c0 and phi_(e,1).nu = c1*(2 xi - 1) with c0 = 1/|e| and
    c1 = 3/|e|.
    """
    return np.stack([1.0 / edge_length, 3.0 / edge_length], axis=-1)


def multiplier_scales(edge_length: np.ndarray) -> np.ndarray:
    """L2-orthonormal Legendre multiplier basis scale per moment: (n_e, 2).

    psi_(e,0) = s0, psi_(e,1) = s1*(2 xi - 1) with s0 = 1/sqrt|e| and
    s1 = sqrt(3)/sqrt|e|; then <phi_(e,k).nu, psi_(e,q)> = delta_kq * s_k.
    """
    root = np.sqrt(edge_length)
    return np.stack([1.0 / root, np.sqrt(3.0) / root], axis=-1)


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------

@dataclass
class DofMap:
    """Field offsets and essential-DOF bookkeeping for one (sub)mesh.

    Unknown ordering for the coupled system is (sigma, u, gamma, z, p);
    sigma row r of the tensor occupies BDM dofs r*n_bdm + (2*edge + moment).
    """

    mesh: Mesh
    bc: BoundaryMap
    n_bdm: int = field(init=False)
    n_sigma: int = field(init=False)
    n_u: int = field(init=False)
    n_gamma: int = field(init=False)
    n_z: int = field(init=False)
    n_p: int = field(init=False)
    boundary_edges: dict[str, np.ndarray] = field(init=False)
    sigma_essential: np.ndarray = field(init=False)  # ids within the sigma block
    z_essential: np.ndarray = field(init=False)      # ids within the z block
    traction_sides: list[str] = field(init=False)
    flux_sides: list[str] = field(init=False)

    def __post_init__(self) -> None:
        m = self.mesh
        self.n_bdm = 2 * m.n_edges
        self.n_sigma = 2 * self.n_bdm
        self.n_u = 2 * m.n_cells
        self.n_gamma = m.n_cells
        self.n_z = self.n_bdm
        self.n_p = m.n_cells
        sides = m.boundary_edge_sides()
        self.boundary_edges = {
            name: np.nonzero(sides == i)[0] for i, name in enumerate(BOUNDARY_SIDES)
        }
        self.traction_sides = [s for s in BOUNDARY_SIDES if self.bc.mech[s] == "traction"]
        self.flux_sides = [s for s in BOUNDARY_SIDES if self.bc.flow[s] == "flux"]
        sig = []
        for s in self.traction_sides:
            bdm = self._edge_bdm_dofs(self.boundary_edges[s])
            sig.append(bdm)                 # tensor row 0
            sig.append(bdm + self.n_bdm)    # tensor row 1
        self.sigma_essential = (
            np.concatenate(sig) if sig else np.empty(0, dtype=np.int64)
        )
        zz = [self._edge_bdm_dofs(self.boundary_edges[s]) for s in self.flux_sides]
        self.z_essential = np.concatenate(zz) if zz else np.empty(0, dtype=np.int64)

    @staticmethod
    def _edge_bdm_dofs(edges: np.ndarray) -> np.ndarray:
        """Both moment dofs of each edge: (2*n_e,) interleaved (e0, e0+1, ...)."""
        return (2 * edges[:, None] + np.arange(2)[None, :]).ravel()

    # -- variant sizes and offsets ---------------------------------------
    def sizes(self, variant: str) -> tuple[int, ...]:
        if variant in ("biot", "biot_total"):
            return (self.n_sigma, self.n_u, self.n_gamma, self.n_z, self.n_p)
        if variant == "elasticity":
            return (self.n_sigma, self.n_u, self.n_gamma)
        if variant == "darcy":
            return (self.n_z, self.n_p)
        if variant == "velocity_mass":
            return (self.n_z,)
        raise ValueError(f"unknown variant {variant!r}")

    def offsets(self, variant: str) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes(variant))])

    def n_total(self, variant: str) -> int:
        return int(sum(self.sizes(variant)))

    def essential_dofs(self, variant: str) -> np.ndarray:
        """Essential (normal-trace) DOF ids in the variant's global numbering."""
        off = self.offsets(variant)
        if variant in ("biot", "biot_total"):
            return np.concatenate([self.sigma_essential, off[3] + self.z_essential])
        if variant == "elasticity":
            return self.sigma_essential.copy()
        if variant in ("darcy", "velocity_mass"):
            return self.z_essential.copy()
        raise ValueError(f"unknown variant {variant!r}")


def build_dofmap(mesh: Mesh, bc: BoundaryMap | None = None) -> DofMap:
    """DOF bookkeeping for one mesh (all-natural boundary if bc is None)."""
    return DofMap(mesh, bc if bc is not None else BoundaryMap())
