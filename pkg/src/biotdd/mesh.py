"""Structured quadrilateral meshes of the unit square and tensor partitions.

The mesh is a logically-structured nx-by-ny grid of convex quadrilaterals.
Connectivity is fixed by the structure; vertex positions may be perturbed
(randomly, for mesh-robustness studies) or refined by nested midpoint
subdivision.  Conventions used throughout the package:

* vertices:  id = iy*(nx+1) + ix, bottom-to-top rows, left-to-right.
* cells:     id = iy*nx + ix; corner order (BL, BR, TR, TL), counterclockwise.
* edges:     horizontal edges first (tangent +x, unit normal +y), then
             vertical edges (tangent +y, unit normal +x).
             H edge id = iy*nx + ix for iy in 0..ny;
             V edge id = n_h + iy*(nx+1) + ix for ix in 0..nx.
* edge orientation: start vertex is the lexicographically smaller endpoint
  (left / bottom), so the edge parameter xi in [0, 1] runs left-to-right on
  horizontal edges and bottom-to-top on vertical edges.
* edge_cells = (minus, plus): the global edge normal points from the minus
  cell to the plus cell (-1 marks the domain exterior).
* per-cell local sides are ordered (bottom, right, top, left); the outward
  normal of a cell equals sign * (global edge normal) with signs
  (-1, +1, +1, -1) for those sides.

A tensor partition into px-by-py subdomains produces one local mesh per
subdomain (sharing vertex coordinates with the global mesh) together with
local-to-global cell/edge maps and the list of interface edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Local side order (bottom, right, top, left): sign of the outward normal
# relative to the global edge normal (+y for horizontal, +x for vertical).
SIDE_SIGNS = np.array([-1.0, 1.0, 1.0, -1.0])

BOUNDARY_SIDES = ("left", "right", "bottom", "top")


def _structured_edges(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edge connectivity arrays for an nx-by-ny structured grid.

    Returns (edge_vertices, edge_cells, cell_edges).
    """
    n_h = (ny + 1) * nx
    n_v = ny * (nx + 1)
    n_e = n_h + n_v

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    edge_vertices = np.empty((n_e, 2), dtype=np.int64)
    edge_cells = np.full((n_e, 2), -1, dtype=np.int64)

    iy, ix = np.meshgrid(np.arange(ny + 1), np.arange(nx), indexing="ij")
    h_ids = iy * nx + ix
    edge_vertices[h_ids.ravel(), 0] = vid(ix, iy).ravel()
    edge_vertices[h_ids.ravel(), 1] = vid(ix + 1, iy).ravel()
    # cell below is on the minus side of the +y normal, cell above on plus.
    below = np.where(iy > 0, (iy - 1) * nx + ix, -1)
    above = np.where(iy < ny, iy * nx + ix, -1)
    edge_cells[h_ids.ravel(), 0] = below.ravel()
    edge_cells[h_ids.ravel(), 1] = above.ravel()

    iy, ix = np.meshgrid(np.arange(ny), np.arange(nx + 1), indexing="ij")
    v_ids = n_h + iy * (nx + 1) + ix
    edge_vertices[v_ids.ravel(), 0] = vid(ix, iy).ravel()
    edge_vertices[v_ids.ravel(), 1] = vid(ix, iy + 1).ravel()
    left = np.where(ix > 0, iy * nx + ix - 1, -1)
    right = np.where(ix < nx, iy * nx + ix, -1)
    edge_cells[v_ids.ravel(), 0] = left.ravel()
    edge_cells[v_ids.ravel(), 1] = right.ravel()

    iy, ix = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    cells = (iy * nx + ix).ravel()
    cell_edges = np.empty((nx * ny, 4), dtype=np.int64)
    cell_edges[cells, 0] = (iy * nx + ix).ravel()                    # bottom
    cell_edges[cells, 1] = (n_h + iy * (nx + 1) + ix + 1).ravel()    # right
    cell_edges[cells, 2] = ((iy + 1) * nx + ix).ravel()              # top
    cell_edges[cells, 3] = (n_h + iy * (nx + 1) + ix).ravel()        # left
    return edge_vertices, edge_cells, cell_edges


@dataclass
class Mesh:
    """Structured quadrilateral mesh: fixed connectivity + vertex coordinates."""

    nx: int
    ny: int
    vertices: np.ndarray          # (n_vertices, 2)
    cell_vertices: np.ndarray = field(init=False)   # (n_cells, 4) BL,BR,TR,TL
    cell_edges: np.ndarray = field(init=False)      # (n_cells, 4) bottom,right,top,left
    edge_vertices: np.ndarray = field(init=False)   # (n_edges, 2) start,end
    edge_cells: np.ndarray = field(init=False)      # (n_edges, 2) minus,plus

    def __post_init__(self) -> None:
        nx, ny = self.nx, self.ny
        if self.vertices.shape != ((nx + 1) * (ny + 1), 2):
            raise ValueError("vertex array does not match nx, ny")
        iy, ix = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")

        def vid(jx, jy):
            return jy * (nx + 1) + jx

        cv = np.stack(
            [vid(ix, iy), vid(ix + 1, iy), vid(ix + 1, iy + 1), vid(ix, iy + 1)],
            axis=-1,
        )
        self.cell_vertices = cv.reshape(-1, 4)
        self.edge_vertices, self.edge_cells, self.cell_edges = _structured_edges(nx, ny)

    # -- sizes ------------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_edges(self) -> int:
        return self.edge_vertices.shape[0]

    @property
    def n_h_edges(self) -> int:
        return (self.ny + 1) * self.nx

    # -- geometry ---------------------------------------------------------
    def cell_corners(self) -> np.ndarray:
        """Corner coordinates (n_cells, 4, 2) in (BL, BR, TR, TL) order."""
        return self.vertices[self.cell_vertices]

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edge_vertices[:, 1]] - self.vertices[self.edge_vertices[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def edge_normals(self) -> np.ndarray:
        """Global unit normals per edge: +y for horizontal, +x for vertical
        (exactly, on tensor grids; rotated tangent on perturbed grids)."""
        d = self.vertices[self.edge_vertices[:, 1]] - self.vertices[self.edge_vertices[:, 0]]
        lengths = np.hypot(d[:, 0], d[:, 1])
        # Both families start at the lexicographically smaller endpoint, so
        # the two need opposite tangent rotations to land on +y / +x.
        n = np.empty_like(d)
        nh = self.n_h_edges
        n[:nh, 0] = -d[:nh, 1]
        n[:nh, 1] = d[:nh, 0]
        n[nh:, 0] = d[nh:, 1]
        n[nh:, 1] = -d[nh:, 0]
        return n / lengths[:, None]

    def boundary_edge_sides(self) -> np.ndarray:
        """Per-edge boundary side index into BOUNDARY_SIDES, -1 for interior."""
        side = np.full(self.n_edges, -1, dtype=np.int64)
        nh, nx, ny = self.n_h_edges, self.nx, self.ny
        h = np.arange(nh)
        side[h[h // nx == 0]] = 2                      # bottom row iy == 0
        side[h[h // nx == ny]] = 3                     # top row iy == ny
        v = np.arange(self.n_edges - nh)
        side[nh + v[v % (nx + 1) == 0]] = 0            # left column ix == 0
        side[nh + v[v % (nx + 1) == nx]] = 1           # right column ix == nx
        return side

    def jacobian_corner_dets(self) -> np.ndarray:
        """det J of the bilinear map at the four reference corners, (n_cells, 4).

        det J is affine in the reference coordinates, so positivity at the
        corners guarantees positivity (convexity) on the whole cell.
        """
        corners = self.cell_corners()
        ref = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        jac, det = bilinear_jacobians(corners, ref)
        return det


def bilinear_map(corners: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
    """Map reference points (n_q, 2) on [0,1]^2 to physical coords (n_c, n_q, 2)."""
    xh, yh = ref_pts[:, 0], ref_pts[:, 1]
    shape = np.stack(
        [(1 - xh) * (1 - yh), xh * (1 - yh), xh * yh, (1 - xh) * yh], axis=-1
    )  # (n_q, 4)
    return np.einsum("qc,ncd->nqd", shape, corners)


def bilinear_jacobians(
    corners: np.ndarray, ref_pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of the bilinear map at reference points.

    Returns (J, detJ) with J of shape (n_c, n_q, 2, 2) whose columns are
    dF/dxhat and dF/dyhat, and detJ of shape (n_c, n_q).
    """
    xh, yh = ref_pts[:, 0], ref_pts[:, 1]
    p0, p1, p2, p3 = corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3]
    dx = (
        (p1 - p0)[:, None, :] * (1 - yh)[None, :, None]
        + (p2 - p3)[:, None, :] * yh[None, :, None]
    )
    dy = (
        (p3 - p0)[:, None, :] * (1 - xh)[None, :, None]
        + (p2 - p1)[:, None, :] * xh[None, :, None]
    )
    jac = np.stack([dx, dy], axis=-1)  # columns are dx, dy
    det = dx[..., 0] * dy[..., 1] - dx[..., 1] * dy[..., 0]
    return jac, det


def build_grid(
    nx: int,
    ny: int,
    perturb: float = 0.0,
    seed: int = 0,
    px: int = 1,
    py: int = 1,
    perturb_subdomains: list[tuple[int, int]] | None = None,
) -> Mesh:
    """Build an nx-by-ny grid of the unit square, optionally perturbed.

    With perturb > 0, eligible vertices move by independent uniform offsets in
    [-perturb*hx, perturb*hx] x [-perturb*hy, perturb*hy].  Eligible means
    strictly interior to the domain; if perturb_subdomains lists (sx, sy)
    blocks of a px-by-py tensor partition, only vertices strictly interior to
    those subdomains move, so subdomain interfaces (and the outer boundary)
    stay put.  Deterministic for a fixed seed.
    """
    x = np.linspace(0.0, 1.0, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    xx, yy = np.meshgrid(x, y, indexing="xy")  # shape (ny+1, nx+1)
    verts = np.stack([xx.ravel(), yy.ravel()], axis=-1)

    if perturb > 0.0:
        if nx % px:
            raise ValueError(f"px = {px} does not divide nx = {nx}")
        if ny % py:
            raise ValueError(f"py = {py} does not divide ny = {ny}")
        mx, my = nx // px, ny // py
        iy, ix = np.divmod(np.arange((nx + 1) * (ny + 1)), nx + 1)
        eligible = (ix > 0) & (ix < nx) & (iy > 0) & (iy < ny)
        if perturb_subdomains is not None:
            inside = np.zeros_like(eligible)
            for sx, sy in perturb_subdomains:
                inside |= (
                    (ix > sx * mx) & (ix < (sx + 1) * mx)
                    & (iy > sy * my) & (iy < (sy + 1) * my)
                )
            eligible &= inside
        rng = np.random.default_rng(seed)
        offsets = rng.uniform(-perturb, perturb, size=(eligible.sum(), 2))
        offsets[:, 0] /= nx
        offsets[:, 1] /= ny
        verts[eligible] += offsets

    mesh = Mesh(nx, ny, verts)
    dets = mesh.jacobian_corner_dets()
    if np.any(dets <= 0.0):
        bad = int(np.nonzero(np.any(dets <= 0.0, axis=1))[0][0])
        raise ValueError(
            f"perturbation produced a non-convex cell (first: cell {bad}); "
            f"retry with a smaller magnitude"
        )
    return mesh


def refine(mesh: Mesh) -> Mesh:
    """Nested midpoint refinement: each quad splits into four.

    Old vertices are kept exactly; edge midpoints and cell centers are
    arithmetic means, so a once-perturbed coarse family refines into an
    asymptotically-parallelogram family that preserves approximation orders.
    """
    nx, ny = mesh.nx, mesh.ny
    grid = mesh.vertices.reshape(ny + 1, nx + 1, 2)
    fine = np.empty((2 * ny + 1, 2 * nx + 1, 2))
    fine[0::2, 0::2] = grid
    fine[0::2, 1::2] = 0.5 * (grid[:, :-1] + grid[:, 1:])
    fine[1::2, 0::2] = 0.5 * (grid[:-1, :] + grid[1:, :])
    fine[1::2, 1::2] = 0.25 * (
        grid[:-1, :-1] + grid[:-1, 1:] + grid[1:, :-1] + grid[1:, 1:]
    )
    return Mesh(2 * nx, 2 * ny, fine.reshape(-1, 2))


def build_refined_perturbed_grid(
    nx: int,
    ny: int,
    base: int,
    perturb: float,
    seed: int = 0,
    px: int = 1,
    py: int = 1,
    perturb_subdomains: list[tuple[int, int]] | None = None,
) -> Mesh:
    """Perturb a coarse base-by-base grid, then refine to nx-by-ny.

    Perturbing at the target resolution degrades the divergence accuracy of
    BDM elements on quadrilaterals; perturbing the coarse grid and refining
    by nested midpoints keeps full convergence orders while still exercising
    non-affine cells.  nx/base must be a power of two (same factor for ny).
    """
    if perturb == 0.0:
        return build_grid(nx, ny)
    factor = nx // base
    if base * factor != nx or factor < 1 or factor & (factor - 1):
        raise ValueError("nx must be base * 2^k")
    base_y = ny // factor
    if base_y * factor != ny:
        raise ValueError("ny must be divisible by the same refinement factor")
    mesh = build_grid(base, base_y, perturb, seed, px, py, perturb_subdomains)
    while mesh.nx < nx:
        mesh = refine(mesh)
    return mesh


# ---------------------------------------------------------------------------
# Boundary condition tagging and tensor partitions
# ---------------------------------------------------------------------------

MECH_KINDS = ("displacement", "traction")
FLOW_KINDS = ("pressure", "flux")


@dataclass
class BoundaryMap:
    """Boundary-condition kinds per side of the unit square.

    mech[side] is 'displacement' (natural datum for the stress row) or
    'traction' (essential constraint on stress normal-trace DOFs);
    flow[side] is 'pressure' (natural) or 'flux' (essential on velocity).
    """

    mech: dict[str, str] = field(
        default_factory=lambda: {s: "displacement" for s in BOUNDARY_SIDES}
    )
    flow: dict[str, str] = field(
        default_factory=lambda: {s: "pressure" for s in BOUNDARY_SIDES}
    )

    def __post_init__(self) -> None:
        for side in BOUNDARY_SIDES:
            if self.mech.get(side) not in MECH_KINDS:
                raise ValueError(f"bad mechanics BC for {side}: {self.mech.get(side)}")
            if self.flow.get(side) not in FLOW_KINDS:
                raise ValueError(f"bad flow BC for {side}: {self.flow.get(side)}")


@dataclass
class Subdomain:
    """One block of a tensor partition, with its own local structured mesh."""

    index: int
    sx: int
    sy: int
    mesh: Mesh
    cell_map: np.ndarray   # local cell id -> global cell id
    edge_map: np.ndarray   # local edge id -> global edge id
    # interface edges touching this subdomain:
    iface_local_edges: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    iface_index: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    iface_signs: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class Decomposition:
    """Tensor partition of a mesh into px-by-py non-overlapping subdomains."""

    mesh: Mesh
    px: int
    py: int
    subdomains: list[Subdomain]
    interface_edges: np.ndarray       # (E,) global edge ids, sorted by (si, sj, id)
    interface_pairs: np.ndarray       # (E, 2) subdomain pair (si, sj), si < sj
    bc: BoundaryMap

    @property
    def n_subdomains(self) -> int:
        return self.px * self.py

    @property
    def n_interface_edges(self) -> int:
        return int(self.interface_edges.shape[0])

    def local_bc(self, sub: Subdomain) -> BoundaryMap:
        """Boundary kinds for one subdomain's local mesh.

        A local side keeps the global kind only where it lies on the true
        external boundary; sides facing another subdomain are interfaces,
        whose data arrives through the multiplier, so they carry the
        natural kinds (displacement / pressure) and contribute no
        essential constraints.
        """
        external = {
            "left": sub.sx == 0,
            "right": sub.sx == self.px - 1,
            "bottom": sub.sy == 0,
            "top": sub.sy == self.py - 1,
        }
        mech = {s: self.bc.mech[s] if external[s] else "displacement"
                for s in BOUNDARY_SIDES}
        flow = {s: self.bc.flow[s] if external[s] else "pressure"
                for s in BOUNDARY_SIDES}
        return BoundaryMap(mech, flow)


def partition(mesh: Mesh, px: int, py: int, bc: BoundaryMap | None = None) -> Decomposition:
    """Partition a structured mesh into a px-by-py tensor decomposition.

    Subdomain index si = sy*px + sx.  Interface edges are the interior edges
    whose two cells belong to different subdomains, sorted by (si, sj, global
    edge id) with si < sj; the global edge normal points from subdomain si to
    sj, so si carries trace sign +1 and sj sign -1.
    """
    nx, ny = mesh.nx, mesh.ny
    if nx % px:
        raise ValueError(f"px = {px} does not divide nx = {nx}")
    if ny % py:
        raise ValueError(f"py = {py} does not divide ny = {ny}")
    if bc is None:
        bc = BoundaryMap()
    mx, my = nx // px, ny // py

    cell_iy, cell_ix = np.divmod(np.arange(mesh.n_cells), nx)
    sub_of_cell = (cell_iy // my) * px + cell_ix // mx

    inner = np.all(mesh.edge_cells >= 0, axis=1)
    s_minus = np.where(inner, sub_of_cell[mesh.edge_cells[:, 0]], -1)
    s_plus = np.where(inner, sub_of_cell[mesh.edge_cells[:, 1]], -1)
    is_iface = inner & (s_minus != s_plus)
    gids = np.nonzero(is_iface)[0]
    si = s_minus[gids]
    sj = s_plus[gids]
    # minus side has the lower subdomain index on tensor partitions (normal
    # points +x / +y, toward increasing block index); assert and sort.
    if np.any(si >= sj):
        raise AssertionError("interface orientation broke lexicographic order")
    order = np.lexsort((gids, sj, si))
    gids, si, sj = gids[order], si[order], sj[order]

    iface_pos = {g: k for k, g in enumerate(gids)}

    grid = mesh.vertices.reshape(ny + 1, nx + 1, 2)
    subdomains = []
    for sy in range(py):
        for sx in range(px):
            local_grid = grid[sy * my : (sy + 1) * my + 1, sx * mx : (sx + 1) * mx + 1]
            local = Mesh(mx, my, np.ascontiguousarray(local_grid.reshape(-1, 2)))
            ly, lx = np.divmod(np.arange(mx * my), mx)
            cell_map = (sy * my + ly) * nx + (sx * mx + lx)
            edge_map = np.empty(local.n_edges, dtype=np.int64)
            n_h_loc = local.n_h_edges
            hy, hx = np.divmod(np.arange(n_h_loc), mx)
            edge_map[:n_h_loc] = (sy * my + hy) * nx + (sx * mx + hx)
            vy, vx = np.divmod(np.arange(local.n_edges - n_h_loc), mx + 1)
            edge_map[n_h_loc:] = (
                mesh.n_h_edges + (sy * my + vy) * (nx + 1) + (sx * mx + vx)
            )
            sub = Subdomain(sy * px + sx, sx, sy, local, cell_map, edge_map)
            loc, pos, sign = [], [], []
            for le, ge in enumerate(edge_map):
                k = iface_pos.get(int(ge))
                if k is not None:
                    loc.append(le)
                    pos.append(k)
                    sign.append(1.0 if si[k] == sub.index else -1.0)
            sub.iface_local_edges = np.array(loc, dtype=np.int64)
            sub.iface_index = np.array(pos, dtype=np.int64)
            sub.iface_signs = np.array(sign)
            subdomains.append(sub)

    return Decomposition(
        mesh, px, py, subdomains, gids, np.stack([si, sj], axis=-1), bc
    )
