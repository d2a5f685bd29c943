"""Interface operators and Krylov solvers for the reduced problems.

Eliminating the subdomain unknowns reduces each time step to an interface
problem a(lam) = g in the multiplier coefficient space.  One operator
application solves, in every subdomain, the homogeneous ("star") problem
driven by lam and assembles the jump functionals

    displacement slots:  + sum_i <sigma_i* n_i, mu>
    pressure slots:      - sum_i <z_i* . n_i, mu>

The monolithic (coupled) operator is positive definite but nonsymmetric and
is solved with full-memory unpreconditioned GMRES; the elasticity and Darcy
operators of the split schemes are symmetric positive definite and solved
with conjugate gradients.  Stopping is on the relative 2-norm residual
||r_k|| / ||g||, with a zero initial guess.

Operators can be materialized into dense matrices (columns = apply(e_j),
computed via batched multi-RHS subdomain backsolves); iteration counts are
identical because the linear map is identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .subdomain import EDGE_SLOTS, SubdomainSolver, interface_dim, slot_masks


@dataclass
class KrylovReport:
    """Iteration record of one interface solve."""

    method: str
    iterations: int
    converged: bool
    residuals: np.ndarray        # relative residual history, residuals[0] = 1
    rhs_norm: float = 0.0

    @property
    def final_residual(self) -> float:
        return float(self.residuals[-1]) if len(self.residuals) else 0.0


class InterfaceOperator:
    """Matrix-free interface operator for one solve variant.

    variant is 'biot' (monolithic, displacement-rate + pressure slots),
    'elasticity' (displacement slots only), 'darcy' or 'velocity_mass'
    (pressure slots only).
    """

    def __init__(self, solvers: list[SubdomainSolver], variant: str, dt: float = 1.0):
        self.solvers = solvers
        self.variant = variant
        self.dt = float(dt)
        n_iface = solvers[0].R_u.shape[0] // EDGE_SLOTS
        self.n_edges = n_iface
        if variant == "biot":
            self.n = interface_dim(n_iface)
        elif variant == "elasticity":
            self.n = 4 * n_iface
        else:
            self.n = 2 * n_iface
        self._dense: np.ndarray | None = None
        for s in solvers:
            s.factorize(variant, self.dt)

    # -- application -------------------------------------------------------
    def apply(self, lam: np.ndarray) -> np.ndarray:
        """a(lam): star solves in all subdomains + jump assembly."""
        if self._dense is not None:
            return self._dense @ lam
        return self.apply_matrix_free(lam)

    def apply_matrix_free(self, lam: np.ndarray) -> np.ndarray:
        out = np.zeros_like(lam)
        for s in self.solvers:
            rhs = s.rhs_star(self.variant, lam, self.dt)
            x = s.solve(self.variant, rhs, self.dt)
            out += s.trace_out(self.variant, x)
        return out

    __call__ = apply

    # -- star-weighted inner product (monolithic analysis norm) ------------
    def star_weights(self) -> np.ndarray:
        """Diagonal of the weighted norm dt*||lam_u||^2 + ||lam_p||^2.

        The multiplier basis is L2-orthonormal per edge, so the continuous
        interface norms are exactly these weighted coefficient norms.
        """
        if self.variant != "biot":
            return np.ones(self.n)
        u_mask, _ = slot_masks(self.n_edges)
        w = np.ones(self.n)
        w[u_mask] = self.dt
        return w

    # -- materialization ---------------------------------------------------
    def materialize(self) -> np.ndarray:
        """Dense matrix with columns apply(e_j); enables fast repeated solves.

        Built subdomain-by-subdomain: unit multipliers only interact with the
        subdomains sharing the edge, so each subdomain contributes a dense
        block on its own interface slots via one multi-RHS backsolve.
        """
        if self._dense is None:
            M = np.zeros((self.n, self.n))
            for s in self.solvers:
                rows = self._own_rows(s)
                if rows.size == 0:
                    continue
                R = self._star_rhs_matrix(s, rows)
                X = s.factorize(self.variant, self.dt).solve(R)
                _, block = self._trace_rows(s, X)
                M[np.ix_(rows, rows)] += block
            self._dense = M
        return self._dense

    def _own_rows(self, s: SubdomainSolver) -> np.ndarray:
        """Interface slot indices this subdomain touches, variant layout."""
        if self.variant == "biot":
            return s.iface_slot_rows
        pos = np.sort(s.sub.iface_index)
        if self.variant == "elasticity":
            return (4 * pos[:, None] + np.arange(4)[None, :]).ravel()
        return (2 * pos[:, None] + np.arange(2)[None, :]).ravel()

    def _star_rhs_matrix(self, s: SubdomainSolver, rows: np.ndarray) -> np.ndarray:
        """Stacked star RHS columns for unit multipliers on `rows`."""
        dm = s.dofmap
        n_loc = dm.n_total(self.variant)
        R = np.zeros((n_loc, rows.size))
        if self.variant == "biot":
            off = dm.offsets("biot")
            R[: dm.n_sigma] = self.dt * s.R_u.T[:, rows].toarray()
            R[off[3] : off[4]] = -s.R_p.T[:, rows].toarray()
        elif self.variant == "elasticity":
            R[: dm.n_sigma] = s.R_u_split.T[:, rows].toarray()
        else:
            R[: dm.n_z] = -s.R_p_split.T[:, rows].toarray()
        return R

    def _trace_rows(self, s: SubdomainSolver, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Trace-out applied to solution columns, restricted to own rows."""
        rows = self._own_rows(s)
        dm = s.dofmap
        off = dm.offsets(self.variant)
        if self.variant == "biot":
            out = s.R_u[rows] @ X[: dm.n_sigma] - s.R_p[rows] @ X[off[3] : off[4]]
        elif self.variant == "elasticity":
            out = s.R_u_split[rows] @ X[: dm.n_sigma]
        else:
            out = -(s.R_p_split[rows] @ X[: dm.n_z])
        return rows, out

    # -- diagnostics -------------------------------------------------------
    def energy_identity(self, lam: np.ndarray) -> tuple[float, float]:
        """(a(lam).lam, subdomain energy) for the monolithic operator.

        The bilinear form equals the scaled star-field energy
        (1/dt) sum_i [ sigma*.A sigma* + 2 sigma*.A_sp p* + p*.(M_p+S_pp) p*
                       + dt z*.M_z z* ].
        """
        if self.variant != "biot":
            raise ValueError("energy identity applies to the monolithic operator")
        a_val = float(self.apply_matrix_free(lam) @ lam)
        energy = 0.0
        for s in self.solvers:
            x = s.solve("biot", s.rhs_star("biot", lam, self.dt), self.dt)
            f = s.split_fields("biot", x)
            b = s.blocks
            energy += (
                f["sigma"] @ (b.A_ss @ f["sigma"])
                + 2.0 * f["sigma"] @ (b.A_sp @ f["p"])
                + f["p"] @ ((b.M_p_diag + b.S_pp_diag) * f["p"])
                + self.dt * (f["z"] @ (b.M_z @ f["z"]))
            ) / self.dt
        return a_val, energy


def build_interface_rhs(
    solvers: list[SubdomainSolver], variant: str, bar_solutions: list[np.ndarray]
) -> np.ndarray:
    """g = -(jump of the bar fields): the interface equation is a(lam) = g."""
    g = None
    for s, x in zip(solvers, bar_solutions):
        t = s.trace_out(variant, x)
        g = -t if g is None else g - t
    return g


# ---------------------------------------------------------------------------
# Krylov solvers
# ---------------------------------------------------------------------------

def gmres(
    apply_op,
    b: np.ndarray,
    tol: float = 1e-6,
    max_iter: int | None = None,
    track_vectors: bool = False,
) -> tuple[np.ndarray, KrylovReport]:
    """Full-memory unpreconditioned GMRES with modified Gram-Schmidt.

    Stops when the relative residual ||b - A x_k|| / ||b|| drops below tol
    (zero initial guess).  The residual norm is maintained through Givens
    rotations, so the history is non-increasing by construction.
    """
    n = b.size
    if max_iter is None:
        max_iter = n
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), KrylovReport("gmres", 0, True, np.array([0.0]), 0.0)

    V = np.zeros((max_iter + 1, n))
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = bnorm
    V[0] = b / bnorm
    residuals = [1.0]
    k = 0
    for k in range(max_iter):
        w = apply_op(V[k])
        for j in range(k + 1):
            H[j, k] = w @ V[j]
            w -= H[j, k] * V[j]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] > 0.0:
            V[k + 1] = w / H[k + 1, k]
        for j in range(k):
            h1 = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
            H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
            H[j, k] = h1
        denom = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
        H[k, k] = denom
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        residuals.append(abs(g[k + 1]) / bnorm)
        if residuals[-1] <= tol:
            k += 1
            break
    else:
        k = max_iter
    y = np.linalg.solve(H[:k, :k], g[:k]) if k else np.zeros(0)
    x = V[:k].T @ y
    converged = residuals[-1] <= tol
    return x, KrylovReport("gmres", k, converged, np.array(residuals), bnorm)


def cg(
    apply_op,
    b: np.ndarray,
    tol: float = 1e-6,
    max_iter: int | None = None,
) -> tuple[np.ndarray, KrylovReport]:
    """Conjugate gradients for SPD interface operators (zero initial guess);
    stops on the relative 2-norm residual."""
    n = b.size
    if max_iter is None:
        max_iter = 4 * n
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), KrylovReport("cg", 0, True, np.array([0.0]), 0.0)
    x = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    rr = r @ r
    residuals = [1.0]
    it = 0
    while residuals[-1] > tol and it < max_iter:
        Ad = apply_op(d)
        alpha = rr / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        rr_new = r @ r
        residuals.append(float(np.sqrt(rr_new)) / bnorm)
        beta = rr_new / rr
        rr = rr_new
        d = r + beta * d
        it += 1
    return x, KrylovReport("cg", it, residuals[-1] <= tol, np.array(residuals), bnorm)


# ---------------------------------------------------------------------------
# Field of values
# ---------------------------------------------------------------------------

@dataclass
class FieldOfValues:
    """Extremes of the weighted Rayleigh quotient
    a(lam, lam) / (dt ||lam_u||^2 + ||lam_p||^2)."""

    min_quotient: float
    max_quotient: float
    probes: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def ratio(self) -> float:
        return self.max_quotient / self.min_quotient


def estimate_field_of_values(
    op: InterfaceOperator,
    n_probes: int = 100,
    seed: int = 0,
    exact: bool = False,
) -> FieldOfValues:
    """Sample (and optionally compute exactly) the interface field of values.

    Random probes give Rayleigh quotients of the symmetric part in the
    star-weighted inner product — all must be positive for a positive
    definite operator.  With exact=True the operator is materialized and the
    extremes are the eigenvalue range of W^{-1/2} sym(M) W^{-1/2}.
    """
    w = op.star_weights()
    rng = np.random.default_rng(seed)
    probes = np.empty(n_probes)
    for i in range(n_probes):
        lam = rng.standard_normal(op.n)
        probes[i] = float(op.apply(lam) @ lam) / float((w * lam) @ lam)
    if exact:
        M = op.materialize()
        S = 0.5 * (M + M.T)
        rw = 1.0 / np.sqrt(w)
        eigs = np.linalg.eigvalsh(rw[:, None] * S * rw[None, :])
        return FieldOfValues(float(eigs[0]), float(eigs[-1]), probes)
    return FieldOfValues(float(probes.min()), float(probes.max()), probes)
