"""Time-stepping drivers: monolithic, drained-split, and fixed-stress.

All schemes share one initialization:

* p^0: cellwise L2 projection of the initial pressure;
* (sigma^0, u^0, gamma^0): quasi-static elasticity solve with the coupling
  term -(A alpha p^0 I, tau) and the t=0 mechanics data, via interface CG;
* z^0: velocity-mass solve M_z z^0 = B_p^T p^0 - boundary data, via
  interface CG for the pressure-trace multiplier;
* sigma^{-1} := sigma^0 (so the first fixed-stress flow step sees a zero
  stress increment).

Per time step:

* monolithic: one coupled time-differenced step; interface GMRES for the
  (displacement-rate, pressure) trace multiplier, then displacement and
  rotation are recovered by u^{n+1} = u^n + dt*udot^{n+1} (same for gamma
  and the displacement trace).
* drained split: elasticity step with the explicit pressure coupling
  -(A alpha p^n I, tau) (interface CG), then the flow step with the stress
  increment source -(A alpha (sigma^{n+1}-sigma^n)/dt I, w) (interface CG).
* fixed stress: flow step first using the lagged stress increment
  sigma^n - sigma^{n-1}, then the elasticity step with p^{n+1}.

A stability monitor accumulates the dissipation sum (c0/dt)||p^{n+1}-p^n||^2
and tracks the running maximum of the energy ||z||^2 + ||p||^2 +
||A^{1/2} sigma||^2 + ||u||^2 + ||gamma||^2, normalized by the
initial-data reference (||p^0||^2 + ||z^0||^2 for drained split, ||z^0||^2
for fixed stress).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .assembly import MaterialField, ProblemData
from .interface import InterfaceOperator, KrylovReport, build_interface_rhs, cg, gmres
from .mesh import Decomposition
from .subdomain import LocalState, SubdomainSolver, build_subdomain_solvers, slot_masks

SCHEMES = ("monolithic", "drained_split", "fixed_stress")


@dataclass
class SchemeState:
    """Time-discrete state: per-subdomain fields plus recovery accumulators."""

    t: float
    step: int
    locals: list[LocalState]
    lam_u: np.ndarray            # accumulated displacement-trace multiplier
    prev_sigma: list[np.ndarray]  # sigma^{n-1} (fixed-stress lag)


@dataclass
class StabilityMonitor:
    """Running left-hand side of the splitting stability estimates."""

    dt: float
    c0: float
    reference: float = 0.0
    sum_dp: float = 0.0
    max_energy: float = 0.0
    energy_series: list[float] = dc_field(default_factory=list)

    def set_reference(self, solvers: list[SubdomainSolver], state: SchemeState,
                      kind: str) -> None:
        """kind 'p_and_z' -> ||p^0||^2 + ||z^0||^2; 'z_only' -> ||z^0||^2."""
        ref = 0.0
        for s, loc in zip(solvers, state.locals):
            n = s.energy_norms(loc)
            ref += n["z"] + (n["p"] if kind == "p_and_z" else 0.0)
        self.reference = ref

    def update(self, solvers: list[SubdomainSolver], state: SchemeState,
               p_prev: list[np.ndarray]) -> None:
        energy = 0.0
        for s, loc, pp in zip(solvers, state.locals, p_prev):
            n = s.energy_norms(loc)
            energy += n["z"] + n["p"] + n["Asigma"] + n["u"] + n["gamma"]
            dp = loc.p - pp
            self.sum_dp += (self.c0 / self.dt) * float(s.blocks.vol @ dp**2)
        self.max_energy = max(self.max_energy, energy)
        self.energy_series.append(energy)

    @property
    def lhs(self) -> float:
        return self.sum_dp + self.max_energy

    @property
    def ratio(self) -> float:
        return self.lhs / self.reference if self.reference > 0.0 else np.inf


@dataclass
class RunResult:
    """Outcome of one time-stepped run."""

    scheme: str
    dt: float
    n_steps: int
    times: list[float]
    init_reports: dict[str, KrylovReport]
    step_reports: list[dict[str, KrylovReport]]
    monitor: StabilityMonitor
    state: SchemeState

    def average_iterations(self, key: str) -> float:
        """Per-time-step average of one solver's iteration counts
        (initialization solves excluded)."""
        counts = [r[key].iterations for r in self.step_reports if key in r]
        return float(np.mean(counts)) if counts else 0.0

    def all_converged(self) -> bool:
        reps = list(self.init_reports.values())
        for r in self.step_reports:
            reps.extend(r.values())
        return all(rep.converged for rep in reps)


class DDProblem:
    """Decomposed Biot problem: subdomain solvers + interface operators."""

    def __init__(
        self,
        decomp: Decomposition,
        material: MaterialField,
        data: ProblemData,
        use_materialized: bool = True,
        n_gauss: int = 3,
        max_iter: int | None = None,
    ):
        self.decomp = decomp
        self.material = material
        self.data = data
        self.use_materialized = use_materialized
        self.max_iter = max_iter
        self.solvers = build_subdomain_solvers(decomp, material, n_gauss)
        self._ops: dict[tuple[str, float], InterfaceOperator] = {}
        self.u_mask, self.p_mask = slot_masks(decomp.n_interface_edges)

    def operator(self, variant: str, dt: float = 1.0) -> InterfaceOperator:
        if variant in ("elasticity", "velocity_mass"):
            dt = 1.0
        key = (variant, float(dt))
        if key not in self._ops:
            op = InterfaceOperator(self.solvers, variant, dt)
            if self.use_materialized and op.n:
                op.materialize()
            self._ops[key] = op
        return self._ops[key]

    # -- generic bar + interface + star solve ------------------------------
    def _dd_solve(
        self,
        variant: str,
        bar_rhs: list[np.ndarray],
        dt: float,
        tol: float,
        krylov: Callable,
    ) -> tuple[list[np.ndarray], np.ndarray, KrylovReport]:
        bars = [s.solve(variant, r, dt) for s, r in zip(self.solvers, bar_rhs)]
        g = build_interface_rhs(self.solvers, variant, bars)
        op = self.operator(variant, dt)
        lam, report = krylov(op.apply, g, tol, self.max_iter)
        sols = []
        for s, xb in zip(self.solvers, bars):
            xs = s.solve(variant, s.rhs_star(variant, lam, dt), dt)
            sols.append(xb + xs)
        return sols, lam, report

    # -- initialization ----------------------------------------------------
    def initialize(self, dt: float, tol: float = 1e-9) -> tuple[SchemeState, dict]:
        """Shared initial state (projection + elasticity CG + velocity-mass CG)."""
        t0 = 0.0
        p0 = [s.project_pressure(self.data.p0) for s in self.solvers]
        rhs_el = [
            s.rhs_bar_elasticity(p, self.data, t0) for s, p in zip(self.solvers, p0)
        ]
        sols, lam_u0, rep_el = self._dd_solve("elasticity", rhs_el, 1.0, tol, cg)
        locals_ = []
        for s, x, p in zip(self.solvers, sols, p0):
            f = s.split_fields("elasticity", x)
            locals_.append(
                LocalState(
                    f["sigma"].copy(), f["u"].copy(), f["gamma"].copy(),
                    np.zeros(s.dofmap.n_z), p.copy(),
                )
            )
        rhs_vm = [
            s.rhs_bar_velocity_mass(p, self.data, t0) for s, p in zip(self.solvers, p0)
        ]
        zsols, _, rep_vm = self._dd_solve("velocity_mass", rhs_vm, 1.0, tol, cg)
        for loc, z in zip(locals_, zsols):
            loc.z[:] = z
        state = SchemeState(
            t=t0,
            step=0,
            locals=locals_,
            lam_u=lam_u0.copy(),
            prev_sigma=[loc.sigma.copy() for loc in locals_],
        )
        return state, {"cg_elasticity": rep_el, "cg_velocity_mass": rep_vm}

    # -- steps -------------------------------------------------------------
    def step_monolithic(
        self, state: SchemeState, dt: float, tol: float
    ) -> tuple[SchemeState, dict[str, KrylovReport]]:
        t_next = state.t + dt
        rhs = [
            s.rhs_bar_biot(loc, self.data, state.t, t_next, dt)
            for s, loc in zip(self.solvers, state.locals)
        ]
        sols, lam, rep = self._dd_solve("biot", rhs, dt, tol, gmres)
        new_locals = []
        for s, x, loc in zip(self.solvers, sols, state.locals):
            f = s.split_fields("biot", x)
            new_locals.append(
                LocalState(
                    f["sigma"].copy(),
                    loc.u + dt * f["u"],
                    loc.gamma + dt * f["gamma"],
                    f["z"].copy(),
                    f["p"].copy(),
                )
            )
        lam_u = state.lam_u + dt * lam[self.u_mask]
        new_state = SchemeState(
            t_next, state.step + 1, new_locals, lam_u,
            [loc.sigma.copy() for loc in state.locals],
        )
        return new_state, {"gmres": rep}

    def step_drained_split(
        self, state: SchemeState, dt: float, tol: float
    ) -> tuple[SchemeState, dict[str, KrylovReport]]:
        t_next = state.t + dt
        rhs_el = [
            s.rhs_bar_elasticity(loc.p, self.data, t_next)
            for s, loc in zip(self.solvers, state.locals)
        ]
        mech, lam_u, rep_el = self._dd_solve("elasticity", rhs_el, 1.0, tol, cg)
        mech_fields = [s.split_fields("elasticity", x) for s, x in zip(self.solvers, mech)]
        rhs_da = [
            s.rhs_bar_darcy(
                loc.p, f["sigma"] - loc.sigma, self.data, t_next, dt
            )
            for s, loc, f in zip(self.solvers, state.locals, mech_fields)
        ]
        flow, _, rep_da = self._dd_solve("darcy", rhs_da, dt, tol, cg)
        new_locals = []
        for s, f, x in zip(self.solvers, mech_fields, flow):
            fl = s.split_fields("darcy", x)
            new_locals.append(
                LocalState(
                    f["sigma"].copy(), f["u"].copy(), f["gamma"].copy(),
                    fl["z"].copy(), fl["p"].copy(),
                )
            )
        new_state = SchemeState(
            t_next, state.step + 1, new_locals, lam_u.copy(),
            [loc.sigma.copy() for loc in state.locals],
        )
        return new_state, {"cg_elasticity": rep_el, "cg_darcy": rep_da}

    def step_fixed_stress(
        self, state: SchemeState, dt: float, tol: float
    ) -> tuple[SchemeState, dict[str, KrylovReport]]:
        t_next = state.t + dt
        rhs_da = [
            s.rhs_bar_darcy(
                loc.p, loc.sigma - sig_m1, self.data, t_next, dt
            )
            for s, loc, sig_m1 in zip(self.solvers, state.locals, state.prev_sigma)
        ]
        flow, _, rep_da = self._dd_solve("darcy", rhs_da, dt, tol, cg)
        flow_fields = [s.split_fields("darcy", x) for s, x in zip(self.solvers, flow)]
        rhs_el = [
            s.rhs_bar_elasticity(fl["p"], self.data, t_next)
            for s, fl in zip(self.solvers, flow_fields)
        ]
        mech, lam_u, rep_el = self._dd_solve("elasticity", rhs_el, 1.0, tol, cg)
        new_locals = []
        for s, x, fl in zip(self.solvers, mech, flow_fields):
            f = s.split_fields("elasticity", x)
            new_locals.append(
                LocalState(
                    f["sigma"].copy(), f["u"].copy(), f["gamma"].copy(),
                    fl["z"].copy(), fl["p"].copy(),
                )
            )
        new_state = SchemeState(
            t_next, state.step + 1, new_locals, lam_u.copy(),
            [loc.sigma.copy() for loc in state.locals],
        )
        return new_state, {"cg_darcy": rep_da, "cg_elasticity": rep_el}

    # -- full runs ---------------------------------------------------------
    def run(
        self,
        scheme: str,
        dt: float,
        n_steps: int,
        tol: float = 1e-6,
        init_tol: float | None = None,
        observer: Callable | None = None,
    ) -> RunResult:
        """Initialize and advance n_steps; observer(self, state) is called on
        the initial state and after every step."""
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        step_fn = {
            "monolithic": self.step_monolithic,
            "drained_split": self.step_drained_split,
            "fixed_stress": self.step_fixed_stress,
        }[scheme]
        state, init_reports = self.initialize(dt, init_tol if init_tol else tol)
        monitor = StabilityMonitor(dt, self.material.c0)
        monitor.set_reference(
            self.solvers, state,
            "z_only" if scheme == "fixed_stress" else "p_and_z",
        )
        if observer is not None:
            observer(self, state)
        times = [state.t]
        step_reports = []
        for _ in range(n_steps):
            p_prev = [loc.p.copy() for loc in state.locals]
            state, reports = step_fn(state, dt, tol)
            monitor.update(self.solvers, state, p_prev)
            step_reports.append(reports)
            times.append(state.t)
            if observer is not None:
                observer(self, state)
        return RunResult(
            scheme, dt, n_steps, times, init_reports, step_reports, monitor, state
        )


# ---------------------------------------------------------------------------
# Single-domain reference solver (plain backward Euler, direct solves)
# ---------------------------------------------------------------------------

class SingleDomainSolver:
    """Undifferenced backward-Euler solver on the global mesh (no interfaces).

    Used as the reference the decomposed monolithic scheme must reproduce to
    solver tolerance, and for any direct-solve convenience runs.
    """

    def __init__(self, decomp_or_mesh, material: MaterialField, data: ProblemData,
                 bc=None, n_gauss: int = 3):
        from .mesh import Decomposition, partition

        if isinstance(decomp_or_mesh, Decomposition):
            decomp = decomp_or_mesh
            if decomp.n_subdomains != 1:
                decomp = partition(decomp.mesh, 1, 1, decomp.bc)
        else:
            decomp = partition(decomp_or_mesh, 1, 1, bc)
        self.solver = SubdomainSolver(decomp.subdomains[0], material, decomp, n_gauss)
        self.data = data

    def initialize(self) -> LocalState:
        s = self.solver
        p0 = s.project_pressure(self.data.p0)
        x = s.solve("elasticity", s.rhs_bar_elasticity(p0, self.data, 0.0))
        f = s.split_fields("elasticity", x)
        z = s.solve("velocity_mass", s.rhs_bar_velocity_mass(p0, self.data, 0.0))
        return LocalState(f["sigma"].copy(), f["u"].copy(), f["gamma"].copy(),
                          z.copy(), p0.copy())

    def step(self, state: LocalState, t: float, dt: float) -> LocalState:
        s = self.solver
        rhs = s.rhs_bar_biot_total(state, self.data, t + dt, dt)
        f = s.split_fields("biot_total", s.solve("biot_total", rhs, dt))
        return LocalState(f["sigma"].copy(), f["u"].copy(), f["gamma"].copy(),
                          f["z"].copy(), f["p"].copy())

    def run(self, dt: float, n_steps: int) -> list[LocalState]:
        """States [initial, step1, ..., stepN]."""
        state = self.initialize()
        states = [state]
        for n in range(n_steps):
            state = self.step(state, n * dt, dt)
            states.append(state)
        return states
