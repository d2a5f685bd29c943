"""Command-line front end: run configuration, experiment driver, emission.

Configuration is a plain INI file read by configparser.  Sections and keys
(all optional except the [run] section itself; defaults in RunConfig):

  [run]       scheme (monolithic | drained_split | fixed_stress; aliases
              mono/ds/fs), nx, ny, px, py, dt, n_steps or final_time, tol,
              max_iter, manufactured (bool), use_materialized (bool)
  [material]  mu, lam, perm, c0, alpha, nu, porosity_file,
              permeability_file, field_seed, span_decades, log10_center,
              correlation, contrast
  [bc]        mech_left/right/bottom/top in {displacement, traction},
              flow_left/right/bottom/top in {pressure, flux}; when the
              section is absent, manufactured runs clamp displacement and
              pressure everywhere and heterogeneous runs use the
              pressure-driven-flow table (left traction+pressure, right
              displacement+pressure, bottom/top traction+no-flow)
  [mesh]      perturb, perturb_seed, perturb_base (0 = perturb at final
              resolution; >0 = perturb that coarse grid, refine by nested
              midpoints), perturb_subdomains ("0,0 1,1")
  [output]    directory, snapshot_every (0 = no field snapshots)
  [sweep]     nx_list ("4 8 16 32 64")

Subcommands: run, sweep, validate-config.  `--set section.key=value`
overrides any config key.  Outputs are CSV files with fixed float formats,
so a rerun of the same configuration is byte-identical, plus legacy-ASCII
unstructured-grid snapshots and a raw-DOF CSV per snapshot for exact
reload.

Numerical imports happen inside functions: `main` first copies the
BIOTDD_THREADS environment variable (when set) into the BLAS/OpenMP thread
variables, which must precede the first numpy import to take effect.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

THREAD_ENV = "BIOTDD_THREADS"
_THREAD_TARGETS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

SIDES = ("left", "right", "bottom", "top")
SCHEME_ALIASES = {"mono": "monolithic", "ds": "drained_split", "fs": "fixed_stress"}
SCHEME_NAMES = ("monolithic", "drained_split", "fixed_stress")

_FMT = "%.17g"


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


def apply_thread_env(env=os.environ) -> None:
    """Copy BIOTDD_THREADS into the BLAS/OpenMP thread-count variables."""
    value = env.get(THREAD_ENV)
    if not value:
        return
    if not value.isdigit() or int(value) < 1:
        raise ConfigError(f"{THREAD_ENV} must be a positive integer, got {value!r}")
    for name in _THREAD_TARGETS:
        env.setdefault(name, value)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """One experiment: discretization, scheme, physics, data, outputs."""

    scheme: str = "monolithic"
    nx: int = 16
    ny: int = 16
    px: int = 2
    py: int = 2
    dt: float = 1e-3
    n_steps: int = 100
    final_time: float | None = None
    tol: float = 1e-6
    max_iter: int = 5000
    manufactured: bool = True
    use_materialized: bool = True
    # material / physics
    mu: float = 100.0
    lam: float = 100.0
    perm: float = 1.0
    c0: float = 1.0
    alpha: float = 1.0
    nu: float = 0.2
    porosity_file: str | None = None
    permeability_file: str | None = None
    field_seed: int | None = None
    span_decades: float = 7.0
    log10_center: float = 0.0
    correlation: float = 4.0
    contrast: float = 0.0
    # boundary conditions (None = kind-appropriate default)
    mech_bc: dict[str, str] | None = None
    flow_bc: dict[str, str] | None = None
    # mesh perturbation
    perturb: float = 0.0
    perturb_seed: int = 0
    perturb_base: int = 0
    perturb_subdomains: list[tuple[int, int]] | None = None
    # outputs
    output_dir: str = "out"
    snapshot_every: int = 0

    def validate(self) -> None:
        """Raise ConfigError naming the first violated key."""
        if self.scheme not in SCHEME_NAMES:
            raise ConfigError(
                f"run.scheme must be one of {SCHEME_NAMES} (or mono/ds/fs), "
                f"got {self.scheme!r}"
            )
        for key in ("nx", "ny", "px", "py"):
            if getattr(self, key) < 1:
                raise ConfigError(f"run.{key} must be a positive integer")
        if self.nx % self.px:
            raise ConfigError(f"run.px = {self.px} must divide run.nx = {self.nx}")
        if self.ny % self.py:
            raise ConfigError(f"run.py = {self.py} must divide run.ny = {self.ny}")
        if not self.dt > 0.0:
            raise ConfigError("run.dt must be positive")
        if self.n_steps < 1:
            raise ConfigError("run.n_steps must be at least 1")
        if self.final_time is not None:
            gap = abs(self.n_steps * self.dt - self.final_time)
            if gap > 1e-12 * max(1.0, abs(self.final_time)):
                raise ConfigError(
                    f"run.final_time = {self.final_time} is inconsistent with "
                    f"n_steps*dt = {self.n_steps * self.dt}"
                )
        if not 0.0 < self.tol < 1.0:
            raise ConfigError("run.tol must lie strictly between 0 and 1")
        if self.max_iter < 1:
            raise ConfigError("run.max_iter must be at least 1")
        if not self.mu > 0.0:
            raise ConfigError("material.mu must be positive")
        if self.lam < 0.0:
            raise ConfigError("material.lam must be nonnegative")
        if not self.perm > 0.0:
            raise ConfigError("material.perm must be positive")
        if self.c0 < 0.0:
            raise ConfigError("material.c0 must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("material.alpha must lie in (0, 1]")
        if not 0.0 < self.nu < 0.5:
            raise ConfigError("material.nu must lie in (0, 0.5)")
        if self.contrast < 0.0:
            raise ConfigError("material.contrast must be nonnegative")
        if (self.porosity_file is None) != (self.permeability_file is None):
            raise ConfigError(
                "material.porosity_file and material.permeability_file must be "
                "given together"
            )
        has_fields = self.porosity_file is not None or self.field_seed is not None
        if self.manufactured and has_fields:
            raise ConfigError(
                "run.manufactured = true excludes material field inputs"
            )
        for attr, allowed in (("mech_bc", ("displacement", "traction")),
                              ("flow_bc", ("pressure", "flux"))):
            bcs = getattr(self, attr)
            if bcs is None:
                continue
            for side in SIDES:
                if bcs.get(side) not in allowed:
                    raise ConfigError(
                        f"bc.{attr[:4]}_{side} must be one of {allowed}, "
                        f"got {bcs.get(side)!r}"
                    )
        if not 0.0 <= self.perturb < 0.5:
            raise ConfigError("mesh.perturb must lie in [0, 0.5)")
        if self.perturb_base:
            if self.perturb_base < 1 or self.nx % self.perturb_base or \
                    self.ny % self.perturb_base:
                raise ConfigError(
                    "mesh.perturb_base must divide run.nx and run.ny"
                )
            for m in (self.nx // self.perturb_base, self.ny // self.perturb_base):
                if m & (m - 1):
                    raise ConfigError(
                        "run.nx/ny must be mesh.perturb_base times a power of two"
                    )
        if self.snapshot_every < 0:
            raise ConfigError("output.snapshot_every must be nonnegative")


def _parse_subdomain_list(text: str) -> list[tuple[int, int]]:
    """Parse '0,0 1,1' into [(0, 0), (1, 1)]."""
    out = []
    for tok in text.split():
        parts = tok.split(",")
        if len(parts) != 2:
            raise ConfigError(
                f"mesh.perturb_subdomains entries must be ix,iy pairs, got {tok!r}"
            )
        try:
            out.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ConfigError(
                f"mesh.perturb_subdomains entries must be integers, got {tok!r}"
            ) from None
    return out


def _read_ini(path, overrides=None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    found = cp.read(path)
    if not found:
        raise ConfigError(f"config file not found: {path}")
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"override must look like section.key=value, got {item!r}"
            )
        skey, value = item.split("=", 1)
        section, key = skey.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section.strip(), key.strip(), value.strip())
    if not cp.has_section("run"):
        raise ConfigError("config must have a [run] section")
    return cp


def _get(cp, section, key, conv, current):
    if not cp.has_section(section) or key not in cp[section]:
        return current
    raw = cp[section][key]
    try:
        if conv is bool:
            return cp[section].getboolean(key)
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None


def load_config(path, overrides=None) -> RunConfig:
    """Read an INI file (plus section.key=value overrides) into a RunConfig."""
    cp = _read_ini(path, overrides)
    cfg = RunConfig()
    scheme = _get(cp, "run", "scheme", str, cfg.scheme).strip().lower()
    cfg.scheme = SCHEME_ALIASES.get(scheme, scheme)
    for key in ("nx", "ny", "px", "py", "n_steps", "max_iter"):
        setattr(cfg, key, _get(cp, "run", key, int, getattr(cfg, key)))
    for key in ("dt", "tol"):
        setattr(cfg, key, _get(cp, "run", key, float, getattr(cfg, key)))
    cfg.final_time = _get(cp, "run", "final_time", float, cfg.final_time)
    if cfg.final_time is not None and not (
            cp.has_section("run") and "n_steps" in cp["run"]):
        cfg.n_steps = max(1, round(cfg.final_time / cfg.dt))
    for key in ("manufactured", "use_materialized"):
        setattr(cfg, key, _get(cp, "run", key, bool, getattr(cfg, key)))
    for key in ("mu", "lam", "perm", "c0", "alpha", "nu",
                "span_decades", "log10_center", "correlation", "contrast"):
        setattr(cfg, key, _get(cp, "material", key, float, getattr(cfg, key)))
    cfg.porosity_file = _get(cp, "material", "porosity_file", str,
                             cfg.porosity_file)
    cfg.permeability_file = _get(cp, "material", "permeability_file", str,
                                 cfg.permeability_file)
    cfg.field_seed = _get(cp, "material", "field_seed", int, cfg.field_seed)
    if cp.has_section("bc"):
        mech = {s: _get(cp, "bc", f"mech_{s}", str, "displacement").strip()
                for s in SIDES}
        flow = {s: _get(cp, "bc", f"flow_{s}", str, "pressure").strip()
                for s in SIDES}
        cfg.mech_bc, cfg.flow_bc = mech, flow
    cfg.perturb = _get(cp, "mesh", "perturb", float, cfg.perturb)
    cfg.perturb_seed = _get(cp, "mesh", "perturb_seed", int, cfg.perturb_seed)
    cfg.perturb_base = _get(cp, "mesh", "perturb_base", int, cfg.perturb_base)
    subs = _get(cp, "mesh", "perturb_subdomains", str, None)
    if subs is not None:
        cfg.perturb_subdomains = _parse_subdomain_list(subs)
    cfg.output_dir = _get(cp, "output", "directory", str, cfg.output_dir)
    cfg.snapshot_every = _get(cp, "output", "snapshot_every", int,
                              cfg.snapshot_every)
    cfg.validate()
    return cfg


def load_sweep_levels(path, overrides=None) -> list[int]:
    """Read [sweep] nx_list from a config file (empty list when absent)."""
    cp = _read_ini(path, overrides)
    raw = _get(cp, "sweep", "nx_list", str, "")
    try:
        return [int(tok) for tok in raw.split()]
    except ValueError:
        raise ConfigError(f"sweep.nx_list: cannot parse {raw!r}") from None


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

def _default_bc(cfg: RunConfig):
    """BC table when the config gives none: clamp everything (manufactured)
    or the pressure-driven-flow table (heterogeneous)."""
    if cfg.manufactured:
        mech = {s: "displacement" for s in SIDES}
        flow = {s: "pressure" for s in SIDES}
    else:
        mech = {"left": "traction", "right": "displacement",
                "bottom": "traction", "top": "traction"}
        flow = {"left": "pressure", "right": "pressure",
                "bottom": "flux", "top": "flux"}
    return mech, flow


def pressure_driven_data(alpha: float):
    """Flow from left to right driven by the pressure drop p = 1 - x.

    Zero sources; boundary pressure 1 - x (1 on the left inflow, 0 on the
    right outflow); total-stress balance on the left inflow face
    (sigma n = -alpha p n); traction-free top and bottom with no flow
    through them; the right face is clamped.
    """
    import numpy as np

    def f(x, t):
        return np.zeros(x.shape[:-1] + (2,))

    def g(x, t):
        return np.zeros(x.shape[:-1])

    def gu(x, t):
        return np.zeros(x.shape[:-1] + (2,))

    def gp(x, t):
        return 1.0 - x[..., 0]

    def p0(x):
        return 1.0 - x[..., 0]

    def traction(x, t, n_out):
        # Vertical faces carry the fluid-pressure load; horizontal faces are
        # traction-free.
        load = np.where(np.abs(n_out[..., 0]) > 0.5, -alpha * gp(x, t), 0.0)
        return load[..., None] * n_out

    def flux(x, t, n_out):
        return np.zeros(x.shape[:-1])

    from .assembly import ProblemData

    return ProblemData(f, g, gu, gp, p0, traction=traction, flux=flux)


def build_problem(cfg: RunConfig):
    """Mesh + partition + material + data per the configuration.

    Returns (problem, case) where case is the manufactured reference
    solution (None for heterogeneous/pressure-driven runs).
    """
    import numpy as np

    from .assembly import MaterialField
    from .ingest import FieldSpec, generate_field, lame_from_E, \
        load_field, young_modulus
    from .mesh import BoundaryMap, build_grid, build_refined_perturbed_grid, \
        partition
    from .schemes import DDProblem
    from .verify import example_case

    if cfg.perturb > 0.0 and cfg.perturb_base:
        mesh = build_refined_perturbed_grid(
            cfg.nx, cfg.ny, base=cfg.perturb_base, perturb=cfg.perturb,
            seed=cfg.perturb_seed, px=cfg.px, py=cfg.py,
            perturb_subdomains=cfg.perturb_subdomains,
        )
    else:
        mesh = build_grid(
            cfg.nx, cfg.ny, perturb=cfg.perturb, seed=cfg.perturb_seed,
            px=cfg.px, py=cfg.py, perturb_subdomains=cfg.perturb_subdomains,
        )
    mech, flow = (cfg.mech_bc, cfg.flow_bc)
    if mech is None or flow is None:
        mech, flow = _default_bc(cfg)
    bc = BoundaryMap(dict(mech), dict(flow))
    decomp = partition(mesh, cfg.px, cfg.py, bc)

    case = None
    if cfg.manufactured:
        case = example_case(mu=cfg.mu, lam=cfg.lam, perm=cfg.perm,
                            c0=cfg.c0, alpha=cfg.alpha)
        material = case.material(mesh.n_cells)
        data = case.data()
    else:
        if cfg.porosity_file is not None:
            phi = load_field(cfg.porosity_file, cfg.nx, cfg.ny,
                             positive=False)
            perm_values = load_field(cfg.permeability_file, cfg.nx,
                                     cfg.ny).values
        elif cfg.field_seed is not None:
            perm_values = generate_field(cfg.field_seed, FieldSpec(
                cfg.nx, cfg.ny, kind="permeability",
                span_decades=cfg.span_decades,
                log10_center=cfg.log10_center,
                correlation=cfg.correlation,
                contrast=cfg.contrast)).values
            phi = generate_field(cfg.field_seed + 1, FieldSpec(
                cfg.nx, cfg.ny, kind="porosity",
                correlation=cfg.correlation))
        else:
            phi = None
            perm_values = np.full(mesh.n_cells, cfg.perm)
        if phi is not None:
            lam_arr, mu_arr = lame_from_E(young_modulus(phi.values), cfg.nu)
        else:
            lam_arr = np.full(mesh.n_cells, cfg.lam)
            mu_arr = np.full(mesh.n_cells, cfg.mu)
        material = MaterialField(mu_arr, lam_arr, perm_values,
                                 c0=cfg.c0, alpha=cfg.alpha)
        data = pressure_driven_data(cfg.alpha)
    problem = DDProblem(decomp, material, data,
                        use_materialized=cfg.use_materialized,
                        max_iter=cfg.max_iter)
    return problem, case


# ---------------------------------------------------------------------------
# Field emission
# ---------------------------------------------------------------------------

def emit_fields(state, mesh, path_base) -> list[str]:
    """Write one solution snapshot: legacy-ASCII grid file + raw-DOF CSV.

    The grid file carries cell data (pressure, rotation scalars; cell-
    averaged displacement and velocity vectors; the cell-averaged stress
    tensor); the CSV holds every DOF coefficient at full precision so
    load_state_csv reproduces the state bit-identically.
    """
    import numpy as np

    from .assembly import _bdm_global
    from .spaces import cell_geometry

    geo = cell_geometry(mesh, 2)
    bdm = _bdm_global(mesh)
    n_bdm = 2 * mesh.n_edges

    def bdm_cell_average(coeff):
        local = coeff[bdm]
        vals = np.einsum("cq,clqd,cl->cd", geo.weights, geo.phi, local)
        return vals / geo.cell_volumes[:, None]

    u_cell = state.u.reshape(mesh.n_cells, 2)
    z_cell = bdm_cell_average(state.z)
    srow_x = bdm_cell_average(state.sigma[:n_bdm])
    srow_y = bdm_cell_average(state.sigma[n_bdm:])

    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    vtk_path = base.with_suffix(".vtk")
    with open(vtk_path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("five-field poroelastic state\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{_FMT % x} {_FMT % y} 0\n")
        fh.write(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}\n")
        for corners in mesh.cell_vertices:
            fh.write("4 " + " ".join(str(int(v)) for v in corners) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_cells}\n")
        fh.write("9\n" * mesh.n_cells)
        fh.write(f"CELL_DATA {mesh.n_cells}\n")
        for name, arr in (("pressure", state.p), ("rotation", state.gamma)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in arr:
                fh.write(_FMT % v + "\n")
        for name, arr in (("displacement", u_cell), ("velocity", z_cell)):
            fh.write(f"VECTORS {name} double\n")
            for vx, vy in arr:
                fh.write(f"{_FMT % vx} {_FMT % vy} 0\n")
        fh.write("TENSORS stress double\n")
        for (sxx, sxy), (syx, syy) in zip(srow_x, srow_y):
            fh.write(f"{_FMT % sxx} {_FMT % sxy} 0\n")
            fh.write(f"{_FMT % syx} {_FMT % syy} 0\n")
            fh.write("0 0 0\n")

    csv_path = base.with_suffix(".csv")
    save_state_csv(state, csv_path)
    return [str(vtk_path), str(csv_path)]


def save_state_csv(state, path) -> None:
    """Raw DOF coefficients, one row per (field, index), full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field", "index", "value"])
        for name in ("sigma", "u", "gamma", "z", "p"):
            arr = getattr(state, name)
            for i, v in enumerate(arr):
                w.writerow([name, i, _FMT % v])


def load_state_csv(path):
    """Rebuild a per-field coefficient state from save_state_csv output."""
    import numpy as np

    from .subdomain import LocalState

    cols: dict[str, list[tuple[int, float]]] = {
        k: [] for k in ("sigma", "u", "gamma", "z", "p")
    }
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["field", "index", "value"]:
            raise ValueError(f"{path}: not a state CSV (header {header})")
        for name, idx, val in reader:
            cols[name].append((int(idx), float(val)))
    arrays = {}
    for name, pairs in cols.items():
        arr = np.empty(len(pairs))
        for i, v in pairs:
            arr[i] = v
        arrays[name] = arr
    return LocalState(**arrays)


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(cfg: RunConfig, log=print) -> int:
    """Execute one configured run and write its reports.

    Returns the process exit status: 0 on success, 1 when any interface
    solve failed to converge (the log names the first failing step).
    """
    from .verify import ErrorTracker, gather_global

    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem, case = build_problem(cfg)
    tracker = ErrorTracker(case) if case is not None else None

    def observer(prob, state):
        if tracker is not None:
            tracker(prob, state)
        if cfg.snapshot_every and state.step % cfg.snapshot_every == 0:
            glob = gather_global(prob, state)
            emit_fields(glob, prob.decomp.mesh, out / f"state_{state.step:04d}")

    result = problem.run(cfg.scheme, cfg.dt, cfg.n_steps, tol=cfg.tol,
                         observer=observer)
    elapsed = time.perf_counter() - t0

    if cfg.snapshot_every:
        glob = gather_global(problem, result.state)
        emit_fields(glob, problem.decomp.mesh, out / "state_final")

    rows = []
    for name, rep in result.init_reports.items():
        rows.append([0, _FMT % 0.0, name, rep.iterations, int(rep.converged),
                     _FMT % rep.final_residual])
    for step, reports in enumerate(result.step_reports, start=1):
        t = result.times[step]
        for name, rep in reports.items():
            rows.append([step, _FMT % t, name, rep.iterations,
                         int(rep.converged), _FMT % rep.final_residual])
    _write_csv(out / "iterations.csv",
               ["step", "t", "solver", "iterations", "converged",
                "final_residual"], rows)

    mon = result.monitor
    _write_csv(out / "monitor.csv", ["step", "t", "energy"],
               [[s + 1, _FMT % result.times[s + 1], _FMT % e]
                for s, e in enumerate(mon.energy_series)])

    step_keys = sorted({k for r in result.step_reports for k in r})
    summary = [
        ["scheme", cfg.scheme], ["nx", cfg.nx], ["ny", cfg.ny],
        ["px", cfg.px], ["py", cfg.py], ["dt", _FMT % cfg.dt],
        ["n_steps", cfg.n_steps], ["tol", _FMT % cfg.tol],
        ["converged", int(result.all_converged())],
    ]
    for key in step_keys:
        summary.append([f"avg_{key}", _FMT % result.average_iterations(key)])
    for key, rep in result.init_reports.items():
        summary.append([f"init_{key}", rep.iterations])
    summary.extend([
        ["monitor_reference", _FMT % mon.reference],
        ["monitor_lhs", _FMT % mon.lhs],
        ["monitor_ratio", _FMT % mon.ratio],
    ])
    _write_csv(out / "summary.csv", ["key", "value"], summary)

    if tracker is not None:
        err_rows = []
        for q in tracker.QUANTITIES:
            row = [q]
            for conv in tracker.CONVENTIONS:
                row.append(_FMT % tracker.result(conv)[q])
            err_rows.append(row)
        _write_csv(out / "errors.csv", ["quantity", *tracker.CONVENTIONS],
                   err_rows)

    counts = ", ".join(
        f"{k} {result.average_iterations(k):.1f}/step" for k in step_keys)
    log(f"{cfg.scheme}: {cfg.nx}x{cfg.ny} cells, {cfg.px}x{cfg.py} "
        f"subdomains, {cfg.n_steps} steps of dt={cfg.dt:g} "
        f"({elapsed:.1f}s; {counts})")
    if tracker is not None:
        errs = tracker.result("subdomain_sum")
        log("errors (sum over subdomains): "
            + ", ".join(f"{q}={errs[q]:.3e}" for q in tracker.QUANTITIES))
    if not result.all_converged():
        for step, reports in enumerate(result.step_reports, start=1):
            bad = [k for k, r in reports.items() if not r.converged]
            if bad:
                log(f"step {step}: {', '.join(bad)} did not converge "
                    f"within {cfg.max_iter} iterations")
                break
        return 1
    return 0


def run_sweep(cfg: RunConfig, levels: list[int], log=print) -> int:
    """Run a mesh-refinement sweep and write one table row per level.

    Errors (manufactured runs) are the summed-over-subdomains relative
    norms with per-level reduction rates; iteration columns are per-step
    averages of each interface solver.
    """
    import numpy as np

    from .verify import ErrorTracker

    if not levels:
        raise ConfigError("sweep.nx_list is empty (or pass --levels)")
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    quantities = ErrorTracker.QUANTITIES
    table = []
    iter_keys: list[str] = []
    status = 0
    prev = None
    for n in levels:
        level_cfg = replace(cfg, nx=n, ny=n)
        level_cfg.validate()
        problem, case = build_problem(level_cfg)
        tracker = ErrorTracker(case) if case is not None else None
        result = problem.run(level_cfg.scheme, level_cfg.dt,
                             level_cfg.n_steps, tol=level_cfg.tol,
                             observer=tracker)
        if not result.all_converged():
            log(f"level 1/{n}: a solver failed to converge")
            status = 1
        iter_keys = sorted({k for r in result.step_reports for k in r})
        row = {"h": f"1/{n}"}
        for key in iter_keys:
            row[f"iter_{key}"] = str(round(result.average_iterations(key)))
        if tracker is not None:
            errs = tracker.result("subdomain_sum")
            for q in quantities:
                row[f"err_{q}"] = "%.3e" % errs[q]
                if prev is None:
                    row[f"rate_{q}"] = ""
                else:
                    row[f"rate_{q}"] = "%.2f" % float(
                        np.log2(prev[q] / errs[q]))
            prev = errs
        table.append(row)
        log("  ".join(f"{k}={v}" for k, v in row.items() if v != ""))
    header = ["h"] + [f"iter_{k}" for k in iter_keys]
    if prev is not None:
        for q in quantities:
            header += [f"err_{q}", f"rate_{q}"]
    _write_csv(out / "sweep.csv", header,
               [[row.get(col, "") for col in header] for row in table])
    return status


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("config", help="INI configuration file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="SECTION.KEY=VALUE",
                     help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biotdd",
        description="Domain-decomposition solvers for a five-field mixed "
                    "poroelastic discretization.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="execute one configured experiment")
    _add_common(p_run)
    p_run.add_argument("--output-dir", help="override output.directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = subs.add_parser(
        "sweep", help="run a mesh-refinement sweep (one row per level)")
    _add_common(p_sweep)
    p_sweep.add_argument("--output-dir", help="override output.directory")
    p_sweep.add_argument("--levels",
                         help="comma-separated cell counts, e.g. 4,8,16")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = subs.add_parser(
        "validate-config", help="parse and validate a configuration")
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    return run_experiment(cfg)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.levels:
        try:
            levels = [int(tok) for tok in args.levels.split(",")]
        except ValueError:
            raise ConfigError(
                f"--levels must be comma-separated integers, got {args.levels!r}"
            ) from None
    else:
        levels = load_sweep_levels(args.config, args.overrides)
    return run_sweep(cfg, levels)


def cmd_validate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    print("ok")
    for key, value in sorted(vars(cfg).items()):
        print(f"  {key} = {value}")
    return 0


def main(argv=None) -> int:
    apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
