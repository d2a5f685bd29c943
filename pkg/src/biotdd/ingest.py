"""Heterogeneous per-cell material fields: file I/O, generation, derivation.

Rock fields live on the structured cell grid as one scalar per cell
(row-major, bottom row first, matching the mesh cell ordering).  The file
format is plain text: one line per mesh row, whitespace-separated decimal
values, bottom-to-top.  Values are written with 17 significant digits so a
save/load round trip is bit-identical.

Elastic moduli derive from porosity through a critical-porosity power law
E(phi) = E0 * (1 - phi/phi_c)**n with phi_c = 0.5 (the porosity at which
the skeleton loses stiffness), then convert to Lame parameters via a
Poisson ratio.  A correlated log-normal generator provides synthetic
permeability/porosity fields spanning a prescribed number of orders of
magnitude for solver-robustness studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

#: Critical porosity: Young's modulus vanishes as porosity approaches this.
CRITICAL_POROSITY = 0.5

#: Power-law parameters of the porosity-to-stiffness relation.
MODULUS_SCALE = 100.0
MODULUS_EXPONENT = 2.1

_FMT = "%.17g"


@dataclass
class CellField:
    """One scalar value per cell of an nx-by-ny structured grid.

    values is flat, indexed by cell id (= iy*nx + ix), i.e. row-major with
    the bottom row first.
    """

    nx: int
    ny: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.nx * self.ny:
            raise ValueError(
                f"field has {self.values.size} values, expected "
                f"{self.nx}*{self.ny} = {self.nx * self.ny}"
            )

    @property
    def grid(self) -> np.ndarray:
        """values reshaped to (ny, nx): grid[iy, ix]."""
        return self.values.reshape(self.ny, self.nx)


def young_modulus(phi):
    """Young's modulus from porosity: E = 100 * (1 - phi/0.5)**2.1.

    Strictly decreasing on [0, 0.5), vanishing at the critical porosity.
    Raises ValueError if any porosity is negative or >= 0.5.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0.0):
        raise ValueError("porosity must be nonnegative")
    if np.any(phi >= CRITICAL_POROSITY):
        raise ValueError(
            f"porosity must stay below the critical value {CRITICAL_POROSITY}"
        )
    e = MODULUS_SCALE * (1.0 - phi / CRITICAL_POROSITY) ** MODULUS_EXPONENT
    return e if e.ndim else float(e)


def lame_from_E(E, nu=0.2):
    """Lame parameters (lam, mu) from Young's modulus and Poisson ratio.

    mu = E / (2(1+nu)), lam = E nu / ((1+nu)(1-2nu)); requires 0 < nu < 0.5.
    """
    if not 0.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {nu}")
    E = np.asarray(E, dtype=float)
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    if E.ndim:
        return lam, mu
    return float(lam), float(mu)


def load_field(path, nx: int, ny: int, positive: bool = True) -> CellField:
    """Read a CellField from a plain-text file (one mesh row per line).

    Validates the grid dimensions and numeric content; parse errors name
    the offending row and column.  With positive=True (the default, for
    permeability) nonpositive values are rejected.
    """
    rows: list[np.ndarray] = []
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) != ny:
        raise ValueError(f"{path}: expected {ny} rows, found {len(lines)}")
    for iy, line in enumerate(lines):
        tokens = line.split()
        if len(tokens) != nx:
            raise ValueError(
                f"{path}: row {iy} has {len(tokens)} values, expected {nx}"
            )
        try:
            row = np.array([float(tok) for tok in tokens])
        except ValueError:
            bad = next(i for i, tok in enumerate(tokens)
                       if not _is_number(tok))
            raise ValueError(
                f"{path}: non-numeric value {tokens[bad]!r} at "
                f"row {iy}, column {bad}"
            ) from None
        rows.append(row)
    values = np.concatenate(rows)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values)))
        raise ValueError(f"{path}: non-finite value at cell {bad}")
    if positive and np.any(values <= 0.0):
        bad = int(np.argmax(values <= 0.0))
        raise ValueError(
            f"{path}: nonpositive value {values[bad]} at cell {bad}"
        )
    return CellField(nx, ny, values)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def save_field(f: CellField, path) -> None:
    """Write a CellField in the plain-text row-per-line format (17 digits)."""
    with open(path, "w") as fh:
        for iy in range(f.ny):
            row = f.grid[iy]
            fh.write(" ".join(_FMT % v for v in row))
            fh.write("\n")


@dataclass
class FieldSpec:
    """Recipe for one synthetic correlated random field.

    kind 'permeability': log-normal, log10 values affinely rescaled to span
    exactly span_decades orders of magnitude centered at log10_center.
    kind 'porosity': rescaled to value_range (defaults keep the critical
    porosity strictly out of reach).  correlation is the Gaussian smoothing
    length in cells.  contrast > 0 pushes values toward both extremes of
    the range (a tanh anamorphosis of the underlying Gaussian field),
    mimicking channelized reservoir media whose histogram is bimodal —
    barrier cells directly beside high-flow cells — rather than
    mid-range-heavy; 0 keeps the plain rescaled log-normal marginal.
    """

    nx: int
    ny: int
    kind: str = "permeability"
    span_decades: float = 7.0
    log10_center: float = 0.0
    value_range: tuple[float, float] = (0.05, 0.45)
    correlation: float = 4.0
    contrast: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("permeability", "porosity"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.span_decades <= 0.0:
            raise ValueError("span_decades must be positive")
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError("value_range must be increasing")
        if self.contrast < 0.0:
            raise ValueError("contrast must be nonnegative")


def generate_field(seed: int, spec: FieldSpec) -> CellField:
    """Deterministic correlated random field per (seed, spec).

    Gaussian-filtered white noise is affinely rescaled: permeability in
    log10 so that max/min is exactly 10**span_decades, porosity linearly
    into value_range.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((spec.ny, spec.nx))
    smooth = gaussian_filter(noise, sigma=spec.correlation, mode="nearest")
    lo, hi = float(smooth.min()), float(smooth.max())
    if hi - lo < 1e-12:
        unit = np.full_like(smooth, 0.5)
    else:
        unit = (smooth - lo) / (hi - lo)
    if spec.contrast > 0.0:
        s = spec.contrast
        unit = 0.5 * (np.tanh(s * (unit - 0.5)) / np.tanh(0.5 * s) + 1.0)
        unit = (unit - unit.min()) / (unit.max() - unit.min())
    if spec.kind == "permeability":
        half = 0.5 * spec.span_decades
        log10k = spec.log10_center - half + unit * spec.span_decades
        values = 10.0 ** log10k
    else:
        a, b = spec.value_range
        values = a + unit * (b - a)
    return CellField(spec.nx, spec.ny, values.ravel())
