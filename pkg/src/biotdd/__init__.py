"""Domain-decomposition solvers for a five-field mixed Biot discretization.

Quasi-static Biot poroelasticity on the unit square, discretized with a
weakly-symmetric stress mixed finite element method (BDM1 stress rows and
Darcy velocity, piecewise-constant displacement/rotation/pressure) and
backward Euler in time.  Non-overlapping subdomains are coupled through
interface Lagrange multipliers; three solution strategies are provided:

* monolithic: one interface GMRES solve per time step for the coupled
  displacement-rate / pressure trace;
* drained split: elasticity interface CG, then Darcy interface CG;
* fixed stress: Darcy interface CG, then elasticity interface CG.
"""

__version__ = "0.1.0"
