"""Far-field asymptotics laboratory for the forced incompressible
Navier-Stokes equations: exact kernels, a periodic-box mild solver, and
measured verdicts for the decay laws the far field obeys."""

__version__ = "0.1.0"
