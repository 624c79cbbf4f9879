"""Mean-field Q-tensor energies on the torus and their Oseen-Frank elastic limits.

Submodules: ``kernel`` (interaction kernels, moment integrals, Frank
constants), ``maxent`` (singular bulk potential via the dual problem),
``fields`` (torus grids, masks, periodized kernels), ``energy`` (discrete
non-local energies, electrostatics, remainder diagnostics), ``minimize``
(constrained descent and the epsilon-sweep harness), ``cli`` (command-line
driver).
"""

__version__ = "0.1.0"
