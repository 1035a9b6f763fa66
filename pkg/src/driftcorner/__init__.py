"""Drift-cornering stack: track geometry, minimum-curvature planning,
a nonlinear bicycle plant, TD3 training, and a preview+MPC fusion
controller for deployment under plant mismatch."""

__version__ = "0.1.0"
