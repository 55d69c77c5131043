"""Simulator and verification harness for a stochastic sign-type porous-media equation.

The model drives a nonnegative field toward a flat critical state under
multiplicative spectral noise.  Submodules:

- ``domain``: grids, the Dirichlet Laplacian, eigenmodes, shifted linear solves
- ``nonlinearity``: the regularized sign graph and its smooth surrogate
- ``noise``: noise models, seeded Brownian paths, the nondegeneracy field
- ``solver``: implicit time stepping in direct and exponentially transformed form
- ``observables``: masses, decay bounds, fits, trajectory CSV files
- ``config``, ``harness``, ``cli``: configuration, ensembles, reports, command line
"""

__version__ = "0.1.0"
