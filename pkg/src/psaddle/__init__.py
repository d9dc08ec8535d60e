"""Space-time saddle-point solver for parabolic evolution equations.

The package discretizes the first-order system coupling an auxiliary
variable lambda with the solution u of

    du/dt + A(t) u = ell,   u(0) = u0,

where A(t) is a Lipschitz continuous, strongly monotone spatial operator
(quasi-linear diffusion in the bundled examples).  It provides the tensor
product trial/test spaces, the nonlinear Galerkin operators, Riesz-map
solves and mesh-dependent norms, an inexact Uzawa solver with inner
Zarantonello loops, inf-sup and quasi-optimality diagnostics, and a
Kronecker-structured preconditioner, all at desk scale (1D space).
"""

__version__ = "0.1.0"
