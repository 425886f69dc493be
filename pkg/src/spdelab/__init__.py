"""spdelab: a finite-difference laboratory for linear stochastic parabolic
equations with multiplicative noise on the torus.

Pieces: ensemble Euler-Maruyama solvers with reproducible noise streams,
moment-Holder norm and Dini modulus estimators, frozen-coefficient cascade
experiments on nested parabolic cylinders, and closed-form cross-checks.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
