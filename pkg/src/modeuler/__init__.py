"""Modified Euler integrators for parabolic SPDEs driven by space-time white noise.

Main entry points:

* :mod:`modeuler.operators` builds spectral or finite-difference operators
  and factorizes the resolvent.
* :mod:`modeuler.integrators` holds the modified, standard and exponential
  Euler steppers.
* :mod:`modeuler.diagnostics` provides closed-form variance tables and
  convergence-rate estimators.
* :mod:`modeuler.slowfast` and :mod:`modeuler.mcmc` implement the
  asymptotic-preserving scheme and the Metropolis-Hastings sampler.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402,F401
from .operators import (  # noqa: E402,F401
    FieldState,
    build_fd,
    build_spectral,
    factorize_resolvent,
)
