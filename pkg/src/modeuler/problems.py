"""Problem data: Nemytskii drifts, their potentials, and slow-fast couplings."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .operators import MODAL, NODAL, FieldState, to_modal, to_nodal


@dataclass(frozen=True)
class ProblemSpec:
    """Pointwise drift ``f`` with optional antiderivative ``v`` (v' = f).

    The potential is V(x) = -int v(x(xi)) dxi so that F = -DV.
    """

    f: Callable[[np.ndarray], np.ndarray]
    v: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz: float = 0.0
    label: str = "custom"
    is_zero: bool = False

    @property
    def has_potential(self) -> bool:
        return self.v is not None


def _zero(z):
    return np.zeros_like(z)


def ou() -> ProblemSpec:
    return ProblemSpec(f=_zero, v=_zero, lipschitz=0.0, label="ou", is_zero=True)


def sine() -> ProblemSpec:
    return ProblemSpec(f=np.sin, v=lambda z: -np.cos(z), lipschitz=1.0, label="sine")


def gradient_cos(beta: float = 0.5) -> ProblemSpec:
    """f = beta sin z, so V(x) = beta int cos(x) is bounded by |beta|."""
    beta = float(beta)
    return ProblemSpec(
        f=lambda z: beta * np.sin(z),
        v=lambda z: -beta * np.cos(z),
        lipschitz=abs(beta),
        label=f"gradient_cos({beta:g})",
        is_zero=beta == 0.0,
    )


_PROBLEM_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def parse_problem(text: str) -> ProblemSpec:
    """Parse ``ou``, ``sine`` or ``gradient_cos(beta)``."""
    m = _PROBLEM_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse problem {text!r}")
    name, arg = m.group(1), m.group(2)
    if name == "ou" and not arg:
        return ou()
    if name == "sine" and not arg:
        return sine()
    if name == "gradient_cos":
        return gradient_cos(float(arg)) if arg else gradient_cos()
    raise ValueError(f"unknown problem {text!r}")


def apply_F(p: ProblemSpec, x: FieldState) -> FieldState:
    """Pointwise drift on grid values."""
    x.require(NODAL)
    return x.like(p.f(x.values))


def apply_drift(p: ProblemSpec, x: FieldState) -> FieldState:
    """Drift in the field's own representation.

    Modal fields go through the grid (one sine-transform pair) so that the
    drift keeps its pointwise meaning.
    """
    if p.is_zero:
        return x.like(np.zeros_like(x.values))
    if x.representation == NODAL:
        return apply_F(p, x)
    return to_modal(apply_F(p, to_nodal(x)))


def evaluate_V(p: ProblemSpec, x: FieldState) -> np.ndarray:
    """Trapezoid quadrature of -int v(x) with zero boundary values.

    The two boundary nodes carry x = 0 and weight h/2 each, which adds the
    constant -h v(0) to -h sum_i v(x_i).
    """
    if p.v is None:
        raise ValueError(f"problem {p.label!r} has no potential")
    x.require(NODAL)
    h = 1.0 / (x.J + 1)
    boundary = float(p.v(np.zeros(1))[0])
    return -h * (np.sum(p.v(x.values), axis=-1) + boundary)


def inner_h(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Discrete L2 inner product h sum a_i b_i."""
    return np.sum(a * b, axis=-1) / (a.shape[-1] + 1)


def gradient_check(p: ProblemSpec, x: FieldState, direction: np.ndarray, s: float = 1e-5) -> float:
    """Gap between the difference quotient of V and -<F(x), d>_h.

    The gap is relative to |F(x)|_h |d|_h, the largest value the inner
    product can take, so that nearly orthogonal directions do not inflate it.
    """
    x.require(NODAL)
    dv = (evaluate_V(p, x.like(x.values + s * direction)) - evaluate_V(p, x)) / s
    fx = p.f(x.values)
    expected = -inner_h(fx, direction)
    scale = np.sqrt(inner_h(fx, fx) * inner_h(direction, direction))
    return float(np.abs(dv - expected) / max(scale, 1e-300))


@dataclass(frozen=True)
class SlowFastSpec:
    """Slow-fast coupling data.

    ``G(x, y)`` acts on grid values (arrays with matching shapes) and
    ``sigma(x)`` maps grid values of shape (..., J) to a scalar per batch
    row.  ``G_bound`` is a bound on |G| used for documentation and checks.
    """

    G: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    epsilon: float
    G_bound: float = np.inf
    label: str = "custom"

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")

    def with_epsilon(self, epsilon: float) -> "SlowFastSpec":
        return SlowFastSpec(self.G, self.sigma, epsilon, self.G_bound, self.label)


def _unit_sigma(x):
    return np.ones(np.shape(x)[:-1])


def cos_coupling(epsilon: float = 1e-2) -> SlowFastSpec:
    """G(x, y) = cos(y) with sigma = 1: bounded, Lipschitz, closed-form average."""
    return SlowFastSpec(
        G=lambda x, y: np.cos(y),
        sigma=_unit_sigma,
        epsilon=epsilon,
        G_bound=1.0,
        label="cos",
    )


def evaluate_sigma(sf: SlowFastSpec, x: FieldState) -> np.ndarray:
    """sigma(x) per batch row, evaluated on grid values."""
    xs = x if x.representation == NODAL else to_nodal(x)
    return np.asarray(sf.sigma(xs.values), dtype=np.float64)


def apply_G(sf: SlowFastSpec, x: FieldState, y: FieldState) -> FieldState:
    """G(x, y) in the representation of x (pointwise on the grid)."""
    y.require(x.representation)
    if x.representation == NODAL:
        return x.like(sf.G(x.values, y.values))
    out = FieldState(sf.G(to_nodal(x).values, to_nodal(y).values), NODAL)
    return to_modal(out)


__all__ = [
    "ProblemSpec",
    "SlowFastSpec",
    "ou",
    "sine",
    "gradient_cos",
    "cos_coupling",
    "parse_problem",
    "apply_F",
    "apply_drift",
    "apply_G",
    "evaluate_V",
    "evaluate_sigma",
    "gradient_check",
    "inner_h",
    "MODAL",
]
