"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments.  Lists are comma-separated.  Keys
not listed in :data:`FIELDS` are rejected so that typos fail loudly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np


def _float_list(text: str) -> List[float]:
    return [_float(t) for t in text.split(",") if t.strip()]


def _float(text: str) -> float:
    """Float with optional power-of-two shorthand such as ``2^-8``."""
    t = text.strip()
    if "^" in t:
        base, exp = t.split("^", 1)
        return float(base) ** float(exp)
    return float(t)


def _int(text: str) -> int:
    value = _float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _str_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


FIELDS = {
    "operator": str,
    "J": _int,
    "a_coeff": str,
    "problem": str,
    "tau": _float,
    "taus": _float_list,
    "tau_ref": _float,
    "N": _int,
    "T": _float,
    "scheme": str,
    "schemes": _str_list,
    "M": _int,
    "seed": _int,
    "alphas": _float_list,
    "epsilons": _float_list,
    "n_steps": _int,
    "burn_in": _int,
    "n_chains": _int,
    "sde_tau": _float,
    "n_seeds": _int,
    "J_list": lambda t: [_int(x) for x in t.split(",") if x.strip()],
    "x0_amplitude": _float,
    "y0_amplitude": _float,
    "threads": _int,
    "out": str,
    "record": str,
    "thin": _int,
}


@dataclass
class RunConfig:
    values: Dict[str, Any] = field(default_factory=dict)
    sources: Dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default=None):
        if key not in FIELDS:
            raise KeyError(f"unknown configuration key {key!r}")
        return self.values.get(key, default)

    def set(self, key: str, raw: str, source: str = "flag") -> None:
        if key not in FIELDS:
            raise ValueError(f"unknown configuration key {key!r}")
        try:
            self.values[key] = FIELDS[key](raw)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad value for {key}: {raw!r} ({exc})") from exc
        self.sources[key] = raw.strip()

    def update_text(self, lines: Iterable[str], source: str = "file") -> None:
        for lineno, line in enumerate(lines, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"line {lineno}: expected key = value")
            key, raw = stripped.split("=", 1)
            self.set(key.strip(), raw, source)

    def resolve_horizon(self, tau_key: str = "tau"):
        """Return (tau, N) after enforcing T = N tau."""
        tau = self.get(tau_key)
        N, T = self.get("N"), self.get("T")
        if tau is None:
            raise ValueError(f"{tau_key} is required")
        if N is None and T is None:
            raise ValueError("either N or T is required")
        if N is None:
            N = int(round(T / tau))
        if T is not None and abs(N * tau - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"T={T} is inconsistent with N={N} and tau={tau}")
        return tau, N

    def echo(self) -> List[str]:
        """Sorted ``key=value`` lines using the text as given."""
        return [f"{k}={self.sources[k]}" for k in sorted(self.sources)]


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            cfg.update_text(fh, "file")
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw, "flag")
    return cfg


def make_coefficient(text: Optional[str]):
    """Diffusion coefficient from a constant or an expression in ``x``.

    The expression sees numpy's ``sin``, ``cos``, ``exp``, ``sqrt`` and
    ``pi`` only.
    """
    if text is None:
        return None
    try:
        c = float(text)
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), c)
    except ValueError:
        pass
    code = compile(text, "<a_coeff>", "eval")
    names = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "pi": np.pi}
    for name in code.co_names:
        if name not in names and name != "x":
            raise ValueError(f"a_coeff may not use {name!r}")

    def a_fn(x):
        x = np.asarray(x, dtype=np.float64)
        return np.asarray(eval(code, {"__builtins__": {}}, dict(names, x=x)), dtype=np.float64) * np.ones_like(x)

    return a_fn
