"""Deterministic index paths ``i -> g(i/n)`` used for means, scales and AR coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Path:
    """Base class; subclasses evaluate at rescaled time ``u = i/n``, ``i = 1..n``."""

    kind = "path"

    def at(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, n: int) -> np.ndarray:
        u = np.arange(1, n + 1, dtype=float) / n
        return np.asarray(self.at(u), dtype=float) * np.ones(n)

    def bounds(self) -> tuple[float, float]:
        """Lower and upper bound of the path over u in [0, 1]."""
        raise NotImplementedError

    def sup_abs(self) -> float:
        lo, hi = self.bounds()
        return max(abs(lo), abs(hi))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Path):
    value: float
    kind = "constant"

    def at(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)

    def bounds(self):
        return self.value, self.value

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class Polynomial(Path):
    """``sum_k coeffs[k] * u**k``; ``Polynomial((0, 1))`` is the ramp i/n."""

    coeffs: tuple[float, ...]
    kind = "polynomial"

    def at(self, u):
        return np.polynomial.polynomial.polyval(np.asarray(u, dtype=float), self.coeffs)

    def bounds(self):
        p = np.polynomial.Polynomial(self.coeffs)
        cand = [0.0, 1.0]
        if len(self.coeffs) > 2:
            for r in p.deriv().roots():
                if abs(r.imag) < 1e-12 and 0.0 <= r.real <= 1.0:
                    cand.append(float(r.real))
        vals = p(np.array(cand))
        return float(vals.min()), float(vals.max())

    def to_dict(self):
        return {"kind": self.kind, "coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class Sinusoid(Path):
    """``level + amplitude * sin(2 pi periods u + phase)``."""

    level: float = 0.0
    amplitude: float = 1.0
    periods: float = 1.0
    phase: float = 0.0
    kind = "sinusoid"

    def at(self, u):
        u = np.asarray(u, dtype=float)
        return self.level + self.amplitude * np.sin(2 * np.pi * self.periods * u + self.phase)

    def bounds(self):
        a = abs(self.amplitude)
        return self.level - a, self.level + a

    def to_dict(self):
        return {"kind": self.kind, "level": self.level, "amplitude": self.amplitude,
                "periods": self.periods, "phase": self.phase}


@dataclass(frozen=True)
class Step(Path):
    """``before`` for u <= at, ``after`` afterwards."""

    before: float
    after: float
    at_u: float = 0.5
    kind = "step"

    def at(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u <= self.at_u, self.before, self.after)

    def bounds(self):
        return min(self.before, self.after), max(self.before, self.after)

    def to_dict(self):
        return {"kind": self.kind, "before": self.before, "after": self.after, "at": self.at_u}


@dataclass(frozen=True)
class Tabulated(Path):
    """Explicit values for i = 1..len(values); usable for any n <= len(values)."""

    values: tuple[float, ...] = field(default=())
    kind = "tabulated"

    def __call__(self, n):
        if n > len(self.values):
            raise ValueError(f"tabulated path has {len(self.values)} values, need {n}")
        return np.asarray(self.values[:n], dtype=float)

    def at(self, u):
        raise TypeError("tabulated paths are indexed by i, not by u")

    def bounds(self):
        v = np.asarray(self.values, dtype=float)
        return float(v.min()), float(v.max())

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values)}


_KINDS = {
    "constant": lambda d: Constant(float(d["value"])),
    "polynomial": lambda d: Polynomial(tuple(float(c) for c in d["coeffs"])),
    "linear": lambda d: Polynomial((float(d.get("intercept", 0.0)), float(d.get("slope", 1.0)))),
    "sinusoid": lambda d: Sinusoid(float(d.get("level", 0.0)), float(d.get("amplitude", 1.0)),
                                   float(d.get("periods", 1.0)), float(d.get("phase", 0.0))),
    "step": lambda d: Step(float(d["before"]), float(d["after"]), float(d.get("at", 0.5))),
    "tabulated": lambda d: Tabulated(tuple(float(v) for v in d["values"])),
}


def path_from(obj) -> Path:
    """Build a path from a number, a Path, or a config mapping with a ``kind`` key."""
    if isinstance(obj, Path):
        return obj
    if isinstance(obj, (int, float)):
        return Constant(float(obj))
    if isinstance(obj, dict):
        kind = obj.get("kind")
        if kind not in _KINDS:
            raise ValueError(f"unknown path kind {kind!r}; expected one of {sorted(_KINDS)}")
        return _KINDS[kind](obj)
    raise TypeError(f"cannot interpret {obj!r} as a path")
