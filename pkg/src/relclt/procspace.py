"""Index space (s, f) of the weighted empirical process and its evaluation.

G_n(s, f) = n^{-1/2} sum_i w_{n,i}(s) (f(Z_i) - c_i(f))

Every function-class member is a base feature ``g`` (a power of x or an
indicator 1{x < t}) composed with a fixed shifted-difference operator
``(D g)_i = 1{i > start} sum_(shift, coef) coef * g_{i - shift}``.  That
one representation covers identities, monomials, indicator grids, lagged
indicator differences and h-step differences, and lets the Gaussian module
push weights through ``D`` to get exact covariances.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _moments
from .errors import CapabilityError

# --------------------------------------------------------------------------
# kernels

_GL64 = np.polynomial.legendre.leggauss(64)


class KernelFn:
    name = "kernel"
    smooth_c2 = False

    def __call__(self, u):
        raise NotImplementedError

    def _check(self):
        x, w = _GL64
        vals = self(x)
        if np.any(vals < 0):
            raise ValueError(f"{self.name} kernel takes negative values")
        total = float(vals @ w)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"{self.name} kernel integrates to {total}, not 1")

    def to_dict(self):
        return {"kind": self.name}


class _PolyKernel(KernelFn):
    def __init__(self, name: str, const: float, power: int, smooth_c2: bool):
        self.name, self.const, self.power, self.smooth_c2 = name, const, power, smooth_c2
        self._check()

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        base = np.clip(1.0 - u * u, 0.0, None)
        return self.const * base**self.power

    def __repr__(self):
        return f"{self.name.capitalize()}Kernel()"

    def __eq__(self, other):
        return isinstance(other, _PolyKernel) and other.name == self.name

    def __hash__(self):
        return hash(self.name)


#: (35/32)(1 - u^2)^3, C^2 on the real line.
TRIWEIGHT = _PolyKernel("triweight", 35.0 / 32.0, 3, True)
#: (15/16)(1 - u^2)^2; its second derivative jumps at +-1, so it is not C^2.
BIWEIGHT = _PolyKernel("biweight", 15.0 / 16.0, 2, False)


class TabulatedKernel(KernelFn):
    """Piecewise-linear kernel through user nodes on [-1, 1]."""

    name = "tabulated"

    def __init__(self, nodes: Sequence[float], values: Sequence[float]):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.nodes.shape != self.values.shape or self.nodes.size < 2:
            raise ValueError("nodes and values must be equal-length arrays of size >= 2")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("kernel nodes must be strictly increasing")
        if self.nodes[0] < -1 or self.nodes[-1] > 1:
            raise ValueError("kernel support must lie inside [-1, 1]")
        if np.any(self.values < 0):
            raise ValueError("tabulated kernel takes negative values")
        # trapezoid is exact for the piecewise-linear interpolant
        total = float(np.sum(np.diff(self.nodes) * (self.values[1:] + self.values[:-1]) / 2))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"tabulated kernel integrates to {total}, not 1")

    def __call__(self, u):
        return np.interp(np.asarray(u, dtype=float), self.nodes, self.values, left=0.0, right=0.0)

    def to_dict(self):
        return {"kind": self.name, "nodes": self.nodes.tolist(), "values": self.values.tolist()}


def kernel_from(obj) -> KernelFn:
    if isinstance(obj, KernelFn):
        return obj
    if obj is None:
        return TRIWEIGHT
    if isinstance(obj, str):
        obj = {"kind": obj}
    kind = obj.get("kind")
    if kind == "triweight":
        return TRIWEIGHT
    if kind == "biweight":
        return BIWEIGHT
    if kind == "tabulated":
        return TabulatedKernel(obj["nodes"], obj["values"])
    raise ValueError(f"unknown kernel {kind!r}")


def kernel_matrix(kernel: KernelFn, n: int, bandwidth: float, centers) -> np.ndarray:
    """Rows K((i - center)/(n b)) for i = 1..n; centers are in index units."""
    centers = np.asarray(centers, dtype=float)
    i = np.arange(1, n + 1, dtype=float)
    return kernel((i[None, :] - centers[:, None]) / (n * bandwidth))


def _index_centers(s_values, n):
    # s = i/n should land exactly on index i
    c = np.asarray(s_values, dtype=float) * n
    r = np.round(c)
    return np.where(np.abs(c - r) < 1e-9 * max(n, 1), r, c)


# --------------------------------------------------------------------------
# weight families


class WeightFamily:
    kind = "weights"
    s_domain = (0.0, 1.0)

    def _check_s(self, s):
        lo, hi = self.s_domain
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < lo) or np.any(s > hi) or not np.all(np.isfinite(s)):
            raise ValueError(f"s outside the domain [{lo}, {hi}] of {self.kind} weights")

    def matrix(self, n: int, s_values) -> np.ndarray:
        """Weights for all grid points, shape (len(s_values), n)."""
        raise NotImplementedError

    def window(self, n: int, s: float) -> tuple[int, int]:
        """0-based half-open index range outside of which weights vanish."""
        return 0, n

    def default_s_values(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 101)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class ConstantWeights(WeightFamily):
    value: float = 1.0
    kind = "constant"
    s_domain = (-np.inf, np.inf)

    def matrix(self, n, s_values):
        s = np.atleast_1d(np.asarray(s_values, dtype=float))
        return np.full((s.size, n), float(self.value))

    def default_s_values(self):
        return np.array([1.0])

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class SequentialIndicator(WeightFamily):
    """w_i(s) = 1{i <= floor(s n)}, 1-based i."""

    kind = "sequential"

    @staticmethod
    def cutoff(n, s):
        # tolerate representation error such as 0.29 * 100 = 28.999999999999996
        return int(math.floor(round(float(s) * n, 9)))

    def matrix(self, n, s_values):
        s = np.atleast_1d(np.asarray(s_values, dtype=float))
        self._check_s(s)
        cut = np.array([self.cutoff(n, v) for v in s])
        return (np.arange(1, n + 1)[None, :] <= cut[:, None]).astype(float)

    def window(self, n, s):
        return 0, self.cutoff(n, s)


@dataclass(frozen=True)
class KernelWeights(WeightFamily):
    """w_i(s) = K((i - s n)/(n b)), not normalized."""

    kernel: KernelFn = TRIWEIGHT
    bandwidth: float = 0.1
    kind = "kernel"

    def __post_init__(self):
        if not 0.0 < self.bandwidth <= 1.0:
            raise ValueError("bandwidth must lie in (0, 1]")

    def matrix(self, n, s_values):
        self._check_s(s_values)
        return kernel_matrix(self.kernel, n, self.bandwidth, _index_centers(np.atleast_1d(s_values), n))

    def window(self, n, s):
        c = _index_centers([s], n)[0]
        half = n * self.bandwidth
        lo = max(1, math.ceil(c - half))
        hi = min(n, math.floor(c + half))
        return lo - 1, max(hi, lo - 1)

    def to_dict(self):
        return {"kind": self.kind, "bandwidth": self.bandwidth, "kernel": self.kernel.to_dict()}


@dataclass(frozen=True, eq=False)
class ExplicitMatrix(WeightFamily):
    """User-supplied weights; row j holds w_{n,i}(s_j) for i = 1..n."""

    s_values: tuple[float, ...] = ()
    values: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    kind = "explicit"
    s_domain = (-np.inf, np.inf)

    def matrix(self, n, s_values):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[1] != n:
            raise ValueError(f"explicit weights have {vals.shape[1]} columns, need n = {n}")
        lookup = {float(s): j for j, s in enumerate(self.s_values)}
        try:
            rows = [lookup[float(s)] for s in np.atleast_1d(s_values)]
        except KeyError as e:
            raise ValueError(f"s = {e.args[0]} not among the explicit weight rows") from None
        return vals[rows]

    def default_s_values(self):
        return np.asarray(self.s_values, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "s_values": list(self.s_values),
                "values": np.asarray(self.values).tolist()}


def weights_at(family: WeightFamily, n: int, s: float) -> np.ndarray:
    return family.matrix(n, [s])[0]


def weight_family_from(d: dict) -> WeightFamily:
    kind = d.get("kind", "constant")
    if kind == "constant":
        return ConstantWeights(float(d.get("value", 1.0)))
    if kind == "sequential":
        return SequentialIndicator()
    if kind == "kernel":
        return KernelWeights(kernel_from(d.get("kernel")), float(d.get("bandwidth", 0.1)))
    if kind == "explicit":
        return ExplicitMatrix(tuple(d["s_values"]), np.asarray(d["values"], dtype=float))
    raise ValueError(f"unknown weight family {kind!r}")


# --------------------------------------------------------------------------
# function classes


@dataclass(frozen=True)
class Member:
    """One function f(Z_i) = 1{i > start} * sum coef * g(X_{i - shift})."""

    label: str
    base: tuple  # ("power", d) or ("indicator", t)
    start: int = 0
    terms: tuple[tuple[int, float], ...] = ((0, 1.0),)

    def base_values(self, x: np.ndarray) -> np.ndarray:
        kind, par = self.base
        if kind == "power":
            return x if par == 1 else x**par
        return (x < par).astype(float)

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Apply the difference operator along the last axis."""
        n = g.shape[-1]
        out = np.zeros_like(g, dtype=float)
        if self.start >= n:
            return out
        for shift, coef in self.terms:
            out[..., self.start:] += coef * g[..., self.start - shift:n - shift]
        return out

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        """Adjoint of ``apply``: pushes weights on Z-indices onto X-indices."""
        n = w.shape[-1]
        out = np.zeros_like(w, dtype=float)
        if self.start >= n:
            return out
        for shift, coef in self.terms:
            out[..., self.start - shift:n - shift] += coef * w[..., self.start:]
        return out


class FunctionClass:
    kind = "class"
    envelope_note = ""

    def members(self) -> tuple[Member, ...]:
        raise NotImplementedError

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.members()]

    def __len__(self):
        return len(self.members())

    def evaluate(self, x) -> np.ndarray:
        """Values f_k(Z_i); x of shape (..., n) gives (..., n, k)."""
        x = np.asarray(x, dtype=float)
        cache: dict = {}
        cols = []
        for m in self.members():
            if m.base not in cache:
                cache[m.base] = m.base_values(x)
            cols.append(m.apply(cache[m.base]))
        return np.stack(cols, axis=-1)

    def expected(self, spec, n: int) -> np.ndarray:
        """Exact E f_k(Z_i), shape (n, k), from the marginal law of the process."""
        mu, sd, fam = spec.mean_path(n), spec.marginal_sd(n), spec.marginal_family()
        cols = []
        for m in self.members():
            kind, par = m.base
            if kind == "power":
                g = _moments.raw_moment(fam, mu, sd, par)
            else:
                g = _moments.cdf(fam, mu, sd, par)
            cols.append(m.apply(np.asarray(g, dtype=float)))
        return np.stack(cols, axis=-1)

    def envelope(self, x) -> np.ndarray:
        raise NotImplementedError

    def scaled(self, factor: float) -> "Scaled":
        return Scaled(self, float(factor))

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Identity(FunctionClass):
    kind = "identity"
    envelope_note = "F(x) = |x|"

    def members(self):
        return (Member("x", ("power", 1)),)

    def envelope(self, x):
        return np.abs(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Monomials(FunctionClass):
    degrees: tuple[int, ...] = (1, 2)
    kind = "monomials"
    envelope_note = "F(x) = max(1, |x|)^max_degree"

    def __post_init__(self):
        if not self.degrees or any(d not in (1, 2, 3, 4) for d in self.degrees):
            raise ValueError("monomial degrees must be a nonempty subset of {1, 2, 3, 4}")
        if len(set(self.degrees)) != len(self.degrees):
            raise ValueError("monomial degrees must be distinct")

    def members(self):
        return tuple(Member(f"x^{d}", ("power", int(d))) for d in self.degrees)

    def envelope(self, x):
        return np.maximum(1.0, np.abs(np.asarray(x, dtype=float))) ** max(self.degrees)

    def to_dict(self):
        return {"kind": self.kind, "degrees": list(self.degrees)}


def _check_thresholds(t):
    t = tuple(float(v) for v in t)
    if not t:
        raise ValueError("need at least one threshold")
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ValueError("thresholds must be strictly increasing")
    return t


@dataclass(frozen=True)
class IndicatorGrid(FunctionClass):
    thresholds: tuple[float, ...] = (0.0,)
    kind = "indicators"
    envelope_note = "F = 1"

    def __post_init__(self):
        object.__setattr__(self, "thresholds", _check_thresholds(self.thresholds))

    def members(self):
        return tuple(Member(f"1{{x<{t:g}}}", ("indicator", t)) for t in self.thresholds)

    def envelope(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def to_dict(self):
        return {"kind": self.kind, "thresholds": list(self.thresholds)}


@dataclass(frozen=True)
class PairedIndicatorDiff(FunctionClass):
    """f_t(Z_i) = 1{X_i < t} - 1{X_{i-L} < t} for i > L, and 0 for i <= L."""

    thresholds: tuple[float, ...] = (0.0,)
    lag: int = 1
    kind = "paired-indicator-diff"
    envelope_note = "F = 1"

    def __post_init__(self):
        object.__setattr__(self, "thresholds", _check_thresholds(self.thresholds))
        if self.lag < 1:
            raise ValueError("lag must be a positive integer")

    def members(self):
        L = int(self.lag)
        return tuple(Member(f"1{{x<{t:g}}}-1{{x[-{L}]<{t:g}}}", ("indicator", t), L,
                            ((0, 1.0), (L, -1.0))) for t in self.thresholds)

    def envelope(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def to_dict(self):
        return {"kind": self.kind, "thresholds": list(self.thresholds), "lag": self.lag}


@dataclass(frozen=True)
class ForwardDifferences(FunctionClass):
    """f_r(Z_i) = Delta_h^r X_{i - h r} for h r < i, else 0, r = 1..R.

    Delta_h X_j = X_{j+h} - X_j, so f_r(Z_i) only involves X_{i-hr}, ..., X_i.
    """

    step: int = 1
    max_order: int = 1
    kind = "forward-differences"
    envelope_note = "F_i = 2^R max_{i - hR <= j <= i} |X_j|"

    def __post_init__(self):
        if self.step < 1 or self.max_order < 1:
            raise ValueError("step and max_order must be positive")

    def members(self):
        h = int(self.step)
        out = []
        for r in range(1, int(self.max_order) + 1):
            terms = tuple((h * (r - k), float((-1) ** (r - k) * math.comb(r, k))) for k in range(r + 1))
            out.append(Member(f"D{h}^{r}", ("power", 1), h * r, terms))
        return tuple(out)

    def envelope(self, x):
        a = np.abs(np.asarray(x, dtype=float))
        width = int(self.step) * int(self.max_order)
        padded = np.concatenate([np.zeros(a.shape[:-1] + (width,)), a], axis=-1)
        trailing = np.lib.stride_tricks.sliding_window_view(padded, width + 1, axis=-1)
        return 2.0 ** self.max_order * trailing.max(axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "step": self.step, "max_order": self.max_order}


@dataclass(frozen=True)
class Scaled(FunctionClass):
    """Every member of ``base`` multiplied by ``factor``."""

    base: FunctionClass = field(default_factory=Identity)
    factor: float = 1.0
    kind = "scaled"

    def members(self):
        return tuple(Member(f"{self.factor:g}*{m.label}", m.base, m.start,
                            tuple((s, c * self.factor) for s, c in m.terms))
                     for m in self.base.members())

    def envelope(self, x):
        return abs(self.factor) * self.base.envelope(x)

    def to_dict(self):
        return {"kind": self.kind, "factor": self.factor, "base": self.base.to_dict()}


def function_class_from(d: dict) -> FunctionClass:
    kind = d.get("kind", "identity")
    if kind == "identity":
        return Identity()
    if kind == "monomials":
        return Monomials(tuple(int(v) for v in d.get("degrees", (1, 2))))
    if kind == "indicators":
        return IndicatorGrid(tuple(_threshold_list(d)))
    if kind == "paired-indicator-diff":
        return PairedIndicatorDiff(tuple(_threshold_list(d)), int(d.get("lag", 1)))
    if kind == "forward-differences":
        return ForwardDifferences(int(d.get("step", 1)), int(d.get("max_order", 1)))
    if kind == "scaled":
        return Scaled(function_class_from(d["base"]), float(d["factor"]))
    raise ValueError(f"unknown function class {kind!r}")


def _threshold_list(d):
    if "thresholds" in d:
        return [float(t) for t in d["thresholds"]]
    lo, hi, step = float(d["t_min"]), float(d["t_max"]), float(d["t_step"])
    count = int(round((hi - lo) / step)) + 1
    return list(np.round(lo + step * np.arange(count), 10))


# --------------------------------------------------------------------------
# grid and surfaces


@dataclass(frozen=True)
class EvalGrid:
    s_values: np.ndarray
    fclass: FunctionClass

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s_values, dtype=float))
        if s.size == 0 or len(self.fclass) == 0:
            raise ValueError("grid must be nonempty")
        if np.any(np.diff(s) < 0):
            raise ValueError("s values must be sorted")
        object.__setattr__(self, "s_values", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.s_values.size, len(self.fclass)

    def __eq__(self, other):
        return (isinstance(other, EvalGrid) and np.array_equal(self.s_values, other.s_values)
                and self.fclass == other.fclass)

    def __hash__(self):
        return hash((self.s_values.tobytes(), repr(self.fclass)))


PROVENANCES = ("empirical", "bootstrap", "gaussian")


@dataclass(frozen=True)
class Surface:
    values: np.ndarray
    grid: EvalGrid
    provenance: str = "empirical"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"surface shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("surface has non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __neg__(self):
        return Surface(-self.values, self.grid, self.provenance)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# relclt-surface v1 provenance={self.provenance}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s"] + self.grid.fclass.labels)
        for s, row in zip(self.grid.s_values, self.values):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "schema": "relclt-surface/1",
            "provenance": self.provenance,
            "s_values": self.grid.s_values.tolist(),
            "members": self.grid.fclass.labels,
            "function_class": self.grid.fclass.to_dict(),
            "values": self.values.tolist(),
        })


def sup_norm(surface) -> float:
    v = surface.values if isinstance(surface, Surface) else np.asarray(surface)
    return float(np.max(np.abs(v))) if v.size else 0.0


def centering_matrix(centering, sample, fclass: FunctionClass) -> np.ndarray:
    """Resolve a centering choice to an (n, k) matrix (or scalar zero)."""
    n, k = sample.n, len(fclass)
    if isinstance(centering, str):
        if centering == "zero":
            return np.zeros((n, k))
        if centering == "exact":
            if getattr(sample, "spec", None) is None:
                raise CapabilityError("exact centering needs a sample that carries its process spec")
            return fclass.expected(sample.spec, n)
        raise ValueError(f"unknown centering {centering!r}")
    c = np.asarray(centering, dtype=float)
    if c.shape != (n, k):
        raise ValueError(f"centering shape {c.shape} does not match (n, k) = {(n, k)}")
    return c


def _check_grid(fclass, grid):
    if grid.fclass != fclass:
        raise ValueError("grid was built for a different function class")


def empirical_surface(sample, fclass: FunctionClass, family: WeightFamily, grid: EvalGrid,
                      centering="exact", windowed: bool = True) -> Surface:
    """Evaluate G_n(s, f) on the grid.

    Sums run sequentially in index order over the window where the weights
    can be nonzero; with ``windowed=False`` they run over all indices and the
    result is bit-identical.
    """
    _check_grid(fclass, grid)
    x = sample.values
    n = x.size
    y = fclass.evaluate(x) - centering_matrix(centering, sample, fclass)
    out = np.zeros(grid.shape)
    for j, s in enumerate(grid.s_values):
        lo, hi = family.window(n, s) if windowed else (0, n)
        if hi <= lo:
            continue
        w = family.matrix(n, [s])[0, lo:hi]
        out[j] = np.cumsum(w[:, None] * y[lo:hi], axis=0)[-1]
    return Surface(out / math.sqrt(n), grid, "empirical")


def batch_surfaces(weights: np.ndarray, y: np.ndarray) -> np.ndarray:
    """n^{-1/2} W @ Y for a stack Y of shape (M, n, k); returns (M, |S|, k)."""
    n = y.shape[-2]
    return np.matmul(weights, y) / math.sqrt(n)
