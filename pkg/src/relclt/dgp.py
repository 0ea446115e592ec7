"""Synthetic non-stationary processes with exact moment oracles.

Every process is a Gaussian-linear (or, for ``IndepHetero``, independent
centered-exponential) transform of iid innovations, so means and
covariances are available in closed form for any sample size ``n``.  The
triangular-array row length is fixed to ``n``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CapabilityError
from .paths import Constant, Path, path_from
from .rng import as_generator, Stream, standard_exponential

INNOVATIONS = ("gaussian", "centered-exponential")


# --------------------------------------------------------------------------
# regime rules


@dataclass(frozen=True)
class FixedFraction:
    """Regime 1 at index i iff floor(f*i) > floor(f*(i-1)); N_1 = floor(f*n)."""

    fraction: float

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")

    def regime_one(self, n: int) -> np.ndarray:
        f = Fraction(str(self.fraction))
        i = np.arange(0, n + 1)
        counts = np.array([(f * int(k)).__floor__() for k in i])
        return np.diff(counts) > 0

    def to_dict(self):
        return {"kind": "fixed-fraction", "fraction": self.fraction}


@dataclass(frozen=True)
class OscillatingDyadic:
    """Regime 1 on blocks [2^k, 2^(k+1)) with k even, regime 2 for k odd."""

    def regime_one(self, n: int) -> np.ndarray:
        i = np.arange(1, n + 1)
        k = np.floor(np.log2(i)).astype(int)
        # guard against log2 rounding at exact powers of two
        k = np.where(2 ** (k + 1) <= i, k + 1, k)
        k = np.where(2**k > i, k - 1, k)
        return k % 2 == 0

    def to_dict(self):
        return {"kind": "oscillating-dyadic"}


def _regime_from(d) -> FixedFraction | OscillatingDyadic:
    if isinstance(d, (FixedFraction, OscillatingDyadic)):
        return d
    kind = d.get("kind")
    if kind == "fixed-fraction":
        return FixedFraction(float(d["fraction"]))
    if kind == "oscillating-dyadic":
        return OscillatingDyadic()
    raise ValueError(f"unknown regime pattern {kind!r}")


# --------------------------------------------------------------------------
# process specifications


class ProcessSpec:
    kind = "process"
    gaussian = True

    def mean_path(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def n_innovations(self, n: int) -> int:
        return n

    def draw_innovations(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return gen.standard_normal(self.n_innovations(n))

    def transform(self, eps: np.ndarray, n: int) -> np.ndarray:
        """Map innovations of shape (..., n_innovations) to values (..., n)."""
        raise NotImplementedError

    def covariance(self, n: int, i: int, j: int) -> float:
        raise NotImplementedError

    def covariance_matrix(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def marginal_sd(self, n: int) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance_matrix(n)))

    def marginal_family(self) -> str:
        return "gaussian"

    def beta_mixing_bound(self, lag: int) -> float:
        raise CapabilityError(f"no mixing bound for {self.kind}")

    def dependence_range(self, n: int) -> int | None:
        """Largest lag with possibly nonzero covariance, None if unbounded."""
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def spec_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return f"{self.kind}-{hashlib.sha1(blob).hexdigest()[:10]}"


@dataclass(frozen=True)
class IndepHetero(ProcessSpec):
    sigma: Path = Constant(1.0)
    mean: Path = Constant(0.0)
    innovation: str = "gaussian"
    kind = "indep-hetero"

    def __post_init__(self):
        if self.innovation not in INNOVATIONS:
            raise ValueError(f"innovation must be one of {INNOVATIONS}")
        if self.sigma.bounds()[0] <= 0:
            raise ValueError("sigma path must be strictly positive")

    @property
    def gaussian(self):
        return self.innovation == "gaussian"

    def marginal_family(self):
        return self.innovation

    def draw_innovations(self, gen, n):
        if self.innovation == "gaussian":
            return gen.standard_normal(n)
        return standard_exponential(gen, n) - 1.0

    def mean_path(self, n):
        return self.mean(n)

    def transform(self, eps, n):
        return self.mean(n) + self.sigma(n) * eps

    def covariance(self, n, i, j):
        if i != j:
            return 0.0
        return float(self.sigma(n)[i - 1] ** 2)

    def covariance_matrix(self, n):
        return np.diag(self.sigma(n) ** 2)

    def marginal_sd(self, n):
        return self.sigma(n)

    def beta_mixing_bound(self, lag):
        _check_lag(lag)
        return 0.0

    def dependence_range(self, n):
        return 0

    def to_dict(self):
        return {"kind": self.kind, "sigma": self.sigma.to_dict(), "mean": self.mean.to_dict(),
                "innovation": self.innovation}


@dataclass(frozen=True)
class RegimeVariance(ProcessSpec):
    """Independent zero-mean Gaussians whose variance switches between two regimes."""

    sigma1_sq: float
    sigma2_sq: float
    pattern: FixedFraction | OscillatingDyadic = field(default_factory=OscillatingDyadic)
    kind = "regime-variance"

    def __post_init__(self):
        if self.sigma1_sq <= 0 or self.sigma2_sq <= 0:
            raise ValueError("regime variances must be positive")

    def variances(self, n):
        return np.where(self.pattern.regime_one(n), self.sigma1_sq, self.sigma2_sq).astype(float)

    def regime_one_fraction(self, n) -> float:
        return float(self.pattern.regime_one(n).sum()) / n

    def mean_path(self, n):
        return np.zeros(n)

    def transform(self, eps, n):
        return np.sqrt(self.variances(n)) * eps

    def covariance(self, n, i, j):
        if i != j:
            return 0.0
        return self.sigma1_sq if self.pattern.regime_one(n)[i - 1] else self.sigma2_sq

    def covariance_matrix(self, n):
        return np.diag(self.variances(n))

    def marginal_sd(self, n):
        return np.sqrt(self.variances(n))

    def beta_mixing_bound(self, lag):
        _check_lag(lag)
        return 0.0

    def dependence_range(self, n):
        return 0

    def to_dict(self):
        return {"kind": self.kind, "sigma1_sq": self.sigma1_sq, "sigma2_sq": self.sigma2_sq,
                "pattern": self.pattern.to_dict()}


@dataclass(frozen=True)
class TVAR1(ProcessSpec):
    """Gaussian time-varying AR(1).

    X_i = mu(i) + phi(i) (X_{i-1} - mu(i-1)) + sigma(i) eps_i, with X_1 drawn
    from the stationary law of the coefficients frozen at i = 1.
    """

    phi: Path = Constant(0.5)
    sigma: Path = Constant(1.0)
    mean: Path = Constant(0.0)
    kind = "tvar1"

    def __post_init__(self):
        if self.phi_max >= 1.0:
            raise ValueError(f"|phi| must stay below 1, got bound {self.phi_max}")
        if self.sigma.bounds()[0] <= 0:
            raise ValueError("sigma path must be strictly positive")

    @property
    def phi_max(self) -> float:
        return self.phi.sup_abs()

    def mean_path(self, n):
        return self.mean(n)

    def variances(self, n):
        phi, sig = self.phi(n), self.sigma(n)
        v = np.empty(n)
        v[0] = sig[0] ** 2 / (1.0 - phi[0] ** 2)
        for i in range(1, n):
            v[i] = phi[i] ** 2 * v[i - 1] + sig[i] ** 2
        return v

    def transform(self, eps, n):
        phi, sig = self.phi(n), self.sigma(n)
        eps = np.asarray(eps, dtype=float)
        y = np.empty_like(eps)
        y[..., 0] = sig[0] / math.sqrt(1.0 - phi[0] ** 2) * eps[..., 0]
        for i in range(1, n):
            y[..., i] = phi[i] * y[..., i - 1] + sig[i] * eps[..., i]
        return self.mean(n) + y

    def covariance(self, n, i, j):
        if i > j:
            i, j = j, i
        phi, sig = self.phi(n), self.sigma(n)
        v = sig[0] ** 2 / (1.0 - phi[0] ** 2)
        for k in range(2, i + 1):
            v = phi[k - 1] ** 2 * v + sig[k - 1] ** 2
        prod = 1.0
        for k in range(i + 1, j + 1):
            prod *= phi[k - 1]
        return float(v * prod)

    def covariance_matrix(self, n):
        phi, v = self.phi(n), self.variances(n)
        c = np.zeros((n, n))
        for i in range(n):
            c[i, i] = v[i]
            if i + 1 < n:
                c[i, i + 1:] = v[i] * np.cumprod(phi[i + 1:])
        iu = np.triu_indices(n, 1)
        c[(iu[1], iu[0])] = c[iu]
        return c

    def marginal_sd(self, n):
        return np.sqrt(self.variances(n))

    def beta_mixing_bound(self, lag):
        """Geometric certificate C * phi_max**lag with C = 1 / (1 - phi_max), capped at 1."""
        _check_lag(lag)
        p = self.phi_max
        return min(1.0, p**lag / (1.0 - p))

    def to_dict(self):
        return {"kind": self.kind, "phi": self.phi.to_dict(), "sigma": self.sigma.to_dict(),
                "mean": self.mean.to_dict()}


@dataclass(frozen=True)
class MDependentMA(ProcessSpec):
    """X_i = mu(i) + sum_{k=0}^m theta_k(i) eps_{i-k} with iid Gaussian eps."""

    m: int = 1
    theta: tuple[Path, ...] = (Constant(1.0), Constant(1.0))
    mean: Path = Constant(0.0)
    kind = "m-dependent-ma"

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be nonnegative")
        if len(self.theta) != self.m + 1:
            raise ValueError(f"need m + 1 = {self.m + 1} coefficient paths, got {len(self.theta)}")

    def n_innovations(self, n):
        return n + self.m

    def mean_path(self, n):
        return self.mean(n)

    def _coeffs(self, n):
        return np.stack([t(n) for t in self.theta])  # (m+1, n)

    def transform(self, eps, n):
        eps = np.asarray(eps, dtype=float)
        th = self._coeffs(n)
        out = np.zeros(eps.shape[:-1] + (n,))
        for k in range(self.m + 1):
            out += th[k] * eps[..., self.m - k:self.m - k + n]
        return self.mean(n) + out

    def loading_matrix(self, n):
        th = self._coeffs(n)
        L = np.zeros((n, n + self.m))
        rows = np.arange(n)
        for k in range(self.m + 1):
            L[rows, rows + self.m - k] = th[k]
        return L

    def covariance(self, n, i, j):
        if i > j:
            i, j = j, i
        d = j - i
        if d > self.m:
            return 0.0
        th = self._coeffs(n)
        return float(sum(th[k, i - 1] * th[k + d, j - 1] for k in range(self.m - d + 1)))

    def covariance_matrix(self, n):
        L = self.loading_matrix(n)
        return L @ L.T

    def beta_mixing_bound(self, lag):
        _check_lag(lag)
        return 0.0 if lag > self.m else 1.0

    def dependence_range(self, n):
        return self.m

    def to_dict(self):
        return {"kind": self.kind, "m": self.m, "theta": [t.to_dict() for t in self.theta],
                "mean": self.mean.to_dict()}


@dataclass(frozen=True)
class TrendPlusNoise(ProcessSpec):
    """Deterministic trend ``mean_fn`` plus a zero-mean noise process."""

    mean_fn: Path
    noise: ProcessSpec = field(default_factory=IndepHetero)
    kind = "trend-plus-noise"

    def __post_init__(self):
        if isinstance(self.noise, TrendPlusNoise):
            raise ValueError("noise cannot itself be a trend-plus-noise process")
        nm = getattr(self.noise, "mean", None)
        if nm is not None and nm.bounds() != (0.0, 0.0):
            raise ValueError("noise process must have zero mean")

    @property
    def gaussian(self):
        return self.noise.gaussian

    def marginal_family(self):
        return self.noise.marginal_family()

    def n_innovations(self, n):
        return self.noise.n_innovations(n)

    def draw_innovations(self, gen, n):
        return self.noise.draw_innovations(gen, n)

    def mean_path(self, n):
        return self.mean_fn(n) + self.noise.mean_path(n)

    def transform(self, eps, n):
        return self.mean_fn(n) + self.noise.transform(eps, n)

    def covariance(self, n, i, j):
        return self.noise.covariance(n, i, j)

    def covariance_matrix(self, n):
        return self.noise.covariance_matrix(n)

    def marginal_sd(self, n):
        return self.noise.marginal_sd(n)

    def beta_mixing_bound(self, lag):
        return self.noise.beta_mixing_bound(lag)

    def dependence_range(self, n):
        return self.noise.dependence_range(n)

    def to_dict(self):
        return {"kind": self.kind, "mean_fn": self.mean_fn.to_dict(), "noise": self.noise.to_dict()}


def _check_lag(lag):
    if int(lag) < 1:
        raise ValueError("lag must be a positive integer")


def spec_from_dict(d: dict) -> ProcessSpec:
    """Inverse of ``ProcessSpec.to_dict``; also accepts shorthand numbers for paths."""
    kind = d.get("kind")
    if kind == "indep-hetero":
        return IndepHetero(path_from(d.get("sigma", 1.0)), path_from(d.get("mean", 0.0)),
                           d.get("innovation", "gaussian"))
    if kind == "regime-variance":
        return RegimeVariance(float(d["sigma1_sq"]), float(d["sigma2_sq"]),
                              _regime_from(d.get("pattern", {"kind": "oscillating-dyadic"})))
    if kind == "tvar1":
        return TVAR1(path_from(d.get("phi", 0.5)), path_from(d.get("sigma", 1.0)),
                     path_from(d.get("mean", 0.0)))
    if kind == "m-dependent-ma":
        m = int(d.get("m", 1))
        theta = d.get("theta", [1.0] * (m + 1))
        return MDependentMA(m, tuple(path_from(t) for t in theta), path_from(d.get("mean", 0.0)))
    if kind == "trend-plus-noise":
        return TrendPlusNoise(path_from(d["mean_fn"]), spec_from_dict(d.get("noise", {"kind": "indep-hetero"})))
    raise ValueError(f"unknown process kind {kind!r}")


# --------------------------------------------------------------------------
# samples and module-level operations


@dataclass(frozen=True)
class TimeSeriesSample:
    values: np.ndarray
    spec_id: str = "data"
    seed: str = ""
    spec: ProcessSpec | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("a sample is a nonempty 1-d series")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size


def simulate_path(spec: ProcessSpec, n: int, rng) -> TimeSeriesSample:
    """One path of length n.  Deterministic given (spec, n, stream)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = as_generator(rng)
    eps = spec.draw_innovations(gen, n)
    label = rng.label() if isinstance(rng, Stream) else ""
    return TimeSeriesSample(spec.transform(eps, n), spec.spec_id, label, spec)


def simulate_paths(spec: ProcessSpec, n: int, stream: Stream, replicates) -> np.ndarray:
    """Rows are replicates; row for index k is drawn from ``stream.child(k)``."""
    idx = range(replicates) if isinstance(replicates, int) else replicates
    eps = np.stack([spec.draw_innovations(stream.child(k).generator(), n) for k in idx])
    return spec.transform(eps, n)


def mean_path(spec: ProcessSpec, n: int) -> np.ndarray:
    return spec.mean_path(n)


def covariance(spec: ProcessSpec, n: int, i: int, j: int) -> float:
    if not (1 <= i <= n and 1 <= j <= n):
        raise IndexError("indices are 1-based and must not exceed n")
    return spec.covariance(n, i, j)


def covariance_matrix(spec: ProcessSpec, n: int) -> np.ndarray:
    return spec.covariance_matrix(n)


def scaled_average_variance(spec: ProcessSpec, n: int, weight_vector=None) -> float:
    """Var[n^{-1/2} sum_i w_i (X_i - mu(i))] by the double covariance sum."""
    w = np.ones(n) if weight_vector is None else np.asarray(weight_vector, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weight vector must have length {n}")
    return float(w @ spec.covariance_matrix(n) @ w / n)


def beta_mixing_bound(spec: ProcessSpec, lag: int) -> float:
    return spec.beta_mixing_bound(lag)
