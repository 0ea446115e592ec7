"""Finite-dimensional marginals of the Gaussian process that shares the
exact covariance of G_n at each sample size, plus samplers and Monte Carlo
covariance estimates."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _moments
from .errors import CapabilityError, SingularCovarianceError
from .procspace import EvalGrid, FunctionClass, Surface, WeightFamily
from .rng import Stream, as_generator

SOURCES = ("exact-oracle", "monte-carlo-estimate")
JITTER_LEVELS = (0.0,) + tuple(10.0**-k for k in range(12, 5, -1))  # 0, 1e-12, ..., 1e-6
# pairs with |correlation| below this are treated as independent
BAND_CUTOFF = 1e-13


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Covariance of the flattened surface; index j*|F| + k is grid cell (s_j, f_k)."""

    grid: EvalGrid
    matrix: np.ndarray
    source: str = "exact-oracle"
    replicates: int | None = None
    standard_errors: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        c = np.asarray(self.matrix, dtype=float)
        d = self.grid.shape[0] * self.grid.shape[1]
        if c.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {c.shape}")
        scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
        if np.max(np.abs(c - c.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("covariance matrix is not symmetric")
        if np.any(np.diag(c) < -1e-10 * scale):
            raise ValueError("covariance matrix has a negative diagonal entry")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        object.__setattr__(self, "matrix", (c + c.T) / 2)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def _factor(self) -> tuple[np.ndarray, float]:
        c = self.matrix
        scale = max(float(np.max(np.diag(c), initial=0.0)), np.finfo(float).tiny)
        lam, vec = np.linalg.eigh(c)
        for jitter in JITTER_LEVELS:
            if lam.min(initial=0.0) >= -jitter * scale:
                return vec * np.sqrt(np.clip(lam, 0.0, None)), jitter
        raise SingularCovarianceError(
            f"smallest eigenvalue {lam.min():.3e} below -1e-6 * {scale:.3e}; not a covariance")

    @property
    def factor(self) -> np.ndarray:
        """A with A A^T = C (up to the recorded jitter tolerance)."""
        return self._factor[0]

    @property
    def jitter(self) -> float:
        return self._factor[1]

    def scaled(self, factor: float) -> "CovarianceModel":
        return CovarianceModel(self.grid, self.matrix * factor, self.source, self.replicates,
                               None if self.standard_errors is None else self.standard_errors * factor)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.matrix:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "schema": "relclt-covariance/1",
            "source": self.source,
            "replicates": self.replicates,
            "jitter": self.jitter,
            "s_values": self.grid.s_values.tolist(),
            "members": self.grid.fclass.labels,
            "order": "row-major over (s, f)",
        }

    def metadata_json(self) -> str:
        return json.dumps(self.metadata())


# --------------------------------------------------------------------------
# exact covariance oracle


def _band(spec, n, cov, sd):
    r = spec.dependence_range(n)
    if r is not None:
        return min(r, n - 1)
    top = 0
    for lag in range(1, n):
        d = np.abs(np.diagonal(cov, lag)) / (sd[:-lag] * sd[lag:])
        if np.max(d) > BAND_CUTOFF:
            top = lag
        elif lag > top + 8:
            break
    return top


def _base_pair_cov(g1, g2, fam, mu, sd, cov, a, b):
    """Cov[g1(X_a), g2(X_b)] for index arrays a, b (0-based)."""
    k1, p1 = g1
    k2, p2 = g2
    same = a == b
    if fam != "gaussian":
        if not np.all(same):
            raise CapabilityError("non-Gaussian processes are only supported without dependence")
        m, s = mu[a], sd[a]
        if k1 == "power" and k2 == "power":
            return (_moments.raw_moment(fam, m, s, p1 + p2)
                    - _moments.raw_moment(fam, m, s, p1) * _moments.raw_moment(fam, m, s, p2))
        if k1 == "indicator" and k2 == "indicator":
            return (_moments.cdf(fam, m, s, min(p1, p2))
                    - _moments.cdf(fam, m, s, p1) * _moments.cdf(fam, m, s, p2))
        raise CapabilityError("mixed power/indicator covariances are not supported")
    c = cov[a, b]
    if k1 == "power" and k2 == "power":
        return _moments.gaussian_power_cov(p1, p2, mu[a], mu[b], sd[a] ** 2, sd[b] ** 2, c)
    if k1 == "indicator" and k2 == "indicator":
        rho = np.where(same, 1.0, c / (sd[a] * sd[b]))
        return _moments.bvn_excess((p1 - mu[a]) / sd[a], (p2 - mu[b]) / sd[b], rho)
    raise CapabilityError("mixed power/indicator covariances are not supported")


def corresponding_covariance(spec, fclass: FunctionClass, family: WeightFamily, grid: EvalGrid,
                             n: int) -> CovarianceModel:
    """Exact Cov[G_n(s, f), G_n(t, g)] over the grid.

    Entries are n^{-1} sum_{a,b} omega_a(s, f) omega_b(t, g) Cov[f0(X_a), g0(X_b)],
    where omega pushes the weights through each member's difference operator
    and f0, g0 are the base features.  Pairs whose correlation falls below
    ``BAND_CUTOFF`` are skipped.
    """
    if grid.fclass != fclass:
        raise ValueError("grid was built for a different function class")
    members = fclass.members()
    ns, nf = grid.shape
    W = family.matrix(n, grid.s_values)
    omega = np.stack([m.apply_transpose(W) for m in members])  # (k, |S|, n)
    cov = spec.covariance_matrix(n)
    mu, sd = spec.mean_path(n), np.sqrt(np.diag(cov))
    fam = spec.marginal_family()
    out = np.zeros((ns, nf, ns, nf))

    if all(m.base == ("power", 1) for m in members):
        flat = omega.transpose(1, 0, 2).reshape(ns * nf, n)
        return CovarianceModel(grid, flat @ cov @ flat.T / n, "exact-oracle")

    if fam != "gaussian" and spec.dependence_range(n) != 0:
        raise CapabilityError(f"{spec.kind} with {fam} innovations has no exact nonlinear oracle")
    band = _band(spec, n, cov, sd)
    idx = np.arange(n)
    bases = sorted({m.base for m in members}, key=repr)
    for ia, ga in enumerate(bases):
        for gb in bases[ia:]:
            ka = [k for k, m in enumerate(members) if m.base == ga]
            kb = [k for k, m in enumerate(members) if m.base == gb]
            block = np.zeros((len(ka), ns, len(kb), ns))
            for lag in range(-band, band + 1):
                a = idx[max(0, -lag):n - max(0, lag)]
                b = a + lag
                kv = _base_pair_cov(ga, gb, fam, mu, sd, cov, a, b)
                if not np.any(kv):
                    continue
                left = omega[ka][:, :, a] * kv  # (ka, S, len)
                right = omega[kb][:, :, b]
                block += np.einsum("psl,qtl->psqt", left, right)
            for pi, k1 in enumerate(ka):
                for qi, k2 in enumerate(kb):
                    out[:, k1, :, k2] = block[pi, :, qi, :]
                    out[:, k2, :, k1] = block[pi, :, qi, :].T
    mat = out.reshape(ns * nf, ns * nf) / n
    return CovarianceModel(grid, mat, "exact-oracle")


# --------------------------------------------------------------------------
# sampling and Monte Carlo estimates


def sample_gp(model: CovarianceModel, rng) -> Surface:
    gen = as_generator(rng)
    z = gen.standard_normal(model.dim)
    return Surface((model.factor @ z).reshape(model.grid.shape), model.grid, "gaussian")


def sample_gp_batch(model: CovarianceModel, stream: Stream, replicates) -> np.ndarray:
    """Flattened draws, one row per replicate; replicate k uses ``stream.child(k)``."""
    idx = range(replicates) if isinstance(replicates, int) else replicates
    z = np.stack([stream.child(k).generator().standard_normal(model.dim) for k in idx])
    return z @ model.factor.T


def _flatten(surfaces) -> tuple[np.ndarray, EvalGrid]:
    if isinstance(surfaces, np.ndarray):
        raise TypeError("pass Surface objects, or use empirical_covariance_array")
    grid = surfaces[0].grid
    for s in surfaces[1:]:
        if s.grid != grid:
            raise ValueError("replicate surfaces live on different grids")
    return np.stack([s.values.ravel() for s in surfaces]), grid


def covariance_with_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample covariance of the rows of x and entrywise standard errors."""
    m = x.shape[0]
    if m < 2:
        raise ValueError("need at least two replicates")
    z = x - x.mean(axis=0)
    cov = z.T @ z / (m - 1)
    second = (z * z).T @ (z * z) / m
    var_prod = np.clip(second - (z.T @ z / m) ** 2, 0.0, None)
    return cov, np.sqrt(var_prod / m)


def empirical_covariance(surfaces) -> CovarianceModel:
    x, grid = _flatten(list(surfaces))
    cov, se = covariance_with_se(x)
    return CovarianceModel(grid, cov, "monte-carlo-estimate", x.shape[0], se)


def empirical_covariance_array(x: np.ndarray, grid: EvalGrid) -> CovarianceModel:
    x = np.asarray(x, dtype=float).reshape(x.shape[0], -1)
    cov, se = covariance_with_se(x)
    return CovarianceModel(grid, cov, "monte-carlo-estimate", x.shape[0], se)


def mardia_skewness(x: np.ndarray) -> tuple[float, int]:
    """Mardia's skewness statistic m b_1 / 6 and its chi-square degrees of freedom."""
    m, d = x.shape
    z = x - x.mean(axis=0)
    s = z.T @ z / m
    g = z @ np.linalg.pinv(s) @ z.T
    b1 = float(np.sum(g**3)) / m**2
    return m * b1 / 6.0, d * (d + 1) * (d + 2) // 6
