"""Multiplier bootstrap: block-exponential multipliers, mean-path estimators,
bootstrap surfaces and sup-norm quantiles."""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError
from .procspace import (EvalGrid, FunctionClass, KernelFn, Surface, TRIWEIGHT, WeightFamily,
                        centering_matrix, kernel_from, kernel_matrix)
from .rng import Stream, as_generator, as_stream, standard_exponential

MULTIPLIER_KINDS = ("iid-gaussian", "block-exponential", "constant")
# replicate chunks hold at most this many floats; fixed so results never depend on worker count
_CHUNK_FLOATS = 4_000_000


def cube_root_block(n: int) -> int:
    """Smallest m with m^3 >= n, i.e. ceil(n^(1/3)) without floating error."""
    m = max(1, int(round(n ** (1.0 / 3.0))))
    while m**3 < n:
        m += 1
    while m > 1 and (m - 1) ** 3 >= n:
        m -= 1
    return m


@dataclass(frozen=True)
class MultiplierSpec:
    """Law of the bootstrap multipliers V_{n,1..n}.

    ``block-exponential``: V_i = c * sum_{j=i}^{i+m} (xi_j - 1), xi iid Exp(1),
    with c = m^{-1/2} by default or (m+1)^{-1/2} when ``unit_variance``.
    ``scale`` multiplies every draw (used for deliberately broken controls);
    ``constant`` returns ``value`` everywhere (degenerate test hook).
    """

    kind: str = "block-exponential"
    m: int | None = None
    unit_variance: bool = False
    scale: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in MULTIPLIER_KINDS:
            raise ValueError(f"multiplier kind must be one of {MULTIPLIER_KINDS}")
        if self.m is not None and self.m < 1:
            raise ValueError("block length m must be positive")

    def block_length(self, n: int) -> int:
        return self.m if self.m is not None else cube_root_block(n)

    def to_dict(self):
        d = {"kind": self.kind, "m_rule": "cube-root" if self.m is None else self.m,
             "unit_variance": self.unit_variance, "scale": self.scale}
        if self.kind == "constant":
            d["value"] = self.value
        return d


def multiplier_spec_from(d: dict) -> MultiplierSpec:
    m_rule = d.get("m_rule", d.get("m", "cube-root"))
    m = None if m_rule in (None, "cube-root") else int(m_rule)
    return MultiplierSpec(d.get("kind", "block-exponential"), m, bool(d.get("unit_variance", False)),
                          float(d.get("scale", 1.0)), float(d.get("value", 0.0)))


def gen_multipliers(mspec: MultiplierSpec, n: int, rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    if mspec.kind == "constant":
        return np.full(n, mspec.value * mspec.scale)
    gen = as_generator(rng)
    if mspec.kind == "iid-gaussian":
        return mspec.scale * gen.standard_normal(n)
    m = mspec.block_length(n)
    xi = standard_exponential(gen, n + m) - 1.0
    csum = np.concatenate(([0.0], np.cumsum(xi)))
    window = csum[m + 1:] - csum[:n]
    norm = math.sqrt(m + 1) if mspec.unit_variance else math.sqrt(m)
    return mspec.scale * window / norm


def multiplier_matrix(mspec: MultiplierSpec, n: int, stream: Stream, replicates) -> np.ndarray:
    idx = range(replicates) if isinstance(replicates, int) else replicates
    return np.stack([gen_multipliers(mspec, n, stream.child(k)) for k in idx])


def multiplier_covariance(mspec: MultiplierSpec, i: int, j: int, n: int | None = None) -> float:
    """Exact Cov[V_i, V_j].  Block rule needs ``n`` unless m is explicit."""
    if mspec.kind == "constant":
        return 0.0
    if mspec.kind == "iid-gaussian":
        return mspec.scale**2 * float(i == j)
    if mspec.m is None and n is None:
        raise ValueError("cube-root block rule needs n")
    m = mspec.block_length(n) if mspec.m is None else mspec.m
    overlap = max(0, m + 1 - abs(i - j))
    denom = m + 1 if mspec.unit_variance else m
    return mspec.scale**2 * overlap / denom


# --------------------------------------------------------------------------
# mean-path estimators


@dataclass(frozen=True, eq=False)
class MeanEstimator:
    """Estimator of mu_n(i, f).

    kinds: ``zero``; ``known`` (exact oracle from the sample's process spec,
    or an explicit ``values`` matrix); ``kernel`` with
    mu_hat(i, f) = (n b)^{-1} sum_j K((j - i)/(n b)) f(Z_j).
    ``normalized`` divides by the kernel row sums instead of n b.
    """

    kind: str = "zero"
    bandwidth: float = 0.1
    kernel: KernelFn = TRIWEIGHT
    normalized: bool = False
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "known", "kernel"):
            raise ValueError(f"unknown centering kind {self.kind!r}")
        if self.kind == "kernel" and not 0.0 < self.bandwidth <= 1.0:
            raise ValueError("bandwidth must lie in (0, 1]")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "kernel":
            d.update(bandwidth=self.bandwidth, kernel=self.kernel.to_dict(), normalized=self.normalized)
        return d


ZERO = MeanEstimator("zero")
KNOWN = MeanEstimator("known")


def kernel_smoother(bandwidth: float, kernel=None, normalized: bool = False) -> MeanEstimator:
    return MeanEstimator("kernel", bandwidth, kernel_from(kernel), normalized)


def mean_estimator_from(d: dict) -> MeanEstimator:
    kind = d.get("kind", "zero")
    if kind == "kernel":
        return kernel_smoother(float(d.get("bandwidth", 0.1)), d.get("kernel"), bool(d.get("normalized", False)))
    return MeanEstimator(kind)


def smoother_matrix(n: int, bandwidth: float, kernel: KernelFn, normalized: bool = False) -> np.ndarray:
    """Row i holds the smoothing weights for index i (same kernel code as the weight families)."""
    k = kernel_matrix(kernel, n, bandwidth, np.arange(1, n + 1))
    if normalized:
        return k / k.sum(axis=1, keepdims=True)
    return k / (n * bandwidth)


def estimate_mean_path(est: MeanEstimator, sample, fclass: FunctionClass) -> np.ndarray:
    n, k = sample.n, len(fclass)
    if est.kind == "zero":
        return np.zeros((n, k))
    if est.kind == "known":
        if est.values is not None:
            return centering_matrix(est.values, sample, fclass)
        if getattr(sample, "spec", None) is None:
            raise CapabilityError("known-path centering needs a sample carrying its process spec")
        return fclass.expected(sample.spec, n)
    return smoother_matrix(n, est.bandwidth, est.kernel, est.normalized) @ fclass.evaluate(sample.values)


# --------------------------------------------------------------------------
# bootstrap surfaces and quantiles


@dataclass(frozen=True, eq=False)
class BootstrapRun:
    B: int
    sup_norms: np.ndarray
    seed: str = ""
    surfaces: np.ndarray | None = None

    def __post_init__(self):
        v = np.sort(np.asarray(self.sup_norms, dtype=float))
        if v.size != self.B:
            raise ValueError("need one sup-norm per replicate")
        object.__setattr__(self, "sup_norms", v)

    def quantile(self, alpha: float) -> float:
        return float(self.sup_norms[quantile_rank(self.B, alpha) - 1])

    def p_value(self, statistic: float) -> float:
        return (1 + int(np.sum(self.sup_norms >= statistic))) / (self.B + 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# relclt-bootstrap v1 B={self.B} seed={self.seed}\n")
        buf.write("rank,sup_norm\n")
        for r, v in enumerate(self.sup_norms, 1):
            buf.write(f"{r},{float(v)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BootstrapRun":
        seed = ""
        vals = []
        for line in text.splitlines():
            if line.startswith("#"):
                for tok in line.split():
                    if tok.startswith("seed="):
                        seed = tok[5:]
                continue
            if not line or line.startswith("rank"):
                continue
            vals.append(float(line.split(",")[1]))
        return cls(len(vals), np.array(vals), seed)


def quantile_rank(B: int, alpha: float) -> int:
    """1-based rank ceil(B (1 - alpha)) of the order statistic used as quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if B < 1:
        raise ValueError("B must be at least 1")
    return min(B, max(1, math.ceil(B * (1.0 - alpha) - 1e-9)))


def _residuals(sample, fclass, est):
    return fclass.evaluate(sample.values) - estimate_mean_path(est, sample, fclass)


def bootstrap_surface(sample, fclass: FunctionClass, family: WeightFamily, grid: EvalGrid,
                      mspec: MultiplierSpec, est: MeanEstimator, rng, multipliers=None) -> Surface:
    """One replicate n^{-1/2} sum_i V_i w_i(s) (f(Z_i) - mu_hat(i, f))."""
    if grid.fclass != fclass:
        raise ValueError("grid was built for a different function class")
    n = sample.n
    v = gen_multipliers(mspec, n, rng) if multipliers is None else np.asarray(multipliers, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"need {n} multipliers, got shape {v.shape}")
    W = family.matrix(n, grid.s_values)
    vals = W @ (v[:, None] * _residuals(sample, fclass, est)) / math.sqrt(n)
    return Surface(vals, grid, "bootstrap")


def chunk_size(n: int, ns: int, nf: int) -> int:
    return max(1, _CHUNK_FLOATS // max(1, n * nf + ns * nf))


def _sup_chunk(W, resid, mspec, stream, idx, keep):
    n, k = resid.shape
    v = multiplier_matrix(mspec, n, stream, idx)  # (c, n)
    x = (v.T[:, :, None] * resid[:, None, :]).reshape(n, len(idx) * k)
    g = (W @ x).reshape(W.shape[0], len(idx), k).transpose(1, 0, 2) / math.sqrt(n)
    sups = np.max(np.abs(g), axis=(1, 2))
    return sups, (g if keep else None)


def bootstrap_sup_norms(W: np.ndarray, resid: np.ndarray, mspec: MultiplierSpec, stream: Stream,
                        B: int, workers: int = 1, keep: bool = False):
    """Sup-norms of B bootstrap surfaces for fixed residuals; replicate b uses ``stream.child(b)``."""
    n, k = resid.shape
    c = chunk_size(n, W.shape[0], k)
    chunks = [list(range(lo, min(B, lo + c))) for lo in range(0, B, c)]
    job = lambda idx: _sup_chunk(W, resid, mspec, stream, idx, keep)  # noqa: E731
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(ch) for ch in chunks]
    sups = np.concatenate([p[0] for p in parts])
    surf = np.concatenate([p[1] for p in parts]) if keep else None
    return sups, surf


def bootstrap_quantile(sample, fclass: FunctionClass, family: WeightFamily, grid: EvalGrid,
                       mspec: MultiplierSpec, est: MeanEstimator, B: int, alpha: float, rng,
                       keep_surfaces: bool = False, workers: int = 1) -> tuple[float, BootstrapRun]:
    """(1 - alpha) bootstrap quantile of the sup-norm: order statistic of rank ceil(B(1 - alpha))."""
    rank = quantile_rank(B, alpha)
    if grid.fclass != fclass:
        raise ValueError("grid was built for a different function class")
    stream = as_stream(rng)
    W = family.matrix(sample.n, grid.s_values)
    sups, surf = bootstrap_sup_norms(W, _residuals(sample, fclass, est), mspec, stream, B,
                                     workers, keep_surfaces)
    run = BootstrapRun(B, sups, stream.label(), surf)
    return float(run.sup_norms[rank - 1]), run
