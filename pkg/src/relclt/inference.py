"""Kernel trend estimation with uniform bootstrap bands, and sup-type
bootstrap tests built on weighted empirical processes."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import (BootstrapRun, MeanEstimator, MultiplierSpec, ZERO, bootstrap_sup_norms,
                        estimate_mean_path, kernel_smoother, quantile_rank, smoother_matrix)
from .dgp import TimeSeriesSample
from .procspace import (EvalGrid, FunctionClass, Identity, KernelWeights, PairedIndicatorDiff, TRIWEIGHT,
                        WeightFamily, empirical_surface, kernel_from, kernel_matrix, sup_norm)
from .rng import as_stream


def _as_sample(x) -> TimeSeriesSample:
    if isinstance(x, TimeSeriesSample):
        return x
    return TimeSeriesSample(np.asarray(x, dtype=float))


def kernel_trend(sample, b: float, kernel=TRIWEIGHT) -> np.ndarray:
    """mu_hat_b(i) = (n b)^{-1} sum_j K((j - i)/(n b)) X_j for i = 1..n (unnormalized)."""
    x = _as_sample(sample).values
    if not 0.0 < b <= 1.0:
        raise ValueError("bandwidth must lie in (0, 1]")
    return smoother_matrix(x.size, b, kernel_from(kernel)) @ x


def smoothed_mean(mean_path, b: float, kernel=TRIWEIGHT) -> np.ndarray:
    """The same smoother applied to the true mean path: the target of the band."""
    mu = np.asarray(mean_path, dtype=float)
    if not 0.0 < b <= 1.0:
        raise ValueError("bandwidth must lie in (0, 1]")
    return smoother_matrix(mu.size, b, kernel_from(kernel)) @ mu


@dataclass(frozen=True, eq=False)
class TrendBand:
    s_grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    q: float
    alpha: float
    B: int
    b: float
    run: BootstrapRun | None = field(default=None, repr=False)

    @property
    def half_width(self) -> float:
        return float(self.q / math.sqrt(self.estimate.size))

    def covers(self, target) -> bool:
        target = np.asarray(target, dtype=float)
        return bool(np.all((self.lower <= target) & (target <= self.upper)))

    def diagnostics(self) -> dict:
        return {"n": int(self.estimate.size), "q": self.q, "half_width": self.half_width,
                "sqrt_n_width": 2.0 * self.q, "alpha": self.alpha, "B": self.B, "bandwidth": self.b}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# relclt-band v1 alpha={self.alpha!r} B={self.B} b={self.b!r} q={self.q!r}\n")
        buf.write("s,estimate,lower,upper\n")
        for row in zip(self.s_grid, self.estimate, self.lower, self.upper):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def uniform_band(sample, b: float, alpha: float, B: int, mspec: MultiplierSpec | None = None,
                 rng=0, kernel=TRIWEIGHT, centering: MeanEstimator | None = None,
                 workers: int = 1) -> TrendBand:
    """Uniform (1 - alpha) band mu_hat_b +/- q/sqrt(n) over s = i/n.

    q is the bootstrap quantile of sup_i sqrt(n) |mu*_b(i)| with
    mu*_b(i) = (n b)^{-1} sum_j K((j - i)/(n b)) V_j (X_j - mu_hat(j)).
    The residual centering defaults to the kernel trend itself.
    """
    sample = _as_sample(sample)
    kernel = kernel_from(kernel)
    mspec = mspec or MultiplierSpec()
    n = sample.n
    quantile_rank(B, alpha)
    est = kernel_trend(sample, b, kernel)
    if centering is None:
        resid = sample.values - est
    else:
        resid = sample.values - estimate_mean_path(centering, sample, Identity())[:, 0]
    # sqrt(n) * mu*_b(i) = (1/b) * n^{-1/2} sum_j K(.) V_j r_j, so reuse the surface machinery
    W = kernel_matrix(kernel, n, b, np.arange(1, n + 1))
    stream = as_stream(rng)
    sups, _ = bootstrap_sup_norms(W, resid[:, None], mspec, stream, B, workers)
    run = BootstrapRun(B, sups / b, stream.label())
    q = run.quantile(alpha)
    hw = q / math.sqrt(n)
    return TrendBand(np.arange(1, n + 1) / n, est, est - hw, est + hw, q, alpha, B, b, run)


@dataclass(frozen=True, eq=False)
class TestReport:
    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    alpha: float
    B: int
    config: dict = field(default_factory=dict)
    run: BootstrapRun | None = field(default=None, repr=False)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {"schema": "relclt-test/1", "statistic": self.statistic,
                "critical_value": self.critical_value, "p_value": self.p_value,
                "reject": self.reject, "alpha": self.alpha, "B": self.B, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def run_test(z_sample, fclass: FunctionClass, family: WeightFamily, alpha: float, B: int,
             mspec: MultiplierSpec | None = None, centering: MeanEstimator = ZERO, rng=0,
             s_values=None, workers: int = 1) -> TestReport:
    """Sup-type bootstrap test of H0: E f(Z_i) = 0 for all i and f.

    T_n is the sup-norm of the zero-centered empirical surface; the critical
    value is the bootstrap quantile with residuals f(Z_i) - mu_hat(i, f) from
    ``centering``.  Rejects iff T_n > c*.
    """
    sample = _as_sample(z_sample)
    mspec = mspec or MultiplierSpec()
    rank = quantile_rank(B, alpha)
    s_values = family.default_s_values() if s_values is None else np.asarray(s_values, dtype=float)
    grid = EvalGrid(s_values, fclass)
    t_n = sup_norm(empirical_surface(sample, fclass, family, grid, centering="zero"))
    resid = fclass.evaluate(sample.values) - estimate_mean_path(centering, sample, fclass)
    stream = as_stream(rng)
    sups, _ = bootstrap_sup_norms(family.matrix(sample.n, grid.s_values), resid, mspec, stream,
                                  B, workers)
    run = BootstrapRun(B, sups, stream.label())
    crit = float(run.sup_norms[rank - 1])
    config = {"function_class": fclass.to_dict(), "weights": family.to_dict(),
              "s_values": grid.s_values.tolist(), "multiplier": mspec.to_dict(),
              "centering": centering.to_dict(), "n": sample.n, "seed": stream.label()}
    return TestReport(t_n, crit, run.p_value(t_n), bool(t_n > crit), alpha, B, config, run)


def ks_nonstationarity_test(x_sample, lag: int, thresholds, b: float, alpha: float, B: int,
                            rng=0, kernel=TRIWEIGHT, s_values=None,
                            mspec: MultiplierSpec | None = None, workers: int = 1) -> TestReport:
    """Kolmogorov-Smirnov type test comparing the marginal law at i and i - lag.

    T_n = sup_{s, t} |n^{-1/2} sum_i K((i - s n)/(n b)) (1{X_i < t} - 1{X_{i-L} < t})|,
    bootstrapped with kernel-smoother centering of the indicator differences.
    """
    sample = _as_sample(x_sample)
    if not 1 <= lag < sample.n:
        raise ValueError("lag must satisfy 1 <= L < n")
    fclass = PairedIndicatorDiff(tuple(float(t) for t in thresholds), int(lag))
    family = KernelWeights(kernel_from(kernel), b)
    return run_test(sample, fclass, family, alpha, B, mspec, kernel_smoother(b, kernel), rng,
                    s_values, workers)
