"""Monte Carlo harness: relative-CLT distance decay, bootstrap consistency,
band coverage and test level/power experiments.

Every replicate draws from its own child stream, and work is cut into
chunks whose size does not depend on the number of workers, so reports are
bit-identical for any ``workers`` setting.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .bootstrap import (KNOWN, MeanEstimator, MultiplierSpec, ZERO, estimate_mean_path,
                        gen_multipliers, quantile_rank)
from .dgp import ProcessSpec, simulate_path, simulate_paths
from .gaussian import corresponding_covariance, sample_gp_batch
from .inference import run_test, smoothed_mean, uniform_band
from .procspace import (TRIWEIGHT, ConstantWeights, EvalGrid, FunctionClass, Identity,
                        WeightFamily, batch_surfaces, kernel_from)
from .rng import Stream

SOURCES = ("empirical", "gaussian-oracle", "bootstrap")
# replicates per chunk: fixed, independent of the worker count
CHUNK = 250
# tolerated non-monotone steps in a distance schedule
INVERSIONS_ALLOWED = 1


def _pmap(fn, items, workers: int):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _chunks(M: int):
    return [range(lo, min(M, lo + CHUNK)) for lo in range(0, M, CHUNK)]


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``statistic`` is ``"sup"`` or ``("marginal", j, k)`` for the cell (s_j, f_k).
    ``centering`` is the bootstrap mean estimator and ``multiplier`` the
    multiplier law; ``variance_scale`` multiplies the matched Gaussian
    covariance (values other than 1 give a deliberately broken control).
    """

    spec: ProcessSpec
    fclass: FunctionClass = field(default_factory=Identity)
    family: WeightFamily = field(default_factory=ConstantWeights)
    s_values: np.ndarray | None = None
    statistic: object = "sup"
    n_schedule: tuple[int, ...] = (128, 512, 2048)
    M: int = 10_000
    B: int = 300
    alpha: float = 0.05
    seed: int = 0
    centering: MeanEstimator = KNOWN
    multiplier: MultiplierSpec = field(default_factory=MultiplierSpec)
    variance_scale: float = 1.0
    threshold: float = 0.03
    workers: int = 1

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_schedule)
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n_schedule must be strictly increasing")
        if self.M < 100:
            raise ValueError("M must be at least 100")
        object.__setattr__(self, "n_schedule", ns)
        s = self.family.default_s_values() if self.s_values is None else self.s_values
        object.__setattr__(self, "s_values", np.atleast_1d(np.asarray(s, dtype=float)))
        if self.statistic != "sup":
            kind, j, k = self.statistic
            if kind != "marginal":
                raise ValueError("statistic must be 'sup' or ('marginal', j, k)")

    @property
    def grid(self) -> EvalGrid:
        return EvalGrid(self.s_values, self.fclass)

    def reduce(self, flat: np.ndarray) -> np.ndarray:
        """Statistic of each row of flattened surfaces (rows, |S| * |F|)."""
        if self.statistic == "sup":
            return np.max(np.abs(flat), axis=1)
        _, j, k = self.statistic
        return flat[:, j * len(self.fclass) + k]

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "function_class": self.fclass.to_dict(),
                "weights": self.family.to_dict(), "s_values": self.s_values.tolist(),
                "statistic": self.statistic if self.statistic == "sup" else list(self.statistic),
                "n_schedule": list(self.n_schedule), "M": self.M, "B": self.B, "alpha": self.alpha,
                "seed": self.seed, "centering": self.centering.to_dict(),
                "multiplier": self.multiplier.to_dict(), "variance_scale": self.variance_scale,
                "threshold": self.threshold}


# --------------------------------------------------------------------------
# distances


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup_t |F_a(t) - F_b(t)|, exact."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def count_inversions(distances) -> int:
    d = np.asarray(distances, dtype=float)
    return int(np.sum(np.diff(d) > 0))


@dataclass(frozen=True)
class DistanceRow:
    n: int
    distance: float
    noise_floor: float


@dataclass(frozen=True)
class DistanceReport:
    check: str
    rows: tuple[DistanceRow, ...]
    threshold: float
    config: dict = field(default_factory=dict, compare=False)

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.rows])

    @property
    def final_distance(self) -> float:
        return self.rows[-1].distance

    @property
    def verdict(self) -> bool:
        """Pass iff the distance at the largest n is within max(2 x noise floor, threshold)."""
        last = self.rows[-1]
        return last.distance <= max(2.0 * last.noise_floor, self.threshold)

    @property
    def monotone(self) -> bool:
        return count_inversions(self.distances) <= INVERSIONS_ALLOWED

    def to_dict(self) -> dict:
        return {"schema": "relclt-distance/1", "check": self.check, "threshold": self.threshold,
                "verdict": self.verdict, "monotone": self.monotone,
                "inversions": count_inversions(self.distances),
                "rows": [{"n": r.n, "distance": r.distance, "noise_floor": r.noise_floor}
                         for r in self.rows], "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# relclt-distance v1 check={self.check}\n")
        buf.write("n,distance,noise_floor\n")
        for r in self.rows:
            buf.write(f"{r.n},{r.distance!r},{r.noise_floor!r}\n")
        return buf.getvalue()


# --------------------------------------------------------------------------
# replicate statistics


def _empirical_chunk(config, n, stream, W, expected, idx):
    x = simulate_paths(config.spec, n, stream, idx)
    y = config.fclass.evaluate(x) - expected
    return config.reduce(batch_surfaces(W, y).reshape(len(idx), -1))


def _bootstrap_chunk(config, n, stream, W, expected, idx):
    """Unconditional bootstrap draws: fresh data and fresh multipliers per replicate.

    Replicate k reads its data from ``stream.child(k)``, the same stream the
    empirical source uses, so both sources see common random data.
    """
    out = np.empty(len(idx))
    for pos, k in enumerate(idx):
        sample = simulate_path(config.spec, n, stream.child(k))
        resid = config.fclass.evaluate(sample.values) - estimate_mean_path(config.centering, sample,
                                                                           config.fclass)
        v = gen_multipliers(config.multiplier, n, stream.child(k, 1))
        surf = W @ (v[:, None] * resid) / math.sqrt(n)
        out[pos] = config.reduce(surf.reshape(1, -1))[0]
    return out


def replicate_statistic(config: ExperimentConfig, n: int, M: int, source: str, rng) -> np.ndarray:
    """M iid draws of the configured statistic at sample size n.

    ``empirical`` draws G_n from fresh data (exact centering);
    ``gaussian-oracle`` draws the corresponding Gaussian process (covariance
    multiplied by ``variance_scale``); ``bootstrap`` draws the multiplier
    process with fresh data and fresh multipliers each replicate; its data
    for replicate k coincide with the empirical source's on the same ``rng``.
    """
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}")
    stream = rng if isinstance(rng, Stream) else Stream(int(rng))
    grid = config.grid
    if source == "gaussian-oracle":
        model = corresponding_covariance(config.spec, config.fclass, config.family, grid, n)
        if config.variance_scale != 1.0:
            model = model.scaled(config.variance_scale)
        model.factor  # factor once before the workers share the model
        parts = _pmap(lambda idx: config.reduce(sample_gp_batch(model, stream, idx)),
                      _chunks(M), config.workers)
        return np.concatenate(parts)
    W = config.family.matrix(n, grid.s_values)
    expected = config.fclass.expected(config.spec, n)
    job = _empirical_chunk if source == "empirical" else _bootstrap_chunk
    parts = _pmap(lambda idx: job(config, n, stream, W, expected, idx), _chunks(M), config.workers)
    return np.concatenate(parts)


def _noise_floor(M: int, stream: Stream) -> float:
    a = stream.child(0).generator().standard_normal(M)
    b = stream.child(1).generator().standard_normal(M)
    return ks_distance(a, b)


def _distance_check(config: ExperimentConfig, other: str, check: str) -> DistanceReport:
    root = Stream(config.seed)
    rows = []
    for pos, n in enumerate(config.n_schedule):
        emp = replicate_statistic(config, n, config.M, "empirical", root.child(pos, 0))
        # the bootstrap shares the empirical data streams; the oracle gets its own
        alt_stream = root.child(pos, 0) if other == "bootstrap" else root.child(pos, 1)
        alt = replicate_statistic(config, n, config.M, other, alt_stream)
        rows.append(DistanceRow(n, ks_distance(emp, alt), _noise_floor(config.M, root.child(pos, 2))))
    return DistanceReport(check, tuple(rows), config.threshold, config.to_dict())


def relative_clt_check(config: ExperimentConfig) -> DistanceReport:
    """KS distance between the statistic of G_n and of its corresponding Gaussian process."""
    return _distance_check(config, "gaussian-oracle", "relative-clt")


def bootstrap_consistency_check(config: ExperimentConfig) -> DistanceReport:
    """KS distance between unconditional bootstrap draws and empirical draws of the statistic.

    This checks the unconditional consequence of bootstrap consistency on the
    configured functional, not the conditional bounded-Lipschitz statement.
    """
    return _distance_check(config, "bootstrap", "bootstrap-consistency")


# --------------------------------------------------------------------------
# coverage and level / power


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    runs: int
    covered: int
    ci: tuple[float, float]
    mean_half_width: float
    config: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"schema": "relclt-coverage/1", "coverage": self.coverage, "runs": self.runs,
                "covered": self.covered, "wilson_low": self.ci[0], "wilson_high": self.ci[1],
                "mean_half_width": self.mean_half_width, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def coverage_experiment(spec: ProcessSpec, n: int, b: float, alpha: float, B: int, runs: int,
                        multiplier: MultiplierSpec | None = None, seed: int = 0, kernel=None,
                        centering: MeanEstimator | None = None, workers: int = 1) -> CoverageReport:
    """Fraction of runs whose uniform band contains the smoothed true mean at every s = i/n.

    ``centering`` selects the bootstrap residuals; the default is the kernel
    trend itself, ``KNOWN`` uses the true mean path.
    """
    kernel = kernel_from(kernel) if kernel is not None else TRIWEIGHT
    multiplier = multiplier or MultiplierSpec()
    target = smoothed_mean(spec.mean_path(n), b, kernel)
    root = Stream(seed)

    def one(r):
        sample = simulate_path(spec, n, root.child(r, 0))
        band = uniform_band(sample, b, alpha, B, multiplier, root.child(r, 1), kernel, centering)
        return band.covers(target), band.half_width

    res = _pmap(one, range(runs), workers)
    covered = sum(c for c, _ in res)
    cfg = {"spec": spec.to_dict(), "n": n, "b": b, "alpha": alpha, "B": B, "runs": runs,
           "multiplier": multiplier.to_dict(), "seed": seed, "kernel": kernel.to_dict(),
           "centering": "kernel-trend" if centering is None else centering.to_dict()}
    return CoverageReport(covered / runs, runs, covered, wilson_interval(covered, runs),
                          float(np.mean([h for _, h in res])), cfg)


@dataclass(frozen=True)
class RejectionRates:
    alphas: tuple[float, ...]
    rates: dict  # spec label -> tuple of rates, one per alpha
    counts: dict
    runs: dict  # spec label -> number of runs
    config: dict = field(default_factory=dict, compare=False)

    def rate(self, label: str, alpha: float) -> float:
        return self.rates[label][self.alphas.index(alpha)]

    def ci(self, label: str, alpha: float) -> tuple[float, float]:
        return wilson_interval(self.counts[label][self.alphas.index(alpha)], self.runs[label])

    def to_dict(self) -> dict:
        out = {"schema": "relclt-rejection/1", "alphas": list(self.alphas), "runs": dict(self.runs),
               "config": self.config, "results": {}}
        for label in self.rates:
            out["results"][label] = [
                {"alpha": a, "rate": r, "rejections": c,
                 "wilson": list(wilson_interval(c, self.runs[label]))}
                for a, r, c in zip(self.alphas, self.rates[label], self.counts[label])]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def level_power_experiment(h0_spec: ProcessSpec, h1_spec: ProcessSpec | None, fclass: FunctionClass,
                           family: WeightFamily, n: int, B: int, runs: int, alphas=(0.05,),
                           multiplier: MultiplierSpec | None = None, centering: MeanEstimator = ZERO,
                           s_values=None, seed: int = 0, runs_h1: int | None = None,
                           workers: int = 1) -> RejectionRates:
    """Rejection rates of the sup-type test under a null and an alternative spec.

    One bootstrap run per replicate serves every alpha, so the rates are
    nondecreasing in alpha on fixed seeds.
    """
    alphas = tuple(float(a) for a in alphas)
    for a in alphas:
        quantile_rank(B, a)
    multiplier = multiplier or MultiplierSpec()
    root = Stream(seed)
    specs = {"h0": (h0_spec, runs)}
    if h1_spec is not None:
        specs["h1"] = (h1_spec, runs if runs_h1 is None else runs_h1)
    rates, counts = {}, {}
    for tag, (spec, R) in specs.items():
        branch = root.child(0 if tag == "h0" else 1)

        def one(r, spec=spec, branch=branch):
            sample = simulate_path(spec, n, branch.child(r, 0))
            rep = run_test(sample, fclass, family, alphas[0], B, multiplier, centering,
                           branch.child(r, 1), s_values)
            return [rep.statistic > rep.run.quantile(a) for a in alphas]

        decisions = np.array(_pmap(one, range(R), workers), dtype=bool).reshape(R, len(alphas))
        c = decisions.sum(axis=0)
        counts[tag] = tuple(int(v) for v in c)
        rates[tag] = tuple(float(v) / R for v in c)
    cfg = {"h0": h0_spec.to_dict(), "h1": None if h1_spec is None else h1_spec.to_dict(),
           "function_class": fclass.to_dict(), "weights": family.to_dict(), "n": n, "B": B,
           "multiplier": multiplier.to_dict(), "centering": centering.to_dict(), "seed": seed}
    return RejectionRates(alphas, rates, counts, {tag: R for tag, (_, R) in specs.items()}, cfg)
