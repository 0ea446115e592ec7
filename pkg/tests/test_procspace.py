import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from relclt import _moments
from relclt.dgp import IndepHetero, TVAR1, TimeSeriesSample, simulate_path
from relclt.paths import Constant
from relclt.procspace import (BIWEIGHT, TRIWEIGHT, ConstantWeights, EvalGrid, ExplicitMatrix,
                              ForwardDifferences, Identity, IndicatorGrid, KernelWeights, Monomials,
                              PairedIndicatorDiff, Scaled, SequentialIndicator, Surface,
                              TabulatedKernel, empirical_surface, function_class_from, sup_norm,
                              weights_at)
from relclt.rng import Stream


def _sample(x, spec=None):
    return TimeSeriesSample(np.asarray(x, dtype=float), spec=spec)


# -- kernels and weights ---------------------------------------------------


def test_kernels_integrate_to_one_and_are_supported_on_unit_interval():
    for k in (TRIWEIGHT, BIWEIGHT):
        val, _ = integrate.quad(k, -1, 1)
        assert val == pytest.approx(1.0, abs=1e-12)
        assert k(np.array([-1.5, -1.0, 1.0, 2.0])).tolist() == [0.0, 0.0, 0.0, 0.0]
    assert TRIWEIGHT.smooth_c2 and not BIWEIGHT.smooth_c2


def test_triweight_second_derivative_vanishes_at_boundary():
    h = 1e-4
    u = 1.0 - h
    second = (TRIWEIGHT(u + h) - 2 * TRIWEIGHT(u) + TRIWEIGHT(u - h)) / h**2
    assert abs(second) < 1e-2


def test_tabulated_kernel_validation():
    k = TabulatedKernel([-1.0, 0.0, 1.0], [0.0, 1.0, 0.0])  # triangular kernel
    assert k(0.0) == 1.0 and k(0.5) == 0.5 and k(1.5) == 0.0
    nodes = np.linspace(-1, 1, 201)
    with pytest.raises(ValueError):
        TabulatedKernel(nodes, np.ones_like(nodes))  # integrates to 2
    with pytest.raises(ValueError):
        TabulatedKernel(nodes, 0.75 * (1 - nodes**2))  # interpolant misses 1 by 2.5e-5


def test_weights_examples():
    assert weights_at(SequentialIndicator(), 5, 0.0).tolist() == [0, 0, 0, 0, 0]
    assert weights_at(SequentialIndicator(), 5, 1.0).tolist() == [1, 1, 1, 1, 1]
    w = weights_at(KernelWeights(TRIWEIGHT, 0.5), 4, 0.5)
    u = (np.arange(1, 5) - 2) / 2
    np.testing.assert_allclose(w, 35 / 32 * np.clip(1 - u**2, 0, None) ** 3, rtol=0, atol=1e-15)
    assert w[3] == 0.0
    with pytest.raises(ValueError):
        weights_at(SequentialIndicator(), 5, 1.2)
    with pytest.raises(ValueError):
        KernelWeights(TRIWEIGHT, 0.0)


def test_sequential_floor_handles_representation_error():
    # 0.29 * 100 evaluates to 28.999999999999996 in floating point
    assert weights_at(SequentialIndicator(), 100, 0.29).sum() == 29


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 200), s=st.floats(0, 1))
def test_sequential_weights_are_monotone_indicators(n, s):
    w = weights_at(SequentialIndicator(), n, s)
    assert set(np.unique(w)) <= {0.0, 1.0}
    assert np.all(np.diff(w) <= 0)
    w2 = weights_at(SequentialIndicator(), n, min(1.0, s + 0.1))
    assert np.all(w2 >= w)


def test_explicit_matrix_lookup():
    fam = ExplicitMatrix((0.0, 1.0), np.array([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]]))
    np.testing.assert_array_equal(fam.matrix(3, [1.0, 0.0]), [[0, 1, 0], [1, 2, 3]])
    with pytest.raises(ValueError):
        fam.matrix(4, [0.0])
    with pytest.raises(ValueError):
        fam.matrix(3, [0.5])


# -- function classes --------------------------------------------------------


def test_forward_differences_values_and_convention():
    x = np.array([1.0, 4.0, 9.0, 16.0, 25.0, 36.0])
    fd = ForwardDifferences(step=1, max_order=2)
    v = fd.evaluate(x)
    # member r at i: Delta^r X_{i-r}; zero for r >= i
    np.testing.assert_array_equal(v[:, 0], [0, 3, 5, 7, 9, 11])
    np.testing.assert_array_equal(v[:, 1], [0, 0, 2, 2, 2, 2])
    fd2 = ForwardDifferences(step=2, max_order=1)
    np.testing.assert_array_equal(fd2.evaluate(x)[:, 0], [0, 0, 8, 12, 16, 20])
    assert fd.evaluate(x)[0].tolist() == [0.0, 0.0]


def test_paired_indicator_diff_values():
    x = np.array([0.5, -1.0, 2.0, -2.0, 0.0])
    p = PairedIndicatorDiff((0.1,), lag=2)
    v = p.evaluate(x)[:, 0]
    ind = (x < 0.1).astype(float)
    expected = np.r_[0.0, 0.0, ind[2:] - ind[:-2]]
    np.testing.assert_array_equal(v, expected)
    interleaved = np.tile([0.3, -0.7, 1.1], 4)
    assert np.all(PairedIndicatorDiff((-1.0, 0.0, 0.5), 3).evaluate(interleaved) == 0)


def test_class_validation_and_envelopes():
    with pytest.raises(ValueError):
        IndicatorGrid((0.0, 0.0))
    with pytest.raises(ValueError):
        Monomials((5,))
    x = np.linspace(-3, 3, 41)
    for fc in (Identity(), Monomials((1, 2, 3)), IndicatorGrid((-1.0, 0.5)),
               PairedIndicatorDiff((0.0,), 2), ForwardDifferences(1, 3), Scaled(Monomials((2,)), -2.0)):
        assert np.all(np.abs(fc.evaluate(x)) <= fc.envelope(x)[:, None] + 1e-12), fc.kind


@pytest.mark.parametrize("d", [
    {"kind": "identity"}, {"kind": "monomials", "degrees": [1, 3]},
    {"kind": "indicators", "t_min": -1, "t_max": 1, "t_step": 0.5},
    {"kind": "paired-indicator-diff", "thresholds": [0.0, 1.0], "lag": 4},
    {"kind": "forward-differences", "step": 2, "max_order": 3},
])
def test_function_class_round_trip(d):
    fc = function_class_from(d)
    assert function_class_from(fc.to_dict()) == fc


def test_expected_values_match_monte_carlo():
    spec = TVAR1(Constant(0.5), Constant(1.0), Constant(0.3))
    fc = Monomials((1, 2, 3, 4))
    e = fc.expected(spec, 50)
    v = 1 / 0.75
    mu = 0.3
    assert e[10, 1] == pytest.approx(mu**2 + v)
    assert e[10, 3] == pytest.approx(mu**4 + 6 * mu**2 * v + 3 * v**2)
    fi = IndicatorGrid((0.0, 1.0))
    np.testing.assert_allclose(fi.expected(spec, 50)[5], stats.norm.cdf([(0 - mu) / v**0.5, (1 - mu) / v**0.5]))


# -- surfaces ----------------------------------------------------------------


def test_surface_examples():
    grid = EvalGrid([1.0], Identity())
    s = empirical_surface(_sample([1.0, 3.0]), Identity(), ConstantWeights(), grid, centering="zero")
    assert s.values[0, 0] == pytest.approx(2 * math.sqrt(2))
    spec = IndepHetero(mean=Constant(2.0))
    flat = empirical_surface(_sample([2.0] * 7, spec), Identity(), ConstantWeights(), grid)
    assert sup_norm(flat) == 0.0
    assert sup_norm(Surface(np.array([[-2.5]]), grid)) == 2.5


def test_sequential_at_one_equals_constant():
    x = simulate_path(TVAR1(), 37, Stream(4))
    g1 = EvalGrid([1.0], Identity())
    a = empirical_surface(x, Identity(), SequentialIndicator(), g1)
    b = empirical_surface(x, Identity(), ConstantWeights(), g1)
    assert a.values[0, 0] == pytest.approx(b.values[0, 0], rel=1e-13)


@pytest.mark.parametrize("n", [1, 7, 33, 64])
def test_sequential_telescoping(n):
    x = simulate_path(IndepHetero(), n, Stream(5, (n,)))
    s = np.linspace(0, 1, 9)
    fc = Monomials((1, 2))
    surf = empirical_surface(x, fc, SequentialIndicator(), EvalGrid(s, fc))
    y = fc.evaluate(x.values) - fc.expected(x.spec, n)
    cuts = [SequentialIndicator.cutoff(n, v) for v in s]
    for a in range(len(s)):
        for b in range(a, len(s)):
            direct = y[cuts[a]:cuts[b]].sum(axis=0) / math.sqrt(n)
            np.testing.assert_allclose(surf.values[b] - surf.values[a], direct, atol=1e-13)


@pytest.mark.parametrize("a", [-1.0, 0.5, 3.0])
def test_linearity_in_f(a):
    x = simulate_path(TVAR1(), 120, Stream(6))
    base = Monomials((1, 2))
    fam = KernelWeights(TRIWEIGHT, 0.2)
    s = np.linspace(0, 1, 11)
    g = empirical_surface(x, base, fam, EvalGrid(s, base))
    scaled = Scaled(base, a)
    h = empirical_surface(x, scaled, fam, EvalGrid(s, scaled))
    np.testing.assert_allclose(h.values, a * g.values, rtol=1e-14, atol=1e-15)


def test_kernel_locality_is_bit_exact():
    x = simulate_path(TVAR1(), 500, Stream(7))
    fc = IndicatorGrid((-1.0, 0.0, 1.0))
    fam = KernelWeights(TRIWEIGHT, 0.05)
    grid = EvalGrid(np.linspace(0, 1, 51), fc)
    a = empirical_surface(x, fc, fam, grid, windowed=True)
    b = empirical_surface(x, fc, fam, grid, windowed=False)
    assert a.values.tobytes() == b.values.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_sup_norm_symmetry(vals):
    grid = EvalGrid(np.linspace(0, 1, len(vals)), Identity())
    s = Surface(np.array(vals)[:, None], grid)
    assert sup_norm(-s) == sup_norm(s) == max(abs(v) for v in vals)


def test_surface_serialization():
    fc = IndicatorGrid((0.0, 1.0))
    grid = EvalGrid([0.0, 0.5], fc)
    s = Surface(np.array([[0.1, -0.2], [1 / 3, 2.0]]), grid, "bootstrap")
    lines = s.to_csv().splitlines()
    assert lines[0].startswith("# relclt-surface v1")
    assert lines[1] == "s," + ",".join(fc.labels)
    assert float(lines[3].split(",")[1]) == 1 / 3
    d = json.loads(s.to_json())
    assert d["provenance"] == "bootstrap" and d["values"][1][0] == 1 / 3
    with pytest.raises(ValueError):
        Surface(np.zeros((3, 2)), grid)
    with pytest.raises(ValueError):
        Surface(np.array([[np.inf, 0.0], [0.0, 0.0]]), grid)


def test_exact_centering_needs_spec():
    from relclt.errors import CapabilityError
    with pytest.raises(CapabilityError):
        empirical_surface(_sample([1.0, 2.0]), Identity(), ConstantWeights(), EvalGrid([1.0], Identity()))


# -- moment formulas ----------------------------------------------------------


@pytest.mark.parametrize("h,k,rho", [(0.0, 0.0, 0.5), (1.2, -0.4, -0.7), (-2.0, 0.3, 0.95)])
def test_bvn_excess_against_2d_integration(h, k, rho):
    pdf = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]]).pdf
    brute, _ = integrate.dblquad(lambda y, x: pdf([x, y]), -12, h, -12, k, epsabs=1e-11)
    exact = brute - stats.norm.cdf(h) * stats.norm.cdf(k)
    assert _moments.bvn_excess(h, k, rho) == pytest.approx(exact, abs=1e-8)
    # orthant probability at the origin has the closed form 1/4 + asin(rho)/(2 pi)
    assert _moments.bvn_excess(0.0, 0.0, rho) == pytest.approx(np.arcsin(rho) / (2 * np.pi), abs=1e-13)


def test_bvn_excess_degenerate_correlations():
    assert _moments.bvn_excess(0.3, 0.3, 1.0) == pytest.approx(stats.norm.cdf(0.3) * stats.norm.sf(0.3))
    assert _moments.bvn_excess(0.2, -0.5, 0.0) == pytest.approx(0.0, abs=1e-15)
    val = _moments.bvn_excess(0.5, 0.5, -1.0)
    assert val == pytest.approx(stats.norm.cdf(0.5) - stats.norm.cdf(-0.5) - stats.norm.cdf(0.5) ** 2)


def test_gaussian_power_cov_by_monte_carlo_free_identity():
    # Cov[X^2, Y^2] = 2 c^2 + 4 mu1 mu2 c for a bivariate normal
    mu1, mu2, v1, v2, c = 0.4, -1.1, 1.3, 0.7, 0.5
    assert _moments.gaussian_power_cov(2, 2, mu1, mu2, v1, v2, c) == pytest.approx(2 * c**2 + 4 * mu1 * mu2 * c)
    assert _moments.gaussian_power_cov(1, 1, mu1, mu2, v1, v2, c) == pytest.approx(c)
    # Cov[X, Y^3] = 3 c (v2 + mu2^2)
    assert _moments.gaussian_power_cov(1, 3, mu1, mu2, v1, v2, c) == pytest.approx(3 * c * (v2 + mu2**2))


def test_exponential_raw_moments():
    for d in range(1, 6):
        val, _ = integrate.quad(lambda e: (0.5 + 2.0 * (e - 1)) ** d * math.exp(-e), 0, np.inf)
        assert _moments.raw_moment("centered-exponential", 0.5, 2.0, d) == pytest.approx(val, rel=1e-10)
