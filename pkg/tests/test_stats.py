import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from lossforge.stats import betainc, kendall_tau, t_sf, welch_t


def pair_count_tau(a, b):
    """Brute-force tau-b: count concordant and discordant pairs one by one."""
    conc = disc = tie_a = tie_b = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        da, db = a[i] - a[j], b[i] - b[j]
        if da == 0 and db == 0:
            continue
        if da == 0:
            tie_a += 1
        elif db == 0:
            tie_b += 1
        elif (da > 0) == (db > 0):
            conc += 1
        else:
            disc += 1
    n0 = conc + disc
    return (conc - disc) / math.sqrt((n0 + tie_a) * (n0 + tie_b))


def test_kendall_fixtures():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4 / 6, abs=1e-15)


def test_kendall_against_pair_counting():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 31))
        # small integer ranges force ties
        a = rng.integers(0, 6, size=n).tolist()
        b = rng.integers(0, 6, size=n).tolist()
        if len(set(a)) == 1 or len(set(b)) == 1:
            assert kendall_tau(a, b) is None
            continue
        assert kendall_tau(a, b) == pytest.approx(pair_count_tau(a, b), abs=1e-12)
        assert kendall_tau(a, b) == pytest.approx(stats.kendalltau(a, b).statistic, abs=1e-12)


def test_kendall_symmetry_and_monotone_invariance():
    rng = np.random.default_rng(12)
    for _ in range(20):
        a = rng.uniform(0.1, 2, size=15)
        b = rng.uniform(0.1, 2, size=15)
        tau = kendall_tau(a, b)
        assert kendall_tau(b, a) == tau
        assert kendall_tau(a ** 3, b) == tau
        assert kendall_tau(a, np.exp(b)) == tau


def test_kendall_errors():
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1], [1])
    assert kendall_tau([1, 1, 1], [1, 2, 3]) is None


def t_sf_by_integration(t, df):
    """Survival function by quadrature of the Student t density."""
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    pdf = lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2)  # noqa: E731
    value, _ = integrate.quad(pdf, t, math.inf, epsabs=1e-12, epsrel=1e-12)
    return value


def test_welch_fixture():
    r = welch_t([2, 3, 4], [1, 2, 3])
    assert r.t == pytest.approx(1.224744871391589, rel=1e-12)
    assert r.df == pytest.approx(4.0, rel=1e-12)
    oracle = 2 * t_sf_by_integration(r.t, r.df)
    assert abs(r.p - oracle) < 1e-3
    assert r.p == pytest.approx(oracle, abs=1e-8)
    assert r.p == pytest.approx(0.288, abs=5e-4)


def test_welch_identical_samples():
    r = welch_t([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert r.t == 0 and r.p == 1.0


def test_welch_zero_variance_is_undefined():
    r = welch_t([1, 1, 1], [1, 1, 1])
    assert r.p is None and math.isnan(r.t)


def test_welch_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a = rng.normal(0, rng.uniform(0.5, 2), size=int(rng.integers(2, 20)))
        b = rng.normal(0.3, rng.uniform(0.5, 2), size=int(rng.integers(2, 20)))
        ours = welch_t(a, b)
        ref = stats.ttest_ind(a, b, equal_var=False)
        assert ours.t == pytest.approx(ref.statistic, rel=1e-10)
        assert ours.p == pytest.approx(ref.pvalue, abs=1e-8)
        greater = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
        assert welch_t(a, b, "greater").p == pytest.approx(greater.pvalue, abs=1e-8)


def test_welch_symmetry_and_monotonicity():
    a = [0.1, 0.4, 0.2, 0.5, 0.3]
    b = [0.3, 0.1, 0.6, 0.2, 0.4]
    ab, ba = welch_t(a, b), welch_t(b, a)
    assert ab.t == -ba.t and ab.p == ba.p
    base = np.array([0.0, 0.3, -0.2, 0.5, -0.1, 0.2])
    ps = [welch_t(base + shift, base).p for shift in np.linspace(0, 2, 21)]
    assert ps[0] == 1.0
    assert all(0 < p <= 1 for p in ps)
    assert all(x > y for x, y in zip(ps, ps[1:]))


def test_welch_errors():
    with pytest.raises(ValueError):
        welch_t([1], [1, 2])
    with pytest.raises(ValueError):
        welch_t([1, 2], [1, 2], alternative="less-ish")


def test_betainc_and_t_sf_against_scipy():
    from scipy import special
    for a, b, x in [(0.5, 0.5, 0.3), (2, 3, 0.9), (10, 0.5, 0.99), (50, 50, 0.5), (1, 1, 0.0)]:
        assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-13)
    for t, df in [(0.0, 3), (1.5, 2.5), (-2.0, 10), (8.0, 4), (40.0, 30)]:
        assert t_sf(t, df) == pytest.approx(stats.t.sf(t, df), rel=1e-10, abs=1e-300)
