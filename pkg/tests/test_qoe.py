import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from cdnslice.errors import InvalidQoeTarget
from cdnslice.qoe import (PlayoutReport, QoeModelParams, max_streams_for_qoe, mos_flavored,
                          mos_from_playout, mos_single_vcpu, rho_max)

K = Fraction(1046, 10 ** 11)


def exact_mos(x: int) -> Fraction:
    return 5 - K * x * x


def exact_inverse(q: float) -> int:
    """Largest integer n with 5 - k n^2 >= q, by exact integer search."""
    qf = Fraction(q)
    n = math.isqrt(int((5 - qf) / K))
    while exact_mos(n + 1) >= qf:
        n += 1
    while n > 0 and exact_mos(n) < qf:
        n -= 1
    return n


def test_zero_load_is_perfect():
    assert mos_single_vcpu(0) == 5.0


@pytest.mark.parametrize("x, expected", [(12000, 3.4938), (2000, 4.9582)])
def test_reference_points(x, expected):
    assert mos_single_vcpu(x) == pytest.approx(expected, abs=1e-4)


@pytest.mark.parametrize("q, n", [(4.5, 6913), (4.0, 9777)])
def test_inverse_examples(q, n):
    assert max_streams_for_qoe(q) == n == exact_inverse(q)
    assert mos_single_vcpu(n) >= q > mos_single_vcpu(n + 1)


@pytest.mark.parametrize("q", [5.0, 5.5, 0.99, -1.0])
def test_inverse_rejects_out_of_range(q):
    with pytest.raises(InvalidQoeTarget):
        max_streams_for_qoe(q)


def test_flavored_example():
    assert mos_flavored(6000, 2, 0.5, 0.1) == pytest.approx(5.1559, abs=1e-4)
    assert mos_flavored(0, 4, 0.7, 0.0) == 5.0


def test_rho_max_values():
    assert rho_max(1) == 21863
    assert mos_single_vcpu(21863) >= 0 > mos_single_vcpu(21864)
    # 2 * 21863.47 = 43726.95, and 43727 streams already give a negative MOS
    assert rho_max(2) == 43726
    assert mos_flavored(43726, 2, 0, 0) >= 0 > mos_flavored(43727, 2, 0, 0)


def test_playout_surrogate_examples():
    assert mos_from_playout(PlayoutReport(0.0, 0.0)) == 5.0
    assert mos_from_playout(PlayoutReport(2.5, 0.29)) == pytest.approx(3.49, abs=0.02)
    assert mos_from_playout(PlayoutReport(30.0, 1.0)) == 1.0


def test_params_validation():
    with pytest.raises(ValueError):
        QoeModelParams(sigma=1.5)
    with pytest.raises(ValueError):
        QoeModelParams(base_mos=4.0)
    with pytest.raises(ValueError):
        PlayoutReport(1.0, 1.2)


@given(st.integers(0, 200_000))
def test_single_vcpu_matches_exact_arithmetic(x):
    assert abs(mos_single_vcpu(x) - float(exact_mos(x))) <= 1e-9


@given(st.floats(0.0, 1e5), st.floats(1e-3, 1e3))
def test_strictly_decreasing(x, dx):
    assert mos_single_vcpu(x + dx) < mos_single_vcpu(x)


@given(st.floats(1.0, 4.99))
def test_round_trip(q):
    n = max_streams_for_qoe(q)
    assert mos_single_vcpu(n) >= q > mos_single_vcpu(n + 1)


@given(st.floats(0, 1e5), st.integers(1, 64), st.floats(0, 1))
def test_linear_scalability(rho, c, eta):
    assert mos_flavored(2 * rho, 2 * c, eta, 0.0) == pytest.approx(mos_flavored(rho, c, eta, 0.0), abs=1e-9)


@given(st.floats(0, 5e4), st.integers(1, 32), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1))
def test_flavored_monotone(rho, c, eta1, eta2, sigma):
    lo, hi = sorted((eta1, eta2))
    assert mos_flavored(rho, c, lo, sigma) <= mos_flavored(rho, c, hi, sigma)
    assert mos_flavored(rho + 1.0, c, lo, sigma) < mos_flavored(rho, c, lo, sigma)


@given(st.floats(0, 4e4), st.floats(0, 1))
def test_flavored_degenerates_to_single(x, eta):
    assert mos_flavored(x, 1, eta, 0.0) == mos_single_vcpu(x)


@given(st.floats(0, 100), st.floats(0, 1), st.floats(0, 10), st.floats(0, 0.5))
def test_playout_bounds_and_monotonicity(count, ratio, dc, dr):
    base = mos_from_playout(PlayoutReport(count, ratio))
    assert 1.0 <= base <= 5.0
    assert mos_from_playout(PlayoutReport(count + dc, ratio)) <= base
    assert mos_from_playout(PlayoutReport(count, min(1.0, ratio + dr))) <= base
