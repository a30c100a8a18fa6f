import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from resilient_options.pricing import bharadia_iv, bsm_call
from resilient_options.targets import (discounted_moneyness, ds_target, hh_target,
                                       price_from_ds_target, price_from_hh_target)


def test_hh_examples():
    assert hh_target(50, 10000) == 0.5
    assert hh_target(0, 10000) == 0.0
    assert hh_target(7 * 50, 7 * 10000) == pytest.approx(0.5, rel=1e-15)
    assert price_from_hh_target(0.5, 10000) == 50.0
    assert price_from_hh_target(0.0, 10000) == 0.0


def test_hh_domain():
    with pytest.raises(ValueError):
        hh_target(1.0, 0.0)
    with pytest.raises(ValueError):
        price_from_hh_target(1.0, -5.0)


def test_ds_hand_example():
    # ATM, r = 0: U = (1/rho) * sqrt(2 pi / T) * C/S
    U = ds_target(4.0, 100.0, 1.0, 0.2, 0.0, 0.2)
    assert U == pytest.approx((1 / 0.2) * math.sqrt(2 * math.pi / 0.2) * 0.04, rel=1e-14)
    assert U == pytest.approx(1.12100, abs=5e-6)
    assert price_from_ds_target(U, 100.0, 1.0, 0.2, 0.0, 0.2) / 100.0 == pytest.approx(0.04, rel=1e-14)


def test_ds_affine_floor():
    S, p, T, r = 250.0, 1.03, 0.1, 0.06
    ps = discounted_moneyness(p, T, r)
    assert ds_target(S * (1 - ps) / 2, S, p, T, r, 0.3) == pytest.approx(0.0, abs=1e-13)
    assert price_from_ds_target(0.0, S, p, T, r, 0.3) == pytest.approx(S * (1 - ps) / 2, rel=1e-15)


def test_ds_linear_in_inverse_rho():
    a = ds_target(3.0, 100.0, 0.99, 0.1, 0.05, 0.15)
    b = ds_target(3.0, 100.0, 0.99, 0.1, 0.05, 0.30)
    assert b == pytest.approx(a / 2, rel=1e-15)


def test_ds_equals_bharadia_over_rho():
    C, S, p, T, r, rho = 2.5, 98.0, 1.01, 0.08, 0.04, 0.22
    assert ds_target(C, S, p, T, r, rho) == bharadia_iv(C, S, p, T, r) / rho


@pytest.mark.parametrize("kw", [dict(rho=0.0), dict(T=0.0), dict(S=0.0), dict(rho=-0.1)])
def test_ds_domain_errors(kw):
    args = dict(C=1.0, S=100.0, p=1.0, T=0.1, r=0.0, rho=0.2)
    args.update(kw)
    with pytest.raises(ValueError):
        ds_target(**args)
    U_args = dict(args, U=1.0)
    U_args.pop("C")
    with pytest.raises(ValueError):
        price_from_ds_target(**U_args)


def test_vector_inputs():
    C = np.array([1.0, 2.0, 3.0])
    U = ds_target(C, 100.0, 1.0, 0.1, 0.05, 0.2)
    assert U.shape == (3,)
    assert np.allclose(price_from_ds_target(U, 100.0, 1.0, 0.1, 0.05, 0.2), C, rtol=1e-14)


tuples = dict(S=st.floats(1.0, 1e5), p=st.floats(0.9, 1.1), T=st.floats(1 / 365, 1.0),
              r=st.floats(0.0, 0.12), rho=st.floats(0.01, 1.5))


@given(C_rel=st.floats(0.0, 0.3), **tuples)
def test_ds_round_trip_from_price(C_rel, S, p, T, r, rho):
    C = C_rel * S
    back = price_from_ds_target(ds_target(C, S, p, T, r, rho), S, p, T, r, rho)
    assert abs(back - C) <= 1e-12 * S


@given(U=st.floats(-5.0, 20.0), **tuples)
def test_ds_round_trip_from_target(U, S, p, T, r, rho):
    back = ds_target(price_from_ds_target(U, S, p, T, r, rho), S, p, T, r, rho)
    assert abs(back - U) <= 1e-12 * max(1.0, abs(U))


@given(C_rel=st.floats(0.0, 0.3), c=st.floats(1e-3, 1e3), **tuples)
def test_ds_scale_free(C_rel, c, S, p, T, r, rho):
    a = ds_target(C_rel * S, S, p, T, r, rho)
    b = ds_target(c * C_rel * S, c * S, p, T, r, rho)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 1.0), st.floats(0.9, 1.1), st.floats(0.02, 1.0), st.floats(0.0, 0.1),
       st.floats(1.0, 1e4), st.floats(1.0, 1e4))
def test_equal_vol_markets_share_target(v, p, T, r, s1, s2):
    u1 = ds_target(bsm_call(s1, p * s1, r, v, T), s1, p, T, r, v)
    u2 = ds_target(bsm_call(s2, p * s2, r, v, T), s2, p, T, r, v)
    assert u1 == pytest.approx(u2, rel=1e-10, abs=1e-10)


@given(st.floats(0.0, 1e4), st.floats(1e-3, 1e6))
def test_hh_round_trip(C, S):
    assert price_from_hh_target(hh_target(C, S), S) == pytest.approx(C, rel=1e-12, abs=1e-300)
