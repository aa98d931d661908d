import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradhom.errors import ConsistencyError, GradhomError, UnsupportedRegimeError
from gradhom.microstructure import CellGrid, Phase, chiral_S, constant_field, laminate
from gradhom.scaling import (
    DEFAULT_TOL,
    HS1,
    HS2,
    OTHER,
    classify_regime,
    intrinsic_lengths,
    regime_multipliers,
    scaling_report,
    tensor_maxima,
)
from gradhom.tensor_core import make_diagonal_A


def _phase(k, a):
    return Phase(np.full((1,) * 4, k), np.full((1,) * 6, a))


def test_maxima_constant_field():
    d = 2
    K = np.einsum("ik,jl->ijkl", np.eye(d), np.eye(d)) * 1.5  # |K|_F = 1.5 * 2 = 3
    A = make_diagonal_A(0.25 / math.sqrt(d**3), d).data  # |A|_F = 0.25
    f = constant_field(CellGrid(d, 8), Phase(K, A))
    calK, calS, calA = tensor_maxima(f)
    assert calK == pytest.approx(3.0) and calS == 0.0 and calA == pytest.approx(0.25)


def test_maxima_laminate_and_chiral():
    g = CellGrid(1, 32)
    f = laminate(g, 0, 0.5, _phase(1.0, 0.1), _phase(4.0, 0.1))
    assert tensor_maxima(f)[0] == 4.0
    a = 0.7
    f = f.with_S(chiral_S(g, a, 1))
    # direct node scan
    scan = max(abs(a * math.sin(2 * math.pi * y)) for y in g.axis())
    assert tensor_maxima(f)[1] == pytest.approx(scan, rel=1e-14)


def test_intrinsic_length_formulas():
    assert intrinsic_lengths(1.0, 0.0, 1e-4) == pytest.approx((1e-2, 0.0))
    ell_sg, ell_ch = intrinsic_lengths(1.0, 1e-3, 1e-4, 2.0, 2.0)
    assert ell_sg == pytest.approx(1e-2, rel=1e-14)
    assert ell_ch == pytest.approx(1e-4, rel=1e-12)


def test_chiral_without_second_gradient_rejected():
    with pytest.raises(ConsistencyError):
        intrinsic_lengths(1.0, 0.1, 0.0)
    assert intrinsic_lengths(1.0, 0.0, 0.0) == (0.0, 0.0)


@pytest.mark.parametrize("p,q", [(2.0, 3.0), (1.0, math.inf), (0.5, -1.0)])
def test_conjugate_exponents_checked(p, q):
    with pytest.raises(GradhomError):
        intrinsic_lengths(1.0, 0.1, 0.1, p, q)


@settings(max_examples=60, deadline=None)
@given(calK=st.floats(1e-3, 1e3), calS=st.floats(1e-6, 1e2), calA=st.floats(1e-6, 1e2), p=st.floats(1.1, 10.0))
def test_lengths_round_trip(calK, calS, calA, p):
    q = p / (p - 1.0)
    ell_sg, ell_ch = intrinsic_lengths(calK, calS, calA, p, q)
    assert calK * ell_sg**2 == pytest.approx(calA, rel=1e-12)
    assert calK * ell_sg ** (1 / p) * ell_ch ** (1 / q) == pytest.approx(calS, rel=1e-12)


def test_classify_examples():
    assert classify_regime(0.1, 1e-3, 0.1, 2.0) == HS1
    assert classify_regime(1.0, 1e-2, 0.1, 2.0) == HS2
    # with a chiral length matching neither band
    assert classify_regime(0.5, 0.1, 0.01, 2.0) == OTHER
    # far from both second-gradient targets
    assert classify_regime(0.05, 0.0, 0.001, 2.0) == OTHER


def test_classify_zero_lengths():
    assert classify_regime(0.0, 0.0, 0.1) == OTHER
    assert classify_regime(0.1, 0.0, 0.1) == HS1
    with pytest.raises(GradhomError):
        classify_regime(0.1, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(eps=st.floats(1e-3, 0.2), shift=st.floats(-0.5, 0.5), factor=st.floats(0.9, 1.1))
def test_classify_scale_consistency(eps, shift, factor):
    ell = eps * math.exp(shift)
    assert classify_regime(ell, 0.0, eps) == HS1
    # rescaling both by the same factor leaves the log ratio unchanged
    if eps * factor < 1:
        assert classify_regime(ell * factor, 0.0, eps * factor) == HS1


@settings(max_examples=40, deadline=None)
@given(eps=st.floats(1e-3, 0.3), q=st.floats(1.0, 4.0))
def test_chiral_length_one_order_smaller(eps, q):
    # targets of the two admissible regimes
    assert eps ** (q + 1) <= eps * eps
    assert eps**q <= eps * 1.0


def test_multipliers():
    m = regime_multipliers(HS1)
    assert (m.s_in_sigma, m.a_in_mu, m.s_in_mu) == (2.0, 2.0, 2.0)
    m = regime_multipliers("hs2")
    assert (m.s_in_sigma, m.a_in_mu, m.s_in_mu) == (1.0, 0.0, 1.0)
    with pytest.raises(UnsupportedRegimeError):
        regime_multipliers(OTHER)
    with pytest.raises(UnsupportedRegimeError):
        regime_multipliers("HS3")


def test_scaling_report_round_trip():
    g = CellGrid(1, 32)
    f = laminate(g, 0, 0.5, _phase(1.0, 0.0625**2), _phase(1.0, 0.0625**2))
    eps = 0.0625
    peak = np.max(np.abs(np.sin(2 * np.pi * g.axis())))
    # calS = calK ell_SG^(1/2) ell_chiral^(1/2) with ell_SG = eps, ell_chiral = eps^3
    f = f.with_S(chiral_S(g, eps**2 / peak, 1))
    rep = scaling_report(f, eps)
    calK, calS, calA = tensor_maxima(f)
    assert rep.calK * rep.ell_SG**2 == pytest.approx(calA, rel=1e-12)
    assert rep.calK * rep.ell_SG**0.5 * rep.ell_chiral**0.5 == pytest.approx(calS, rel=1e-12)
    assert rep.regime == HS1
    d = rep.to_dict()
    assert set(d) >= {"calK", "calS", "calA", "ell_SG", "ell_chiral", "regime", "epsilon"}
    assert DEFAULT_TOL == pytest.approx(math.log(3))
