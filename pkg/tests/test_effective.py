import itertools

import numpy as np
import pytest

from gradhom.cell_solver import SolverParams, solve_all_hs1
from gradhom.effective import (
    VOIGT_TOL,
    assemble_A_eff,
    assemble_A_mean,
    assemble_K_eff,
    assemble_K_mean,
    compute_effective,
    verify_effective,
)
from gradhom.errors import GradhomError
from gradhom.microstructure import (
    CellGrid,
    CoefficientField,
    InclusionSpec,
    Phase,
    constant_field,
    laminate,
    two_phase,
)
from gradhom.tensor_core import ellipticity_estimate, flatten_pairs, make_diagonal_A, make_isotropic_K
from oracles import fd_cell_hs1_1d, fd_cell_hs2_1d, step


def scalar_phase(k, a, d=1):
    I = np.eye(d)
    return Phase(k * np.einsum("ik,jl->ijkl", I, I), make_diagonal_A(a, d).data)


def iso_phase(lam, mu, a, d):
    return Phase(make_isotropic_K(lam, mu, d).data, make_diagonal_A(a, d).data)


def anisotropic_box(N=32, seed=0):
    rng = np.random.default_rng(seed)

    def spd(scale):
        m = rng.standard_normal((4, 4))
        return (scale * (m @ m.T + np.eye(4))).reshape((2,) * 4)

    p1 = Phase(spd(1.0), make_diagonal_A(0.01, 2).data)
    p2 = Phase(spd(5.0), make_diagonal_A(0.05, 2).data)
    return two_phase(CellGrid(2, N), InclusionSpec("box", (0.12, -0.07), half_widths=(0.2, 0.13)), p1, p2)


def _quad(T, X):
    return float(X @ flatten_pairs(T) @ X)


@pytest.mark.parametrize("d,N", [(1, 32), (2, 32), (3, 16)])
def test_constant_identities(d, N):
    p = iso_phase(0.4, 1.1, 0.3, d)
    f = constant_field(CellGrid(d, N), p)
    for regime in ("hs1", "hs2"):
        eff, corr = compute_effective(f, regime)
        for k in corr.keys():
            assert np.all(corr[k].values == 0.0)
        got, ref = (eff.K_eff.data, p.K) if regime == "hs1" else (eff.A_eff.data, p.A)
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)
        diag = verify_effective(eff, f)
        key = "K" if regime == "hs1" else "A"
        assert diag[f"{key}_eff_symmetry_defect"] == 0.0
        assert abs(diag[f"{key}_voigt_margin"]) <= VOIGT_TOL


def test_K_mean_examples():
    f = constant_field(CellGrid(2, 8), iso_phase(1.0, 2.0, 0.1, 2))
    assert np.array_equal(assemble_K_mean(f).data, make_isotropic_K(1.0, 2.0, 2).data)
    f = laminate(CellGrid(1, 64), 0, 0.5, scalar_phase(1.0, 1.0), scalar_phase(4.0, 1.0))
    assert assemble_K_mean(f).data[0, 0, 0, 0] == pytest.approx(2.5, abs=1e-15)


def test_K_mean_random_field_summation_oracle():
    g = CellGrid(2, 8)
    rng = np.random.default_rng(2)
    K = rng.standard_normal((2,) * 4 + g.shape)
    A = make_diagonal_A(1.0, 2).data[..., None, None] * np.ones(g.shape)
    f = CoefficientField(g, K, np.zeros((2,) * 5 + g.shape), A)
    ref = np.zeros((2,) * 4)
    for idx in itertools.product(range(2), repeat=4):
        total = 0.0
        for m, n in itertools.product(range(8), repeat=2):
            total += K[idx + (m, n)]
        ref[idx] = total / 64
    assert np.allclose(assemble_K_mean(f).data, ref, rtol=0, atol=1e-14)
    assert np.allclose(assemble_A_mean(f).data, make_diagonal_A(1.0, 2).data, rtol=0, atol=1e-15)


def test_missing_correctors():
    f = laminate(CellGrid(1, 16), 0, 0.5, scalar_phase(1.0, 1.0), scalar_phase(4.0, 1.0))
    corr = solve_all_hs1(f)
    corr.fields.pop((0, 0))
    with pytest.raises(GradhomError):
        assemble_K_eff(f, corr)
    with pytest.raises(GradhomError):
        compute_effective(f, "other")


def test_laminate_K_eff_between_means_and_monotone_in_eta():
    soft = laminate(CellGrid(1, 256), 0, 0.5, scalar_phase(1.0, 1e-8), scalar_phase(4.0, 1e-8))
    stiff = laminate(CellGrid(1, 256), 0, 0.5, scalar_phase(1.0, 10.0), scalar_phase(4.0, 10.0))
    k_soft = float(compute_effective(soft, "hs1")[0].K_eff.data.ravel()[0])
    k_stiff = float(compute_effective(stiff, "hs1")[0].K_eff.data.ravel()[0])
    assert k_soft == pytest.approx(1.6, rel=1e-2)
    assert 1.6 < k_stiff < 2.5 and k_stiff >= k_soft
    # independent FD oracle at both penalization levels
    kf_soft = fd_cell_hs1_1d(lambda s: step(s, 0.5, 1.0, 4.0), lambda s: 1e-8 + 0 * s, 2048)[2]
    kf_stiff = fd_cell_hs1_1d(lambda s: step(s, 0.5, 1.0, 4.0), lambda s: 10 + 0 * s, 2048)[2]
    assert k_soft == pytest.approx(kf_soft, rel=1e-4)
    assert k_stiff == pytest.approx(kf_stiff, rel=1e-4)


def test_laminate_A_eff_harmonic_mean():
    f = laminate(CellGrid(1, 256), 0, 0.5, scalar_phase(1.0, 1.0), scalar_phase(1.0, 4.0))
    eff, _ = compute_effective(f, "hs2")
    a = float(eff.A_eff.data.ravel()[0])
    assert a == pytest.approx(1.6, rel=1e-2)
    assert a == pytest.approx(fd_cell_hs2_1d(lambda s: step(s, 0.5, 1.0, 4.0), 2048)[2], rel=1e-4)


def test_A_eff_between_harmonic_and_arithmetic_eta():
    g = CellGrid(2, 32)
    f = two_phase(g, InclusionSpec("ball", (0.0, 0.1), 0.3, smoothing_width=0.1),
                  scalar_phase(1.0, 0.5, 2), scalar_phase(1.0, 3.0, 2))
    eta = f.A[(0,) * 6]
    harm, arith = 1.0 / np.mean(1.0 / eta), np.mean(eta)
    eff, _ = compute_effective(f, "hs2")
    rng = np.random.default_rng(0)
    for _ in range(200):
        Q = rng.standard_normal(8)
        Q /= np.linalg.norm(Q)
        q = _quad(eff.A_eff.data, Q)
        assert harm - 1e-10 <= q <= arith + 1e-10


def test_laminate_diagnostics():
    f = laminate(CellGrid(1, 128), 0, 0.5, scalar_phase(1.0, 0.01), scalar_phase(4.0, 0.04))
    for regime, key in (("hs1", "K"), ("hs2", "A")):
        eff, _ = compute_effective(f, regime)
        diag = verify_effective(eff, f)
        assert diag[f"{key}_eff_symmetry_defect"] <= 1e-8
        assert diag[f"{key}_voigt_margin"] >= 0.0
        assert diag[f"{key}_voigt_ok"]


def test_truncated_solve_increases_symmetry_defect():
    f = anisotropic_box()
    tight = verify_effective(compute_effective(f, "hs1", SolverParams(rel_tol=1e-9))[0], f)
    loose = verify_effective(compute_effective(f, "hs1", SolverParams(rel_tol=1e-2))[0], f)
    assert loose["K_eff_symmetry_defect"] > 100 * tight["K_eff_symmetry_defect"]


def test_major_symmetry_within_solver_tolerance():
    f = anisotropic_box()
    tol = 1e-9
    eff, _ = compute_effective(f, "hs1", SolverParams(rel_tol=tol))
    assert verify_effective(eff, f)["K_eff_symmetry_defect"] <= 10 * tol * np.linalg.norm(eff.K_eff.data)
    g = CellGrid(2, 32)
    f2 = two_phase(g, InclusionSpec("box", (0.1, 0.0), half_widths=(0.2, 0.25)),
                   scalar_phase(1.0, 0.3, 2), scalar_phase(1.0, 2.0, 2))
    eff2, _ = compute_effective(f2, "hs2", SolverParams(rel_tol=tol))
    assert verify_effective(eff2, f2)["A_eff_symmetry_defect"] <= 10 * tol * np.linalg.norm(eff2.A_eff.data)


def test_ellipticity_inheritance():
    g = CellGrid(2, 32)
    f = two_phase(g, InclusionSpec("ball", (0.0, 0.0), 0.3),
                  iso_phase(1.0, 1.0, 0.1, 2), iso_phase(3.0, 4.0, 0.8, 2))
    eff, _ = compute_effective(f, "hs1")
    diag = verify_effective(eff, f)
    assert diag["K_eff_min_eigenvalue"] >= diag["field_c1"] > 0
    eff2, _ = compute_effective(f, "hs2")
    kappa = f.nodal_eigenvalues("A", "full")[0]
    lower = 1.0 / np.mean(1.0 / kappa)
    assert ellipticity_estimate(eff2.A_eff).min_eigenvalue >= lower - 1e-10 > 0


def test_K_eff_monotone_in_A_scaling():
    base = two_phase(CellGrid(2, 32), InclusionSpec("ball", (0.0, 0.0), 0.3),
                     iso_phase(1.0, 1.0, 0.01, 2), iso_phase(4.0, 4.0, 0.04, 2))
    K1 = compute_effective(base, "hs1")[0].K_eff.data
    _, vecs = np.linalg.eigh(0.5 * (flatten_pairs(K1) + flatten_pairs(K1).T))
    prev = None
    for t in (1.0, 4.0, 16.0):
        K = compute_effective(base.scaled(A=t), "hs1")[0].K_eff.data
        vals = np.array([_quad(K, v) for v in vecs.T])
        if prev is not None:
            assert np.all(vals >= prev - 1e-10)
        prev = vals


def test_to_dict_round_trip_keys():
    f = laminate(CellGrid(1, 32), 0, 0.5, scalar_phase(1.0, 0.1), scalar_phase(4.0, 0.1))
    eff, _ = compute_effective(f, "hs2")
    verify_effective(eff, f)
    d = eff.to_dict()
    assert d["regime"] == "HS2" and "A_eff" in d and "K_mean" in d and "K_eff" not in d
    assert d["A_eff"]["index_order"] == "ijk,nlp"
    assert "A_voigt_margin" in d["diagnostics"]
