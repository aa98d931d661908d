"""Effective tensors from the correctors, and their structural diagnostics."""

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cell_solver import SolverParams, _ops, solve_all_hs1, solve_all_hs2
from .errors import GradhomError
from .microstructure import admissible_space
from .scaling import HS1, HS2, normalize_regime
from .tensor_core import (
    Tensor4,
    Tensor6,
    check_major_symmetry,
    ellipticity_estimate,
    flatten_pairs,
    tensor_to_json,
)

__all__ = [
    "EffectiveTensors",
    "assemble_K_eff",
    "assemble_K_mean",
    "assemble_A_mean",
    "assemble_A_eff",
    "compute_effective",
    "verify_effective",
]

VOIGT_TOL = 1e-10
N_SAMPLES = 200


@dataclass
class EffectiveTensors:
    K_eff: Optional[Tensor4] = None
    K_mean: Optional[Tensor4] = None
    A_eff: Optional[Tensor6] = None
    A_mean: Optional[Tensor6] = None
    regime: str = HS1
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"regime": self.regime}
        for name in ("K_eff", "K_mean", "A_eff", "A_mean"):
            t = getattr(self, name)
            if t is not None:
                out[name] = tensor_to_json(t)
        out["diagnostics"] = self.diagnostics
        return out


def _grid_mean(arr, d):
    return arr.mean(axis=tuple(range(arr.ndim - d, arr.ndim)))


def assemble_K_mean(field_):
    return Tensor4(_grid_mean(field_.K, field_.d))


def assemble_A_mean(field_):
    return Tensor6(_grid_mean(field_.A, field_.d))


def _require(corr, keys):
    missing = [k for k in keys if k not in corr.fields]
    if missing:
        raise GradhomError(f"missing correctors for indices {missing}")


def assemble_K_eff(field_, corr):
    """K_eff[i, j, a, b] = <K_ijkl (E^{ab}_kl + d_l phi^{ab}_k)>."""
    d = field_.d
    keys = list(itertools.product(range(d), repeat=2))
    _require(corr, keys)
    ops = _ops(field_.grid)
    out = np.empty((d,) * 4)
    for a, b in keys:
        G = ops.grad(corr[(a, b)].values)
        G[a, b] += 1.0
        out[:, :, a, b] = _grid_mean(np.einsum("ijkl...,kl...->ij...", field_.K, G), d)
    return Tensor4(out)


def assemble_A_eff(field_, corr):
    """A_eff[i, j, k, a, b, c] = <A^{ijk}_{nlp} (E^{abc}_nlp + d_l d_p w^{abc}_n)>."""
    d = field_.d
    keys = list(itertools.product(range(d), repeat=3))
    _require(corr, keys)
    ops = _ops(field_.grid)
    out = np.empty((d,) * 6)
    for a, b, c in keys:
        Q = ops.hess(corr[(a, b, c)].values)
        Q[a, b, c] += 1.0
        out[:, :, :, a, b, c] = _grid_mean(np.einsum("ijknlp...,nlp...->ijk...", field_.A, Q), d)
    return Tensor6(out)


def compute_effective(field_, regime, params=None):
    """Solve the correctors of ``regime`` and assemble its effective tensors."""
    regime = normalize_regime(regime)
    params = params or SolverParams()
    if regime == HS1:
        corr = solve_all_hs1(field_, params)
        eff = EffectiveTensors(K_eff=assemble_K_eff(field_, corr), K_mean=assemble_K_mean(field_),
                               A_mean=assemble_A_mean(field_), regime=HS1)
    elif regime == HS2:
        corr = solve_all_hs2(field_, params)
        eff = EffectiveTensors(K_mean=assemble_K_mean(field_), A_eff=assemble_A_eff(field_, corr),
                               A_mean=assemble_A_mean(field_), regime=HS2)
    else:
        raise GradhomError(f"no effective tensors for regime {regime!r}")
    eff.diagnostics["max_residual"] = float(max(corr.residuals.values(), default=0.0))
    eff.diagnostics["iterations"] = int(sum(corr.iterations.values()))
    return eff, corr


def _unit_samples(n, dim, rng):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _voigt_margin(eff_mat, mean_mat, rng, n_samples):
    """min over sampled unit X of <T>X:X - T_eff X:X, sampling + eigenbasis of the gap."""
    gap = mean_mat - eff_mat
    X = _unit_samples(n_samples, gap.shape[0], rng)
    _, vecs = np.linalg.eigh(0.5 * (gap + gap.T))
    X = np.vstack([X, vecs.T])
    margins = np.einsum("si,ij,sj->s", X, gap, X)
    return float(margins.min()), int(X.shape[0])


def verify_effective(eff, field_, n_samples=N_SAMPLES, seed=0):
    """Symmetry defects, minimum eigenvalues and Voigt margins of ``eff``.

    Voigt margins are ``<T> X : X - T_eff X : X`` minimised over ``n_samples``
    seeded random unit X plus the eigenvectors of ``<T> - T_eff``; the
    tensors themselves are left untouched.
    """
    rng = np.random.default_rng(seed)
    diag = {}
    K_mean = eff.K_mean if eff.K_mean is not None else assemble_K_mean(field_)
    space = admissible_space(K_mean.data)
    if eff.K_eff is not None:
        K = eff.K_eff.data
        diag["K_eff_symmetry_defect"] = check_major_symmetry(K)
        diag["K_eff_relative_symmetry_defect"] = diag["K_eff_symmetry_defect"] / max(np.linalg.norm(K), 1e-300)
        diag["K_eff_min_eigenvalue"] = ellipticity_estimate(K, space=space).min_eigenvalue
        m, n = _voigt_margin(flatten_pairs(K), flatten_pairs(K_mean.data), rng, n_samples)
        diag["K_voigt_margin"] = m
        diag["K_voigt_samples"] = n
        diag["K_voigt_ok"] = m >= -VOIGT_TOL
    if eff.A_eff is not None:
        A = eff.A_eff.data
        A_mean = eff.A_mean if eff.A_mean is not None else assemble_A_mean(field_)
        diag["A_eff_symmetry_defect"] = check_major_symmetry(A)
        diag["A_eff_relative_symmetry_defect"] = diag["A_eff_symmetry_defect"] / max(np.linalg.norm(A), 1e-300)
        diag["A_eff_min_eigenvalue"] = ellipticity_estimate(A).min_eigenvalue
        m, n = _voigt_margin(flatten_pairs(A), flatten_pairs(A_mean.data), rng, n_samples)
        diag["A_voigt_margin"] = m
        diag["A_voigt_samples"] = n
        diag["A_voigt_ok"] = m >= -VOIGT_TOL
    diag["K_mean_min_eigenvalue"] = ellipticity_estimate(K_mean.data, space=space).min_eigenvalue
    diag["field_c1"] = float(np.min(field_.nodal_eigenvalues("K", space)[0]))
    diag["field_kappa1"] = float(np.min(field_.nodal_eigenvalues("A", "full")[0]))
    eff.diagnostics.update(diag)
    return diag
