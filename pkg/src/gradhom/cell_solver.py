"""
Matrix-free Fourier solver for the periodic corrector problems.

Both problems are posed on zero-mean periodic vector fields over the cell
grid.  Derivatives are taken in frequency space with wavenumbers 2*pi*m,
material contractions happen pointwise in physical space and integrals over
Y are nodal means (exact for trigonometric polynomials).

First derivatives use ``i xi`` with the Nyquist entry zeroed; the Hessian
uses ``-xi_l^2`` on its diagonal (Nyquist kept) and ``-xi_l xi_p`` from the
zeroed symbols off the diagonal, so it stays symmetric in (l, p).

The HS1 problem is

    a1(phi, psi) = <K grad phi : grad psi> + <A hess phi : hess psi>
                 = -<K E^{ab} : grad psi>

and the HS2 problem

    a2(w, psi) = <A hess w : hess psi> = -<A E^{abc} : hess psi>

with ``(E^{ab})_{kl} = d_ak d_bl`` and ``(E^{abc})_{nlp} = d_an d_bl d_cp``.
Indices alpha, beta, gamma are 0-based.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import GradhomError, SolverError
from .scaling import HS1, HS2, normalize_regime

log = logging.getLogger(__name__)

__all__ = [
    "PeriodicVectorField",
    "CorrectorHS1",
    "CorrectorHS2",
    "SolverParams",
    "SpectralOps",
    "apply_hs1_form",
    "apply_hs2_form",
    "hs1_rhs",
    "hs2_rhs",
    "solve_corrector_hs1",
    "solve_corrector_hs2",
    "solve_all_hs1",
    "solve_all_hs2",
    "residual",
]


def _mean_tol(values):
    return 1e-13 * max(1.0, float(np.sqrt(np.mean(values**2))) if values.size else 1.0)


@dataclass(frozen=True, eq=False)
class PeriodicVectorField:
    """d components on the cell grid, shape ``(d, N, ..., N)``, zero mean."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        g = self.grid
        v = np.array(self.values, dtype=float)
        if v.shape != (g.d,) + g.shape:
            raise GradhomError(f"field has shape {v.shape}, expected {(g.d,) + g.shape}")
        if not np.all(np.isfinite(v)):
            raise GradhomError("field has non-finite entries")
        axes = tuple(range(1, v.ndim))
        if np.max(np.abs(v.mean(axis=axes))) > _mean_tol(v):
            raise GradhomError("periodic field must have zero mean per component")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, grid, values):
        """Build after subtracting the mean of every component."""
        v = np.array(values, dtype=float)
        v = v - v.mean(axis=tuple(range(1, v.ndim)), keepdims=True)
        return cls(grid, v)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.d,) + grid.shape))

    def l2_norm(self):
        return float(np.sqrt(np.mean(np.sum(self.values**2, axis=0))))


@dataclass(frozen=True)
class SolverParams:
    rel_tol: float = 1e-9
    max_iter: int = 5000
    c_ref: float = None
    a_ref: float = None
    threads: int = 1

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise GradhomError("rel_tol must be positive")
        if self.max_iter < 1:
            raise GradhomError("max_iter must be >= 1")
        for name in ("c_ref", "a_ref"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise GradhomError(f"{name} must be positive")
        if self.threads < 1:
            raise GradhomError("threads must be >= 1")


@dataclass
class _CorrectorSet:
    grid: object
    fields: dict
    residuals: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    rel_tol: float = 1e-9

    def __getitem__(self, key):
        return self.fields[tuple(key)]

    def keys(self):
        return self.fields.keys()


@dataclass
class CorrectorHS1(_CorrectorSet):
    regime: str = HS1


@dataclass
class CorrectorHS2(_CorrectorSet):
    regime: str = HS2


class SpectralOps:
    """Frequency symbols and transforms for one cell grid (rfftn layout)."""

    def __init__(self, grid):
        self.grid = grid
        d, N = grid.d, grid.N
        self.axes = tuple(range(-d, 0))
        full = 2 * np.pi * fft.fftfreq(N, 1.0 / N)
        half = 2 * np.pi * fft.rfftfreq(N, 1.0 / N)
        per_axis = [full] * (d - 1) + [half]
        xi = np.array(np.meshgrid(*per_axis, indexing="ij"))
        xiz = xi.copy()
        for ax in range(d):
            # Nyquist of every axis sits at +-pi N; odd symbols vanish there
            xiz[ax][np.isclose(np.abs(xi[ax]), np.pi * N)] = 0.0
        self.xi = xi
        self.D = 1j * xiz
        H = np.empty((d, d) + xi.shape[1:])
        for l in range(d):
            for p in range(d):
                H[l, p] = -xi[l] ** 2 if l == p else -xiz[l] * xiz[p]
        self.H = H
        self.xi2 = np.sum(xi**2, axis=0)
        self.spec_shape = xi.shape[1:]

    def fwd(self, f):
        return fft.rfftn(f, axes=self.axes)

    def inv(self, fh):
        return fft.irfftn(fh, s=self.grid.shape, axes=self.axes)

    def grad(self, v):
        """G[k, l] = d v_k / dy_l for v of shape (d, grid)."""
        vh = self.fwd(v)
        return self.inv(vh[:, None] * self.D[None, :])

    def hess(self, v):
        """Q[n, l, p] = d^2 v_n / dy_l dy_p."""
        vh = self.fwd(v)
        return self.inv(vh[:, None, None] * self.H[None])

    def div_adjoint(self, sigma):
        """Adjoint of ``grad`` under the mean inner product: -d_j sigma_ij."""
        sh = self.fwd(sigma)
        return self.inv(np.sum(sh * np.conj(self.D)[None], axis=1))

    def hess_adjoint(self, mu):
        """Adjoint of ``hess``: d_j d_k mu_ijk."""
        mh = self.fwd(mu)
        return self.inv(np.sum(mh * self.H[None], axis=(1, 2)))

    def project(self, v):
        """Remove the mean of every component."""
        return v - v.mean(axis=self.axes, keepdims=True)


_OPS_CACHE = {}


def _ops(grid):
    key = (grid.d, grid.N)
    if key not in _OPS_CACHE:
        _OPS_CACHE[key] = SpectralOps(grid)
    return _OPS_CACHE[key]


def _values(x, grid):
    v = x.values if isinstance(x, PeriodicVectorField) else np.asarray(x, dtype=float)
    if isinstance(x, PeriodicVectorField) and x.grid != grid:
        raise GradhomError("field and corrector live on different grids")
    if v.shape != (grid.d,) + grid.shape:
        raise GradhomError(f"field has shape {v.shape}, expected {(grid.d,) + grid.shape}")
    return v


def _stress(field_, G):
    return np.einsum("ijkl...,kl...->ij...", field_.K, G)


def _hyperstress(field_, Q):
    return np.einsum("ijknlp...,nlp...->ijk...", field_.A, Q)


def apply_hs1_form(field_, phi, psi):
    """<K grad phi : grad psi + A hess phi : hess psi> over Y."""
    ops = _ops(field_.grid)
    u, v = _values(phi, field_.grid), _values(psi, field_.grid)
    Gu, Gv = ops.grad(u), ops.grad(v)
    Qu, Qv = ops.hess(u), ops.hess(v)
    return float(np.mean(np.sum(_stress(field_, Gu) * Gv, axis=(0, 1))) +
                 np.mean(np.sum(_hyperstress(field_, Qu) * Qv, axis=(0, 1, 2))))


def apply_hs2_form(field_, w, psi):
    """<A hess w : hess psi> over Y."""
    ops = _ops(field_.grid)
    Qu = ops.hess(_values(w, field_.grid))
    Qv = ops.hess(_values(psi, field_.grid))
    return float(np.mean(np.sum(_hyperstress(field_, Qu) * Qv, axis=(0, 1, 2))))


def _check_index(d, *idx):
    for i in idx:
        if not (isinstance(i, (int, np.integer)) and 0 <= i < d):
            raise GradhomError(f"corrector index {i} out of range for d={d}")


def hs1_rhs(field_, alpha, beta, psi):
    """-<K E^{ab} : grad psi>."""
    _check_index(field_.d, alpha, beta)
    G = _ops(field_.grid).grad(_values(psi, field_.grid))
    return -float(np.mean(np.sum(field_.K[:, :, alpha, beta] * G, axis=(0, 1))))


def hs2_rhs(field_, alpha, beta, gamma, psi):
    """-<A E^{abc} : hess psi>."""
    _check_index(field_.d, alpha, beta, gamma)
    Q = _ops(field_.grid).hess(_values(psi, field_.grid))
    return -float(np.mean(np.sum(field_.A[:, :, :, alpha, beta, gamma] * Q, axis=(0, 1, 2))))


def _operator(field_, regime):
    ops = _ops(field_.grid)
    if regime == HS1:
        def L(v):
            out = ops.div_adjoint(_stress(field_, ops.grad(v)))
            return ops.project(out + ops.hess_adjoint(_hyperstress(field_, ops.hess(v))))
    else:
        def L(v):
            return ops.project(ops.hess_adjoint(_hyperstress(field_, ops.hess(v))))
    return L


def _source(field_, regime, idx):
    if regime == HS1:
        a, b = idx
        return np.ascontiguousarray(field_.K[:, :, a, b])
    a, b, c = idx
    return np.ascontiguousarray(field_.A[:, :, :, a, b, c])


def _rhs_vector(field_, regime, idx):
    """Strong form of the right side, i.e. the Riesz vector of the load functional.

    Returns None when the source slice is constant over the cell, in which
    case the load vanishes identically.
    """
    ops = _ops(field_.grid)
    src = _source(field_, regime, idx)
    flat = src.reshape(src.shape[: src.ndim - field_.d] + (-1,))
    if np.all(flat == flat[..., :1]):
        return None
    if regime == HS1:
        return ops.project(-ops.div_adjoint(src))
    return ops.project(-ops.hess_adjoint(src))


def reference_medium(field_, params=None):
    """(c_ref, a_ref): nodal means of the smallest K and A eigenvalues."""
    params = params or SolverParams()
    c_ref, a_ref = params.c_ref, params.a_ref
    if c_ref is None:
        kmin, kmax = field_.nodal_eigenvalues("K")
        c_ref = float(np.mean(kmin))
        if c_ref <= 0:
            c_ref = float(np.mean(kmax))
    if a_ref is None:
        amin, amax = field_.nodal_eigenvalues("A")
        a_ref = float(np.mean(amin))
        if a_ref <= 0:
            a_ref = float(np.mean(amax))
    if not (c_ref > 0 and a_ref > 0):
        raise GradhomError("reference medium must be positive; field is not elliptic")
    return c_ref, a_ref


def _preconditioner(field_, regime, params):
    ops = _ops(field_.grid)
    c_ref, a_ref = reference_medium(field_, params)
    sym = a_ref * ops.xi2**2
    if regime == HS1:
        sym = sym + c_ref * ops.xi2
    inv = np.zeros_like(sym)
    nz = sym > 0
    inv[nz] = 1.0 / sym[nz]

    def M(r):
        return ops.project(ops.inv(ops.fwd(r) * inv[None]))

    return M


def _inner(u, v):
    return float(np.mean(np.sum(u * v, axis=0)))


def _dual_norm(r, M):
    """sqrt(r . M r): the residual measured in the norm induced by the preconditioner."""
    return np.sqrt(max(_inner(r, M(r)), 0.0))


def _pcg(L, b, M, rel_tol, max_iter, label):
    """Preconditioned CG; relative residuals are measured in the M-dual norm."""
    x = np.zeros_like(b)
    r = b.copy()
    z = M(r)
    rz = _inner(r, z)
    bnorm = np.sqrt(rz)
    if bnorm == 0.0:
        return x, [0.0], 0
    p = z.copy()
    history = [1.0]
    for it in range(1, max_iter + 1):
        Lp = L(p)
        pLp = _inner(p, Lp)
        if pLp <= 0:
            raise SolverError(f"{label}: operator not positive (p.Lp = {pLp:.3e})", history)
        step = rz / pLp
        x += step * p
        r -= step * Lp
        z = M(r)
        rz_new = _inner(r, z)
        rel = np.sqrt(max(rz_new, 0.0)) / bnorm
        if rel <= rel_tol:
            # the recursive residual drifts; confirm with the true one
            r = b - L(x)
            z = M(r)
            rz_new = _inner(r, z)
            rel = np.sqrt(max(rz_new, 0.0)) / bnorm
            history.append(float(rel))
            if rel <= rel_tol:
                return x, history, it
            p = z.copy()
            rz = rz_new
            continue
        history.append(float(rel))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"{label}: no convergence in {max_iter} iterations (relative residual {history[-1]:.3e})",
        history,
    )


def _solve(field_, regime, idx, params):
    params = params or SolverParams()
    b = _rhs_vector(field_, regime, idx)
    if b is None:
        return PeriodicVectorField.zeros(field_.grid), 0.0, 0
    L = _operator(field_, regime)
    M = _preconditioner(field_, regime, params)
    x, hist, its = _pcg(L, b, M, params.rel_tol, params.max_iter, f"{regime} corrector {idx}")
    log.debug("%s corrector %s: %d iterations, residual %.2e", regime, idx, its, hist[-1])
    return PeriodicVectorField.from_values(field_.grid, x), hist[-1], its


def solve_corrector_hs1(field_, alpha, beta, params=None):
    _check_index(field_.d, alpha, beta)
    return _solve(field_, HS1, (alpha, beta), params)[0]


def solve_corrector_hs2(field_, alpha, beta, gamma, params=None):
    _check_index(field_.d, alpha, beta, gamma)
    return _solve(field_, HS2, (alpha, beta, gamma), params)[0]


def _solve_all(field_, regime, params, cls):
    params = params or SolverParams()
    order = 2 if regime == HS1 else 3
    keys = list(itertools.product(range(field_.d), repeat=order))
    if params.threads > 1 and len(keys) > 1:
        _ops(field_.grid)  # build the shared symbols before fanning out
        with ThreadPoolExecutor(max_workers=params.threads) as pool:
            results = list(pool.map(lambda k: _solve(field_, regime, k, params), keys))
    else:
        results = [_solve(field_, regime, k, params) for k in keys]
    out = cls(field_.grid, {}, rel_tol=params.rel_tol)
    for k, (phi, res, its) in zip(keys, results):
        out.fields[k] = phi
        out.residuals[k] = res
        out.iterations[k] = its
    return out


def solve_all_hs1(field_, params=None):
    """Every phi^{ab}; independent solves run on ``params.threads`` workers."""
    return _solve_all(field_, HS1, params, CorrectorHS1)


def solve_all_hs2(field_, params=None):
    """Every w^{abc}."""
    return _solve_all(field_, HS2, params, CorrectorHS2)


def residual(field_, corrector, regime, idx=None, params=None):
    """Relative residual of one corrector, or the worst over a corrector set.

    The residual ``b - L x`` is measured in the same preconditioner-induced
    dual norm the solver stops on.  A vanishing right side gives the
    absolute norm of ``L x``.
    """
    regime = normalize_regime(regime)
    if regime not in (HS1, HS2):
        raise GradhomError(f"no corrector problem for regime {regime!r}")
    if isinstance(corrector, _CorrectorSet):
        return max((residual(field_, corrector[k], regime, k, params) for k in corrector.keys()),
                   default=0.0)
    if idx is None:
        raise GradhomError("idx is required for a single corrector")
    x = _values(corrector, field_.grid)
    M = _preconditioner(field_, regime, params or SolverParams())
    b = _rhs_vector(field_, regime, tuple(idx))
    Lx = _operator(field_, regime)(x)
    if b is None:
        return float(_dual_norm(Lx, M))
    return float(_dual_norm(b - Lx, M) / _dual_norm(b, M))
