"""
Small dense tensors of order 4, 5 and 6 and their contractions.

Index layout of the stored arrays (0-based in code):

* ``Tensor4``: ``K[i, j, k, l]``      for K_{ijkl}
* ``Tensor5``: ``S[i, j, k, l, m]``   for S_{ij}^{klm}
* ``Tensor6``: ``A[i, j, k, n, l, p]`` for A^{ijk}_{nlp}

A gradient is stored as ``G[k, l] = du_k/dx_l`` and a Hessian as
``Q[n, l, p] = d^2 u_n / dx_l dx_p``.  The norm on tensors is the Frobenius
norm everywhere.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GradhomError, MaterialError

__all__ = [
    "Tensor4",
    "Tensor5",
    "Tensor6",
    "EllipticityEstimate",
    "make_isotropic_K",
    "make_diagonal_A",
    "check_major_symmetry",
    "ellipticity_estimate",
    "flatten_pairs",
    "contract_K",
    "contract_A",
    "contract_S_grad",
    "contract_S_hess",
    "tensor_to_json",
    "tensor_from_json",
]

INDEX_ORDER = {4: "ijkl", 5: "ij,klm", 6: "ijk,nlp"}


class _TensorBase:
    order = 0

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != self.order or len(set(data.shape)) != 1:
            raise GradhomError(
                f"expected an order-{self.order} tensor with equal axes, got shape {data.shape}"
            )
        if data.shape[0] not in (1, 2, 3):
            raise GradhomError(f"dimension must be 1, 2 or 3, got {data.shape[0]}")
        if not np.all(np.isfinite(data)):
            raise GradhomError("tensor has non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def d(self):
        return self.data.shape[0]

    @property
    def norm(self):
        return float(np.linalg.norm(self.data))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class Tensor4(_TensorBase):
    data: np.ndarray
    major_symmetric: bool = False
    order = 4


@dataclass(frozen=True, eq=False)
class Tensor5(_TensorBase):
    data: np.ndarray
    order = 5


@dataclass(frozen=True, eq=False)
class Tensor6(_TensorBase):
    data: np.ndarray
    major_symmetric: bool = False
    order = 6


@dataclass(frozen=True)
class EllipticityEstimate:
    """Extreme eigenvalues of the flattened quadratic form.

    ``min_eigenvalue`` estimates c1 (order 4) or kappa1 (order 6); the upper
    constants c2, kappa2 are reported as ``1 / max_eigenvalue``.
    """

    min_eigenvalue: float
    max_eigenvalue: float
    is_elliptic: bool
    symmetrized: bool = False
    space: str = "full"

    @property
    def upper_constant(self):
        return 1.0 / self.max_eigenvalue if self.max_eigenvalue > 0 else float("inf")


def _as_array(t):
    return np.asarray(t.data if isinstance(t, _TensorBase) else t, dtype=float)


def make_isotropic_K(lam, mu, d):
    """Isotropic elasticity tensor lam*d_ij d_kl + mu*(d_ik d_jl + d_il d_jk)."""
    if mu <= 0 or d * lam + 2 * mu <= 0:
        raise MaterialError(f"isotropic moduli not admissible: lambda={lam}, mu={mu}, d={d}")
    I = np.eye(d)
    K = (
        lam * np.einsum("ij,kl->ijkl", I, I)
        + mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))
    )
    return Tensor4(K, major_symmetric=True)


def make_diagonal_A(eta, d):
    """Sixth-order tensor acting as eta times the identity on third-order tensors."""
    if eta <= 0:
        raise MaterialError(f"eta must be positive, got {eta}")
    I = np.eye(d)
    A = eta * np.einsum("in,jl,kp->ijknlp", I, I, I)
    return Tensor6(A, major_symmetric=True)


def flatten_pairs(t, order=None):
    """Reshape an order-4 (order-6) tensor into a d^2 x d^2 (d^3 x d^3) matrix.

    With an explicit ``order`` the array may carry trailing grid axes, which
    are kept.
    """
    a = _as_array(t)
    order = a.ndim if order is None else order
    if order not in (4, 6):
        raise GradhomError(f"cannot pair-flatten an order-{order} tensor")
    d = a.shape[0]
    half = order // 2
    return a.reshape((d**half, d**half) + a.shape[order:])


def _order(a):
    if a.ndim in (4, 6) and len(set(a.shape)) == 1:
        return a.ndim
    raise GradhomError(f"not an order-4 or order-6 tensor: shape {a.shape}")


def check_major_symmetry(t):
    """Largest |t_IJ - t_JI| over the pair-flattened matrix; 0 iff major symmetric."""
    a = _as_array(t)
    _order(a)
    m = flatten_pairs(a)
    return float(np.max(np.abs(m - m.T)))


def _restriction_basis(d, order, space):
    """Orthonormal basis (columns) of the subspace the quadratic form is probed on."""
    half = order // 2
    n = d**half
    if space == "full":
        return np.eye(n)
    if space != "symmetric":
        raise GradhomError(f"unknown space {space!r}")
    # symmetric in the last two slots: matrices M = M^T, 3-tensors Q_nlp = Q_npl
    P = np.zeros((n, n))
    idx = np.arange(n).reshape((d,) * half)
    swapped = np.swapaxes(idx, -1, -2).ravel()
    for a in range(n):
        P[a, a] += 0.5
        P[a, swapped[a]] += 0.5
    w, v = np.linalg.eigh(P)
    return v[:, w > 0.5]


def ellipticity_estimate(t, space="full", tol=1e-12):
    """Extreme eigenvalues of the quadratic form of ``t`` on matrices / 3-tensors.

    ``space="full"`` probes all second- (third-) order tensors, as in the
    definitions of the ellipticity classes.  ``space="symmetric"`` restricts to
    arguments symmetric in their last two indices (the usual strain space).
    A tensor with a major-symmetry defect above ``tol`` is replaced by its
    symmetric part and the result is flagged ``symmetrized``.
    """
    a = _as_array(t)
    if not np.all(np.isfinite(a)):
        raise GradhomError("tensor has non-finite entries")
    order = _order(a)
    m = flatten_pairs(a)
    defect = float(np.max(np.abs(m - m.T)))
    symmetrized = defect > tol * max(1.0, float(np.max(np.abs(m))))
    m = 0.5 * (m + m.T)
    B = _restriction_basis(a.shape[0], order, space)
    w = np.linalg.eigvalsh(B.T @ m @ B)
    lo, hi = float(w[0]), float(w[-1])
    return EllipticityEstimate(lo, hi, lo > 0, symmetrized, space)


def _check_dims(t, x, nx):
    d = t.shape[0]
    if x.shape != (d,) * nx:
        raise GradhomError(f"dimension mismatch: tensor d={d}, argument shape {x.shape}")


def contract_K(K, M):
    """(K M)_ij = K_ijkl M_kl."""
    K, M = _as_array(K), np.asarray(M, dtype=float)
    _check_dims(K, M, 2)
    return np.einsum("ijkl,kl->ij", K, M)


def contract_A(A, Q):
    """(A Q)_ijk = A^{ijk}_{nlp} Q_nlp."""
    A, Q = _as_array(A), np.asarray(Q, dtype=float)
    _check_dims(A, Q, 3)
    return np.einsum("ijknlp,nlp->ijk", A, Q)


def contract_S_grad(S, G):
    """Hyperstress part S_{nl}^{ijk} G_nl driven by a gradient G."""
    S, G = _as_array(S), np.asarray(G, dtype=float)
    _check_dims(S, G, 2)
    return np.einsum("nlijk,nl->ijk", S, G)


def contract_S_hess(S, Q):
    """Stress part S_{ij}^{klm} d^2u_k/dx_m dx_l, with Q[k, l, m] = d^2u_k/dx_l dx_m."""
    S, Q = _as_array(S), np.asarray(Q, dtype=float)
    _check_dims(S, Q, 3)
    return np.einsum("ijklm,kml->ij", S, Q)


def tensor_to_json(t):
    a = _as_array(t)
    out = {"order": a.ndim, "d": a.shape[0], "index_order": INDEX_ORDER[a.ndim], "data": a.tolist()}
    if isinstance(t, (Tensor4, Tensor6)):
        out["major_symmetric"] = t.major_symmetric
    return out


def tensor_from_json(obj):
    order = int(obj["order"])
    if obj.get("index_order", INDEX_ORDER.get(order)) != INDEX_ORDER.get(order):
        raise GradhomError(f"unsupported index_order {obj.get('index_order')!r}")
    data = np.asarray(obj["data"], dtype=float)
    if data.shape != (int(obj["d"]),) * order:
        raise GradhomError(f"data shape {data.shape} inconsistent with d={obj['d']}, order={order}")
    if order == 4:
        return Tensor4(data, bool(obj.get("major_symmetric", False)))
    if order == 5:
        return Tensor5(data)
    if order == 6:
        return Tensor6(data, bool(obj.get("major_symmetric", False)))
    raise GradhomError(f"unsupported tensor order {order}")
