"""
Periodic coefficient fields on the unit cell Y = (-1/2, 1/2]^d.

Fields are stored as dense arrays with the tensor axes first and the grid
axes last, e.g. ``K.shape == (d, d, d, d, N, ..., N)``.  Nodes sit at pixel
centres ``y_m = -1/2 + (m + 1/2)/N`` so the grid is mapped onto itself by
``y -> -y`` (node ``m`` pairs with node ``N - 1 - m``).
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GeometryError, GradhomError, MaterialError, PeriodicityError
from .tensor_core import _restriction_basis, ellipticity_estimate, flatten_pairs

__all__ = [
    "CellGrid",
    "CoefficientField",
    "InclusionSpec",
    "Phase",
    "admissible_space",
    "check_phase",
    "constant_field",
    "two_phase",
    "laminate",
    "chiral_S",
    "inversion_defect",
    "pixel_volume_fraction",
]


@dataclass(frozen=True)
class CellGrid:
    d: int
    N: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GradhomError(f"d must be 1, 2 or 3, got {self.d}")
        if self.N < 4 or self.N % 2:
            raise GradhomError(f"N must be even and >= 4, got {self.N}")

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def size(self):
        return self.N**self.d

    def axis(self):
        return -0.5 + (np.arange(self.N) + 0.5) / self.N

    def coords(self):
        """Node coordinates, shape ``(d, N, ..., N)``."""
        ax = self.axis()
        return np.array(np.meshgrid(*([ax] * self.d), indexing="ij"))


@dataclass(frozen=True)
class Phase:
    """Constituent material: K (order 4), A (order 6) and optional S (order 5)."""

    K: np.ndarray
    A: np.ndarray
    S: Optional[np.ndarray] = None

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        A = np.asarray(self.A, dtype=float)
        d = K.shape[0]
        S = np.zeros((d,) * 5) if self.S is None else np.asarray(self.S, dtype=float)
        if K.shape != (d,) * 4 or A.shape != (d,) * 6 or S.shape != (d,) * 5:
            raise MaterialError("phase tensors have inconsistent dimensions")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "S", S)

    @property
    def d(self):
        return self.K.shape[0]


def _has_minor_symmetry(K):
    return np.allclose(K, np.swapaxes(K, 2, 3), rtol=0, atol=1e-12 * max(1.0, np.abs(K).max()))


def admissible_space(K):
    """Space on which K must be positive definite to count as elliptic.

    Minor-symmetric K (classical elasticity) annihilates skew matrices, so it
    is tested on symmetric matrices only; any other K is tested on all
    matrices.
    """
    K = np.asarray(K, dtype=float)
    return "symmetric" if K.shape[0] > 1 and _has_minor_symmetry(K) else "full"


def check_phase(phase):
    kest = ellipticity_estimate(phase.K, space=admissible_space(phase.K))
    if not kest.is_elliptic:
        raise MaterialError(f"K is not elliptic (min eigenvalue {kest.min_eigenvalue:.3e})")
    aest = ellipticity_estimate(phase.A)
    if not aest.is_elliptic:
        raise MaterialError(f"A is not elliptic (min eigenvalue {aest.min_eigenvalue:.3e})")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    grid: CellGrid
    K: np.ndarray
    S: np.ndarray
    A: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid
        for name, order in (("K", 4), ("S", 5), ("A", 6)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != (g.d,) * order + g.shape:
                raise GradhomError(f"{name} has shape {arr.shape}, expected {(g.d,) * order + g.shape}")
            if not np.all(np.isfinite(arr)):
                raise GradhomError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self):
        return self.grid.d

    def _node(self, arr, order, node):
        return arr[(slice(None),) * order + tuple(node)]

    def K_at(self, node):
        return self._node(self.K, 4, node)

    def S_at(self, node):
        return self._node(self.S, 5, node)

    def A_at(self, node):
        return self._node(self.A, 6, node)

    def nodal_eigenvalues(self, which="K", space=None):
        """Min and max eigenvalue of the flattened tensor at every node."""
        arr, order = (self.K, 4) if which == "K" else (self.A, 6)
        if space is None:
            space = admissible_space(self.K_at((0,) * self.d)) if which == "K" else "full"
        n = self.d ** (order // 2)
        m = np.moveaxis(flatten_pairs(arr, order).reshape(n, n, -1), -1, 0)
        m = 0.5 * (m + np.swapaxes(m, 1, 2))
        if space == "symmetric":
            B = _restriction_basis(self.d, order, "symmetric")
            m = B.T @ m @ B
        w = np.linalg.eigvalsh(m)
        return w[:, 0].reshape(self.grid.shape), w[:, -1].reshape(self.grid.shape)

    def is_pointwise_elliptic(self):
        kmin, _ = self.nodal_eigenvalues("K")
        amin, _ = self.nodal_eigenvalues("A")
        return bool(np.all(kmin > 0) and np.all(amin > 0))

    def with_S(self, S):
        return CoefficientField(self.grid, self.K, np.asarray(S, dtype=float), self.A, dict(self.meta))

    def scaled(self, K=1.0, S=1.0, A=1.0):
        return CoefficientField(self.grid, K * self.K, S * self.S, A * self.A, dict(self.meta))


def _broadcast(t, grid, weight):
    order = t.ndim
    return t.reshape(t.shape + (1,) * grid.d) * weight.reshape((1,) * order + grid.shape)


def _blend(grid, chi, phase1, phase2, meta):
    K = _broadcast(phase1.K, grid, chi) + _broadcast(phase2.K, grid, 1 - chi)
    S = _broadcast(phase1.S, grid, chi) + _broadcast(phase2.S, grid, 1 - chi)
    A = _broadcast(phase1.A, grid, chi) + _broadcast(phase2.A, grid, 1 - chi)
    return CoefficientField(grid, K, S, A, meta)


def constant_field(grid, phase):
    check_phase(phase)
    return _blend(grid, np.ones(grid.shape), phase, phase, {"kind": "constant"})


@dataclass(frozen=True)
class InclusionSpec:
    """Inclusion T inside Y.

    ``shape`` is ``"ball"`` (uses ``radius``), ``"box"`` (uses ``half_widths``)
    or ``"slab"`` (uses ``half_widths[0]`` along ``axis``; the slab spans the
    cell in the other directions).
    """

    shape: str
    center: Sequence[float]
    radius: float = 0.0
    half_widths: Sequence[float] = ()
    smoothing_width: float = 0.0
    axis: int = 0

    def signed_distance(self, y):
        """Positive inside T, negative outside; ``y`` has shape ``(d, ...)``."""
        d = y.shape[0]
        c = np.asarray(self.center, dtype=float).reshape((d,) + (1,) * (y.ndim - 1))
        r = y - c
        if self.shape == "ball":
            return self.radius - np.sqrt(np.sum(r**2, axis=0))
        if self.shape == "box":
            hw = np.asarray(self.half_widths, dtype=float).reshape(c.shape)
            q = np.abs(r) - hw
            outside = np.sqrt(np.sum(np.maximum(q, 0.0) ** 2, axis=0))
            inside = np.minimum(np.max(q, axis=0), 0.0)
            return -(outside + inside)
        if self.shape == "slab":
            return self.half_widths[0] - np.abs(r[self.axis])
        raise GeometryError(f"unknown inclusion shape {self.shape!r}")

    def check_inside(self, d):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (d,):
            raise GeometryError(f"center must have {d} coordinates")
        pad = 0.5 * self.smoothing_width
        if self.smoothing_width < 0:
            raise GeometryError("smoothing_width must be >= 0")
        if self.shape == "ball":
            if self.radius <= 0:
                raise GeometryError("radius must be positive")
            reach = np.abs(c) + self.radius + pad
        elif self.shape == "box":
            hw = np.asarray(self.half_widths, dtype=float)
            if hw.shape != (d,) or np.any(hw <= 0):
                raise GeometryError("box needs d positive half widths")
            reach = np.abs(c) + hw + pad
        elif self.shape == "slab":
            if len(self.half_widths) < 1 or self.half_widths[0] <= 0:
                raise GeometryError("slab needs a positive half width")
            reach = np.array([abs(c[self.axis]) + self.half_widths[0] + pad])
        else:
            raise GeometryError(f"unknown inclusion shape {self.shape!r}")
        margin = 0.5 - float(np.max(reach))
        if margin <= 0:
            raise GeometryError(f"inclusion touches the cell boundary (margin {margin:.3g})")
        return margin


def _indicator(sd, width):
    if width == 0:
        return (sd >= 0).astype(float)
    t = np.clip((sd + 0.5 * width) / width, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * t))


def two_phase(grid, inc, phase1, phase2):
    """Phase 1 inside the inclusion, phase 2 outside, optional cosine ramp."""
    inc.check_inside(grid.d)
    check_phase(phase1)
    check_phase(phase2)
    chi = _indicator(inc.signed_distance(grid.coords()), inc.smoothing_width)
    return _blend(grid, chi, phase1, phase2, {"kind": "two_phase", "inclusion": inc.shape})


def laminate(grid, direction, fraction, phase1, phase2):
    """Phase 1 where the shifted coordinate y_dir + 1/2 is below ``fraction``."""
    if not 0 < fraction < 1:
        raise GeometryError(f"fraction must lie in (0, 1), got {fraction}")
    if not 0 <= direction < grid.d:
        raise GeometryError(f"direction {direction} out of range for d={grid.d}")
    check_phase(phase1)
    check_phase(phase2)
    s = grid.coords()[direction] + 0.5
    chi = (s < fraction).astype(float)
    return _blend(grid, chi, phase1, phase2, {"kind": "laminate", "fraction": fraction})


def pixel_volume_fraction(field, phase_value, component=(0, 0, 0, 0)):
    """Fraction of nodes where K[component] equals ``phase_value``."""
    vals = field.K[tuple(component)]
    return float(np.mean(np.isclose(vals, phase_value)))


def default_chiral_pattern(d):
    P = np.zeros((d,) * 5)
    P[(0,) * 5] = 1.0
    return P


def chiral_S(grid, amplitude, pitch, pattern=None):
    """Odd S-field ``amplitude * sin(2 pi pitch y_1) * pattern``.

    ``pattern`` defaults to the unit tensor e1 x e1 x e1 x e1 x e1.  The node
    placement makes S(-y) = -S(y) hold exactly on the grid.
    """
    if int(pitch) != pitch or pitch < 1:
        raise PeriodicityError(f"pitch must be a positive integer, got {pitch}")
    P = default_chiral_pattern(grid.d) if pattern is None else np.asarray(pattern, dtype=float)
    if P.shape != (grid.d,) * 5:
        raise GradhomError(f"pattern must have shape {(grid.d,) * 5}")
    y1 = grid.coords()[0]
    prof = np.sin(2 * np.pi * int(pitch) * y1)
    # sin(2 pi k y) at mirrored nodes is not bitwise odd; enforce exact parity
    prof = 0.5 * (prof - _invert(prof, grid.d))
    return _broadcast(P, grid, amplitude * prof)


def _invert(arr, d):
    """Value at -y: flip every grid axis (the trailing ``d`` axes)."""
    return np.flip(arr, axis=tuple(range(arr.ndim - d, arr.ndim)))


def inversion_defect(S, d):
    """Discrete L2 norms of the odd and even parts of an S-field under y -> -y."""
    S = np.asarray(S, dtype=float)
    Sm = _invert(S, d)
    n_nodes = np.prod(S.shape[S.ndim - d:])
    odd = 0.5 * (S - Sm)
    even = 0.5 * (S + Sm)
    return float(np.sqrt(np.sum(odd**2) / n_nodes)), float(np.sqrt(np.sum(even**2) / n_nodes))
