"""
Discrete periodic unfolding on nested grids.

The macro domain is the box (0, L)^d sampled at pixel centres
``x_j = (j + 1/2) h`` with ``h = epsilon / n_y``.  The epsilon-cells are
``epsilon * (l + [0, 1)^d)``; a fine node j belongs to cell ``j // n_y`` at
local node ``j % n_y``, i.e. local coordinate ``y = (m + 1/2) / n_y``.  The
local cell [0, 1)^d is identified with Y = (-1/2, 1/2]^d by periodicity.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, GradhomError


@dataclass(frozen=True)
class MacroGrid:
    d: int
    epsilon: float
    n_y: int
    length: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GradhomError(f"d must be 1, 2 or 3, got {self.d}")
        if self.n_y < 1 or self.epsilon <= 0:
            raise GradhomError("n_y must be >= 1 and epsilon > 0")
        ratio = self.length / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise AlignmentError(
                f"domain length {self.length} is not a multiple of h = {self.h}"
            )

    @property
    def h(self):
        return self.epsilon / self.n_y

    @property
    def n_fine(self):
        return int(round(self.length / self.h))

    @property
    def n_cells(self):
        """Whole epsilon-cells per axis inside the closed domain."""
        return self.n_fine // self.n_y

    @property
    def shape(self):
        return (self.n_fine,) * self.d

    def axis(self):
        return (np.arange(self.n_fine) + 0.5) * self.h

    def coords(self):
        ax = self.axis()
        return np.array(np.meshgrid(*([ax] * self.d), indexing="ij"))

    def y_axis(self):
        return (np.arange(self.n_y) + 0.5) / self.n_y

    def y_coords(self):
        ax = self.y_axis()
        return np.array(np.meshgrid(*([ax] * self.d), indexing="ij"))


@dataclass(frozen=True)
class UnfoldedField:
    """Values ``T(phi)[cell index..., y index...]`` on K_eps^- x Y-grid."""

    grid: MacroGrid
    values: np.ndarray

    def on_domain(self):
        """Represent T(phi) on (fine x-nodes) x (y-nodes), zero on Lambda_eps^-."""
        g = self.grid
        out = np.zeros(g.shape + (g.n_y,) * g.d)
        nc, ny, d = g.n_cells, g.n_y, g.d
        # each fine node inside a whole cell sees the block of its cell
        block = self.values
        for ax in range(d):
            block = np.repeat(block, ny, axis=ax)
        out[(slice(0, nc * ny),) * d] = block
        return out


def decompose_domain(grid):
    """Return (K_eps^- cell indices, Lambda_eps^- fine node indices)."""
    nc, d = grid.n_cells, grid.d
    cells = np.array(np.meshgrid(*([np.arange(nc)] * d), indexing="ij")).reshape(d, -1).T
    covered = np.zeros(grid.shape, dtype=bool)
    covered[(slice(0, nc * grid.n_y),) * d] = True
    lam = np.argwhere(~covered)
    return cells, lam


def _check_phi(phi, grid):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != grid.shape:
        raise AlignmentError(f"grid function has shape {phi.shape}, expected {grid.shape}")
    return phi


def unfold(phi, grid):
    """T_eps(phi)(cell, y) = phi(eps*cell + eps*y) by exact reindexing."""
    phi = _check_phi(phi, grid)
    nc, ny, d = grid.n_cells, grid.n_y, grid.d
    inner = phi[(slice(0, nc * ny),) * d]
    split = inner.reshape(sum(((nc, ny) for _ in range(d)), ()))
    # (c0, m0, c1, m1, ...) -> (c0, c1, ..., m0, m1, ...)
    order = [2 * a for a in range(d)] + [2 * a + 1 for a in range(d)]
    return UnfoldedField(grid, np.ascontiguousarray(split.transpose(order)))


def integral_identity_check(phi, grid):
    """Compare (1/|Y|) int T(phi) over Omega x Y with int phi over Omega_eps^-."""
    phi = _check_phi(phi, grid)
    T = unfold(phi, grid)
    d = grid.d
    lhs = float(np.sum(T.values)) * grid.epsilon**d / grid.n_y**d
    nc, ny = grid.n_cells, grid.n_y
    rhs = float(np.sum(phi[(slice(0, nc * ny),) * d])) * grid.h**d
    return lhs, rhs, abs(lhs - rhs)


def l2_norm_domain(phi, grid):
    return float(np.sqrt(np.sum(np.asarray(phi) ** 2) * grid.h**grid.d))


def l2_norm_unfolded(T):
    g = T.grid
    return float(np.sqrt(np.sum(T.values**2) * g.epsilon**g.d / g.n_y**g.d))


def product_and_norm_checks(phi, psi, grid):
    """Product rule T(phi psi) = T(phi) T(psi) and the L2 contraction bound."""
    phi, psi = _check_phi(phi, grid), _check_phi(psi, grid)
    Tp, Tq, Tpq = unfold(phi, grid), unfold(psi, grid), unfold(phi * psi, grid)
    product_defect = float(np.max(np.abs(Tpq.values - Tp.values * Tq.values), initial=0.0))
    lhs = l2_norm_unfolded(Tp)
    rhs = l2_norm_domain(phi, grid)  # |Y| = 1
    return {
        "product_defect": product_defect,
        "product_exact": product_defect == 0.0,
        "norm_unfolded": lhs,
        "norm_domain": rhs,
        "norm_bound_holds": lhs <= rhs * (1 + 1e-12),
    }


def two_scale_convergence_probe(psi, eps_list, a=None, n_y=16, d=1):
    """L2(Omega x Y) distance between T_eps(a(x) psi(x/eps)) and a(x) psi(y).

    ``psi`` and ``a`` take coordinate arrays of shape ``(d, ...)``.  psi is
    evaluated at the local node coordinate, which equals x/eps modulo 1 in
    exact arithmetic.
    """
    rows = []
    for eps in eps_list:
        g = MacroGrid(d, eps, n_y)
        x = g.coords()
        ax = a(x) if a is not None else np.ones(g.shape)
        y_of_node = _local_y(g)
        phi = ax * psi(y_of_node)
        T = unfold(phi, g).on_domain()
        target = ax.reshape(g.shape + (1,) * d) * psi(g.y_coords()).reshape((1,) * d + (n_y,) * d)
        err = np.sqrt(np.sum((T - target) ** 2) * g.h**d / n_y**d)
        rows.append({"epsilon": eps, "error": float(err)})
    return rows


def _local_y(grid):
    y1 = grid.y_axis()[np.arange(grid.n_fine) % grid.n_y]
    return np.array(np.meshgrid(*([y1] * grid.d), indexing="ij"))


def second_difference(f, h):
    """Centred second difference along a 1D array; interior nodes only."""
    return (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2


def gradient_compatibility_probe(u, W, eps_list, n_y=16):
    """1D check that unfolded second differences of eps^2 u(x) W(x/eps) approach u(x) W''(y).

    Both sides use the same centred stencil, on the fine grid and on the
    periodic y-grid respectively.  Returns one error per epsilon.
    """
    rows = []
    for eps in eps_list:
        g = MacroGrid(1, eps, n_y)
        x = g.axis()
        yl = _local_y(g)[0]
        phi = eps**2 * u(x) * W(yl)
        d2 = np.zeros_like(phi)
        d2[1:-1] = second_difference(phi, g.h)
        T = unfold(d2, g).values  # (cells, y)
        yg = g.y_axis()
        Wy = W(yg)
        d2W = (np.roll(Wy, -1) - 2 * Wy + np.roll(Wy, 1)) * n_y**2
        xc = x.reshape(g.n_cells, n_y)
        target = u(xc) * d2W[None, :]
        mask = np.ones_like(T, dtype=bool)
        mask[0, 0] = mask[-1, -1] = False  # boundary nodes carry no stencil
        err = np.sqrt(np.sum(((T - target) ** 2)[mask]) * g.h)
        rows.append({"epsilon": eps, "error": float(err)})
    return rows
