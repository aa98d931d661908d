"""
One-dimensional fine-scale and homogenized problems on (0, 1).

Trial space: C1 piecewise cubics (Hermite), unknowns (u_i, u'_i) at the mesh
nodes.  u(0) = u(1) = 0 is imposed strongly; u' is left free, which imposes
the vanishing double traction weakly.  In 1D the tangential surface terms
of the general boundary conditions vanish, so this is the complete set.

Fine form, with (a, b) the epsilon powers of S and A:

    B(u, v) = int (K u' + eps^a S u'') v' + (eps^b A u'' + eps^a S u') v''

and coefficients K(x/eps), S(x/eps), A(x/eps) read from a 1D cell field.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .cell_solver import SolverParams
from .effective import compute_effective
from .errors import CoercivityError, GradhomError
from .scaling import HS1, HS2, normalize_regime, regime_multipliers

log = logging.getLogger(__name__)

__all__ = [
    "Mesh1D",
    "Solution1D",
    "make_mesh",
    "uniform_mesh",
    "solve_fine_1d",
    "solve_homog_hs1_1d",
    "solve_homog_hs2_1d",
    "effective_scalars",
    "convergence_study",
    "s_independence_probe",
    "coercivity_probe",
    "parse_load",
]

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(4)
GAUSS_T = 0.5 * (GAUSS_X + 1.0)
GAUSS_W = 0.5 * GAUSS_W
MIN_ELEMENTS_PER_PERIOD = 8
DEFAULT_ELEMENTS_PER_PERIOD = 16


SLOPE = np.array([0, 1, 0, 1])  # nodal slope dofs carry one factor h


def _hermite_ref(t):
    """Cubic Hermite shapes on [0, 1] and their t-derivatives, shape (3, 4) + t.shape."""
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    H = [1 - 3 * t**2 + 2 * t**3, t - 2 * t**2 + t**3, 3 * t**2 - 2 * t**3, -(t**2) + t**3]
    dH = [-6 * t + 6 * t**2, one - 4 * t + 3 * t**2, 6 * t - 6 * t**2, -2 * t + 3 * t**2]
    d2H = [-6 * one + 12 * t, -4 * one + 6 * t, 6 * one - 12 * t, -2 * one + 6 * t]
    return np.array([H, dH, d2H])


def _hermite(t, h):
    """Physical shapes for element length h: entry [k, a] is scaled by h^(SLOPE[a] - k).

    ``t`` and ``h`` broadcast against each other; the result has shape
    (3, 4) + broadcast shape.
    """
    t, h = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(h, dtype=float))
    ref = _hermite_ref(t)
    k = np.arange(3)[:, None]
    power = (SLOPE[None, :] - k).reshape((3, 4) + (1,) * t.ndim)
    return ref * h[None, None] ** power


@dataclass(frozen=True, eq=False)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise GradhomError("mesh nodes must be strictly increasing")
        if abs(x[0]) > 1e-14 or abs(x[-1] - 1.0) > 1e-14:
            raise GradhomError("mesh must span [0, 1]")
        x = x.copy()
        x[0], x[-1] = 0.0, 1.0
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def n_elements(self):
        return self.nodes.size - 1

    @property
    def h(self):
        return np.diff(self.nodes)

    @property
    def n_dofs(self):
        return 2 * self.nodes.size

    def gauss_points(self):
        """Physical quadrature points (elements, 4) and weights."""
        h = self.h
        x = self.nodes[:-1, None] + h[:, None] * GAUSS_T[None, :]
        return x, h[:, None] * GAUSS_W[None, :]

    def basis(self):
        """Shape data at the Gauss points, shape (elements, 3, 4 shapes, 4 points)."""
        return np.moveaxis(_hermite(GAUSS_T[None, :], self.h[:, None]), 2, 0)

    def dof_map(self):
        e = np.arange(self.n_elements)
        return np.stack([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3], axis=1)

    def free_dofs(self):
        return np.setdiff1d(np.arange(self.n_dofs), [0, self.n_dofs - 2])


def uniform_mesh(n_elements):
    if n_elements < 1:
        raise GradhomError("need at least one element")
    return Mesh1D(np.linspace(0.0, 1.0, int(n_elements) + 1))


def _runs(values):
    """Start offsets in [0, 1) of the runs of identical consecutive pixel values."""
    N = values.shape[-1]
    change = np.any(values != np.roll(values, 1, axis=-1), axis=0)
    starts = np.nonzero(change)[0] / N
    return starts if starts.size else np.array([0.0])


def _pixel_table(field_1d):
    if field_1d.d != 1:
        raise GradhomError("the macro problem needs a 1D cell field")
    N = field_1d.grid.N
    return np.stack([field_1d.K.reshape(N), field_1d.S.reshape(N), field_1d.A.reshape(N)])


def _check_epsilon(epsilon):
    inv = 1.0 / epsilon
    if not 0 < epsilon < 1 or abs(inv - round(inv)) > 1e-9 * inv:
        raise GradhomError(f"1/epsilon must be an integer, got epsilon={epsilon}")
    return int(round(inv))


def make_mesh(field_1d, epsilon, elements_per_period=DEFAULT_ELEMENTS_PER_PERIOD, aligned=True):
    """Fine mesh with at least ``elements_per_period`` elements per epsilon-cell.

    Aligned meshes put element boundaries on every material interface of
    the rescaled cell field; the misaligned mode is a uniform mesh whose
    nodes generally cut through the pixels.
    """
    n_cells = _check_epsilon(epsilon)
    if elements_per_period < MIN_ELEMENTS_PER_PERIOD:
        raise GradhomError(f"need at least {MIN_ELEMENTS_PER_PERIOD} elements per period")
    if not aligned:
        return uniform_mesh(n_cells * elements_per_period + 1)
    # x = eps (j - 1/2 + s) for a run start s in [0, 1)
    starts = _runs(_pixel_table(field_1d))
    j = np.arange(n_cells + 2)[:, None]
    bp = (epsilon * (j - 0.5 + starts[None, :])).ravel()
    bp = np.concatenate([[0.0, 1.0], bp[(bp > 1e-12) & (bp < 1 - 1e-12)]])
    bp = np.unique(np.round(bp, 14))
    h_target = epsilon / elements_per_period
    pieces = [np.linspace(a, b, max(1, math.ceil((b - a) / h_target - 1e-9)) + 1)[:-1]
              for a, b in zip(bp[:-1], bp[1:])]
    return Mesh1D(np.concatenate(pieces + [[1.0]]))


def _sample(field_1d, epsilon, x):
    """K, S, A at physical points x for the epsilon-periodic rescaling."""
    table = _pixel_table(field_1d)
    N = table.shape[1]
    s = np.mod(x / epsilon + 0.5, 1.0)
    m = np.minimum((s * N).astype(int), N - 1)
    return table[0][m], table[1][m], table[2][m]


def _assemble(mesh, c_uu, c_us, c_ss):
    """Global matrix of int c_uu u'v' + c_us (u''v' + u'v'') + c_ss u''v''.

    Coefficient arrays have the Gauss-point shape (elements, 4).
    """
    _, w = mesh.gauss_points()
    B = mesh.basis()
    d1, d2 = B[:, 1], B[:, 2]
    ke = (
        np.einsum("eq,eaq,ebq->eab", w * c_uu, d1, d1)
        + np.einsum("eq,eaq,ebq->eab", w * c_us, d2, d1)
        + np.einsum("eq,eaq,ebq->eab", w * c_us, d1, d2)
        + np.einsum("eq,eaq,ebq->eab", w * c_ss, d2, d2)
    )
    dm = mesh.dof_map()
    rows = np.repeat(dm, 4, axis=1).ravel()
    cols = np.tile(dm, (1, 4)).ravel()
    n = mesh.n_dofs
    return sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _mass(mesh, weight_u=1.0, weight_d1=1.0, weight_d2=0.0):
    """Gram matrix of int weight_u u v + weight_d1 u'v' + weight_d2 u''v''."""
    _, w = mesh.gauss_points()
    B = mesh.basis()
    ke = (
        weight_u * np.einsum("eq,eaq,ebq->eab", w, B[:, 0], B[:, 0])
        + weight_d1 * np.einsum("eq,eaq,ebq->eab", w, B[:, 1], B[:, 1])
        + weight_d2 * np.einsum("eq,eaq,ebq->eab", w, B[:, 2], B[:, 2])
    )
    dm = mesh.dof_map()
    rows = np.repeat(dm, 4, axis=1).ravel()
    cols = np.tile(dm, (1, 4)).ravel()
    n = mesh.n_dofs
    return sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _load_vector(mesh, g):
    x, w = mesh.gauss_points()
    gv = np.broadcast_to(np.asarray(g(x), dtype=float), x.shape)
    B = mesh.basis()
    fe = np.einsum("eq,eaq->ea", w * gv, B[:, 0])
    f = np.zeros(mesh.n_dofs)
    np.add.at(f, mesh.dof_map(), fe)
    return f


def _banded_upper(M, u=3):
    n = M.shape[0]
    ab = np.zeros((u + 1, n))
    for k in range(u + 1):
        ab[u - k, k:] = M.diagonal(k)
    return ab


def _restrict(M, free):
    return M[free][:, free]


@dataclass(eq=False)
class Solution1D:
    mesh: Mesh1D
    coeffs: np.ndarray
    energy: float
    load_work: float
    label: str = ""

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        e = np.clip(np.searchsorted(self.mesh.nodes, x, side="right") - 1, 0, self.mesh.n_elements - 1)
        h = self.mesh.h[e]
        t = (x - self.mesh.nodes[e]) / h
        return e, t, h

    def at_points(self, x, deriv=0):
        """u (deriv=0), u' or u'' at arbitrary points of [0, 1]."""
        x = np.asarray(x, dtype=float)
        e, t, h = self._locate(x.ravel())
        shp = _hermite(t, h)[deriv]  # (4, n)
        c = self.coeffs[self.mesh.dof_map()[e]].T
        return np.sum(shp * c, axis=0).reshape(x.shape)

    def norms(self):
        """(L2, H1, ||u''||): H1 is the full norm (int u^2 + u'^2)^(1/2)."""
        x, w = self.mesh.gauss_points()
        u, du, d2u = (self.at_points(x, k) for k in range(3))
        l2 = float(np.sqrt(np.sum(w * u**2)))
        h1 = float(np.sqrt(np.sum(w * (u**2 + du**2))))
        hess = float(np.sqrt(np.sum(w * d2u**2)))
        return l2, h1, hess


def _as_load(g):
    if callable(g):
        return g
    return parse_load(g)


def parse_load(spec):
    """``const:c`` or ``sin:k`` (sin(k pi x)) load specifications."""
    if callable(spec):
        return spec
    try:
        kind, val = str(spec).split(":", 1)
        val = float(val)
    except ValueError as exc:
        raise GradhomError(f"bad load specification {spec!r}") from exc
    if kind == "const":
        return lambda x: np.full_like(np.asarray(x, dtype=float), val)
    if kind == "sin":
        return lambda x: np.sin(val * np.pi * np.asarray(x, dtype=float))
    raise GradhomError(f"unknown load kind {kind!r}")


REFINEMENT_STEPS = 2


def _solve_spd(mesh, M, f, label):
    free = mesh.free_dofs()
    Mf = _restrict(M, free)
    try:
        chol = linalg.cholesky_banded(_banded_upper(Mf), lower=False)
    except linalg.LinAlgError as exc:
        raise CoercivityError(f"{label}: stiffness matrix is not positive definite", float("nan")) from exc
    sol = linalg.cho_solve_banded((chol, False), f[free])
    # cond(M) grows like h^-4; refining with a compensated residual recovers
    # the digits the energy balance int g u = B(u, u) needs
    for _ in range(REFINEMENT_STEPS):
        sol = sol + linalg.cho_solve_banded((chol, False), _accurate_residual(Mf, sol, f[free]))
    u = np.zeros(mesh.n_dofs)
    u[free] = sol
    return Solution1D(mesh, u, _accurate_form(M, u, u), _accurate_dot(f, u), label)


_SPLIT = 134217729.0  # 2**27 + 1


def _two_product(a, b):
    """p + e == a * b exactly (Dekker), elementwise."""
    p = a * b
    ah = a * _SPLIT
    ah = ah - (ah - a)
    bh = b * _SPLIT
    bh = bh - (bh - b)
    al, bl = a - ah, b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _accurate_residual(M, u, f):
    """f - M u for a banded M, products and sums carried in double-double."""
    s, c = f.copy(), np.zeros_like(f)
    for k in range(-3, 4):
        dk = M.diagonal(k)
        rows = np.arange(max(0, -k), max(0, -k) + dk.size)
        p, e = _two_product(-dk, u[rows + k])
        for t in (p, e):
            s_new, err = _two_sum(s[rows], t)
            s[rows] = s_new
            c[rows] += err
    return s + c


def _accurate_dot(a, b):
    # stiffness rows cancel strongly on smooth vectors, plain sums lose cond(M) * eps
    p, e = _two_product(np.asarray(a, float), np.asarray(b, float))
    return math.fsum(np.concatenate([p, e]))


def _accurate_form(M, u, v):
    """v . M u with error-free products and an exact sum."""
    C = M.tocoo()
    p, e = _two_product(u[C.col], v[C.row])
    q, r = _two_product(C.data, p)
    return math.fsum(np.concatenate([q, r, C.data * e]))


def _fine_coefficients(field_1d, epsilon, regime, mesh):
    m = regime_multipliers(regime)
    x, _ = mesh.gauss_points()
    K, S, A = _sample(field_1d, epsilon, x)
    return K, epsilon**m.s_in_sigma * S, epsilon**m.a_in_mu * A, m


def _norm_weight(regime, epsilon):
    return epsilon**2 if regime == HS1 else 1.0


def _min_generalized_eig(B, G, free):
    Bf = _restrict(B, free).toarray()
    Gf = _restrict(G, free).toarray()
    return float(linalg.eigh(Bf, Gf, eigvals_only=True, subset_by_index=[0, 0])[0])


def fine_form(field_1d, epsilon, regime, mesh):
    """Assembled fine stiffness matrix and the pointwise positivity margin.

    The margin is the smallest K * eps^b A - (eps^a S)^2 over quadrature points
    (per unit K, A), positive when the local quadratic form is definite.
    """
    regime = normalize_regime(regime)
    K, S, A, m = _fine_coefficients(field_1d, epsilon, regime, mesh)
    if m.s_in_sigma != m.s_in_mu:
        raise GradhomError("asymmetric S scaling is not supported")
    B = _assemble(mesh, K, S, A)
    pointwise = float(np.min(K * A - S**2))
    return B, pointwise


def solve_fine_1d(field_1d, epsilon, regime, g, mesh=None, check_coercivity=True):
    """Galerkin solution of the epsilon-problem."""
    regime = normalize_regime(regime)
    _check_epsilon(epsilon)
    mesh = mesh or make_mesh(field_1d, epsilon)
    B, pointwise = fine_form(field_1d, epsilon, regime, mesh)
    if check_coercivity and pointwise <= 0:
        G = _mass(mesh, 1.0, 1.0, _norm_weight(regime, epsilon))
        margin = _min_generalized_eig(B, G, mesh.free_dofs())
        if margin <= 0:
            raise CoercivityError(
                f"fine form indefinite at epsilon={epsilon} (min generalized eigenvalue {margin:.3e})",
                margin,
            )
    f = _load_vector(mesh, _as_load(g))
    return _solve_spd(mesh, B, f, f"fine {regime} eps={epsilon}")


def solve_homog_hs1_1d(K_eff, g, mesh=None):
    """int K_eff u'v' = int g v."""
    if not K_eff > 0:
        raise GradhomError(f"K_eff must be positive, got {K_eff}")
    mesh = mesh or uniform_mesh(256)
    x, _ = mesh.gauss_points()
    zero = np.zeros_like(x)
    B = _assemble(mesh, np.full_like(x, K_eff), zero, zero)
    return _solve_spd(mesh, B, _load_vector(mesh, _as_load(g)), "homogenized HS1")


def solve_homog_hs2_1d(K_mean, A_eff, g, mesh=None):
    """int K_mean u'v' + A_eff u''v'' = int g v, double traction free at the ends."""
    if not (K_mean > 0 and A_eff > 0):
        raise GradhomError(f"K_mean and A_eff must be positive, got {K_mean}, {A_eff}")
    mesh = mesh or uniform_mesh(256)
    x, _ = mesh.gauss_points()
    B = _assemble(mesh, np.full_like(x, K_mean), np.zeros_like(x), np.full_like(x, A_eff))
    return _solve_spd(mesh, B, _load_vector(mesh, _as_load(g)), "homogenized HS2")


def effective_scalars(field_1d, regime, params=None):
    """Scalar effective coefficients of a 1D cell: {'K_eff'} or {'K_mean', 'A_eff'}."""
    regime = normalize_regime(regime)
    eff, _ = compute_effective(field_1d, regime, params)
    if regime == HS1:
        return {"K_eff": float(eff.K_eff.data.ravel()[0])}
    return {"K_mean": float(eff.K_mean.data.ravel()[0]), "A_eff": float(eff.A_eff.data.ravel()[0])}


def solve_homog(regime, scalars, g, mesh=None):
    if normalize_regime(regime) == HS1:
        return solve_homog_hs1_1d(scalars["K_eff"], g, mesh)
    return solve_homog_hs2_1d(scalars["K_mean"], scalars["A_eff"], g, mesh)


def difference_norms(u, v, mesh=None):
    """(L2, H1) norms of u - v by Gauss quadrature on ``mesh`` (default u.mesh)."""
    mesh = mesh or u.mesh
    x, w = mesh.gauss_points()
    e0 = u.at_points(x) - v.at_points(x)
    e1 = u.at_points(x, 1) - v.at_points(x, 1)
    return float(np.sqrt(np.sum(w * e0**2))), float(np.sqrt(np.sum(w * (e0**2 + e1**2))))


def _l2_load(g, mesh):
    x, w = mesh.gauss_points()
    gv = np.broadcast_to(np.asarray(g(x), dtype=float), x.shape)
    return float(np.sqrt(np.sum(w * gv**2)))


def stability_constant(sol, g, regime, epsilon):
    """(||u||_H1^2 + w ||u''||^2)^(1/2) / ||g||_L2 with w = eps^2 (HS1) or 1 (HS2)."""
    _, h1, hess = sol.norms()
    gn = _l2_load(_as_load(g), sol.mesh)
    if gn == 0:
        return 0.0
    return float(math.sqrt(h1**2 + _norm_weight(normalize_regime(regime), epsilon) * hess**2) / gn)


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def convergence_study(field_1d, regime, eps_list, g, elements_per_period=DEFAULT_ELEMENTS_PER_PERIOD,
                      homog_elements=1024, params=None, threads=1, aligned=True):
    """Cell solve, effective tensors, homogenized solve, then fine solves per epsilon.

    Returns (rows, scalars) where each row holds epsilon, l2_error, h1_error,
    energy_fine, energy_homog and stability_const.
    """
    regime = normalize_regime(regime)
    g = _as_load(g)
    eps_list = [float(e) for e in eps_list]
    for e in eps_list:
        _check_epsilon(e)
    scalars = effective_scalars(field_1d, regime, params)
    u0 = solve_homog(regime, scalars, g, uniform_mesh(homog_elements))

    def one(eps):
        mesh = make_mesh(field_1d, eps, elements_per_period, aligned)
        ue = solve_fine_1d(field_1d, eps, regime, g, mesh)
        l2, h1 = difference_norms(ue, u0)
        return {
            "epsilon": eps,
            "l2_error": l2,
            "h1_error": h1,
            "energy_fine": ue.energy,
            "energy_homog": u0.energy,
            "stability_const": stability_constant(ue, g, regime, eps),
        }

    rows = _map(one, eps_list, threads)
    for r in rows:
        log.info("eps=%g  L2=%.3e  H1=%.3e", r["epsilon"], r["l2_error"], r["h1_error"])
    return rows, scalars


def s_independence_probe(field_a, field_b, regime, eps_list, g,
                         elements_per_period=DEFAULT_ELEMENTS_PER_PERIOD, threads=1):
    """||u_eps[S_a] - u_eps[S_b]||_L2 per epsilon for two fields differing only in S."""
    if not (np.array_equal(field_a.K, field_b.K) and np.array_equal(field_a.A, field_b.A)):
        raise GradhomError("fields must share K and A")
    regime = normalize_regime(regime)
    g = _as_load(g)

    def one(eps):
        ma = make_mesh(field_a, eps, elements_per_period)
        mb = make_mesh(field_b, eps, elements_per_period)
        mesh = Mesh1D(np.union1d(ma.nodes, mb.nodes))
        ua = solve_fine_1d(field_a, eps, regime, g, mesh)
        ub = solve_fine_1d(field_b, eps, regime, g, mesh)
        l2, h1 = difference_norms(ua, ub)
        return {"epsilon": float(eps), "l2_diff": l2, "h1_diff": h1}

    return _map(one, [float(e) for e in eps_list], threads)


@dataclass
class CoercivityReport:
    epsilon: float
    regime: str
    c_est: float
    c_eig: float
    c_sampled: float
    passes: bool
    pointwise_margin: float
    stability_const: float
    trials: int

    def to_dict(self):
        return dict(self.__dict__)


def random_loads(n, seed, modes=6):
    """Seeded smooth loads sum_k c_k sin(k pi x)."""
    rng = np.random.default_rng(seed)
    loads = []
    for _ in range(n):
        c = rng.standard_normal(modes)
        loads.append(lambda x, c=c: sum(ck * np.sin((k + 1) * np.pi * x) for k, ck in enumerate(c)))
    return loads


def coercivity_probe(field_1d, epsilon, regime, trials=200, seed=0, n_loads=5,
                     elements_per_period=MIN_ELEMENTS_PER_PERIOD):
    """Lower bound of B[v, v] / (||v||_H1^2 + w ||v''||^2) on the discrete space.

    ``c_eig`` is the smallest generalized eigenvalue of the assembled pair,
    ``c_sampled`` the smallest Rayleigh quotient over ``trials`` seeded random
    vectors, and ``c_est = min(c_eig, c_sampled)``.  When the form is positive
    the stability constant is the worst ratio over ``n_loads`` random loads.
    """
    if trials < 100:
        raise GradhomError("coercivity probe needs at least 100 trials")
    regime = normalize_regime(regime)
    mesh = make_mesh(field_1d, epsilon, elements_per_period)
    B, pointwise = fine_form(field_1d, epsilon, regime, mesh)
    G = _mass(mesh, 1.0, 1.0, _norm_weight(regime, epsilon))
    free = mesh.free_dofs()
    c_eig = _min_generalized_eig(B, G, free)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((free.size, trials))
    Bf, Gf = _restrict(B, free), _restrict(G, free)
    c_sampled = float(np.min(np.sum(V * (Bf @ V), axis=0) / np.sum(V * (Gf @ V), axis=0)))
    c_est = min(c_eig, c_sampled)
    passes = c_est > 0
    stab = float("inf")
    if passes:
        stab = 0.0
        for g in random_loads(n_loads, seed):
            sol = solve_fine_1d(field_1d, epsilon, regime, g, mesh, check_coercivity=False)
            stab = max(stab, stability_constant(sol, g, regime, epsilon))
    return CoercivityReport(float(epsilon), regime, c_est, c_eig, c_sampled, bool(passes),
                            pointwise, stab, trials)
