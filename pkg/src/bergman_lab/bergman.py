"""Gram matrices, orthonormalization and Bergman kernel evaluation.

All kernels are reported in the unit-frame gauge: a section S is
represented at z by f(z) exp(-W_p(z)/2), so that |P_p(x, y)| and B_p(x)
are gauge-independent while phases refer to the chart frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import betaln, xlogy

from .errors import IndefiniteGram, OrderTooSmall, WrongModel
from .geometry import KaehlerModel, ModelKind, _bump_q
from .sections import MonomialBasis, SectionBasis, ThetaBasis

__all__ = [
    "QuadratureGrid",
    "GramFactorization",
    "KernelSample",
    "build_grid",
    "default_order",
    "beta_oracle_error",
    "gram",
    "bergman_diagonal",
    "bergman_offdiag",
    "orbifold_kernel",
    "group_averaged_kernel",
    "trace_integral",
    "sample_diagonal",
    "sample_offdiag",
]


@dataclass(frozen=True)
class QuadratureGrid:
    """Product quadrature for dv_X.

    CP^1 kinds use Gauss-Legendre in s = |z|^2/(1+|z|^2) on [0, 1] times a
    uniform rule in the angle; ``weights`` include the area density, so they
    sum to 1.  The torus uses the periodic trapezoid rule in z = u + v tau.
    """

    model: KaehlerModel
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    n_angle: int
    s_nodes: np.ndarray | None = None
    s_weights: np.ndarray | None = None
    angles: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.nodes.size)


def default_order(model: KaehlerModel, p_max: int) -> int:
    if model.is_cp1:
        return 2 * (p_max + model.twist_degree) + 16
    return 2 * p_max + 32


def beta_oracle_error(s_nodes, s_weights, q_max: int) -> float:
    """Worst relative error of the radial rule on the Beta integrals.

    Checks, for all j <= q <= q_max, the identity
    integral of |z|^(2j) (1+|z|^2)^(-q-2) dx dy / pi = j! (q-j)! / (q+1)!,
    which in the s variable reads integral_0^1 s^j (1-s)^(q-j) ds.
    """
    log_s, log_1ms = np.log(s_nodes), np.log1p(-s_nodes)
    worst = 0.0
    for q in range(q_max + 1):
        j = np.arange(q + 1)[:, None]
        vals = np.exp(j * log_s + (q - j) * log_1ms) @ s_weights
        exact = np.exp(betaln(j[:, 0] + 1.0, q - j[:, 0] + 1.0))
        worst = max(worst, float(np.max(np.abs(vals / exact - 1.0))))
    return worst


def build_grid(model: KaehlerModel, order: int, p_max: int | None = None,
               n_angle: int | None = None) -> QuadratureGrid:
    """Quadrature grid of the given radial ``order`` (CP^1) or side (torus).

    When ``p_max`` is given the Beta oracle is run up to q = 2 p_max and a
    failure above 1e-10 raises :class:`OrderTooSmall`.
    """
    order = int(order)
    if order < 2:
        raise OrderTooSmall("order must be >= 2")
    if model.kind is ModelKind.BARGMANN_FOCK:
        raise WrongModel("the Bargmann-Fock plane has no finite-volume grid")
    if model.kind is ModelKind.FLAT_TORUS:
        n = order if n_angle is None else int(n_angle)
        u = np.arange(order) / order
        v = np.arange(n) / n
        nodes = (u[None, :] + model.torus_modulus * v[:, None]).ravel()
        weights = np.full(nodes.size, 1.0 / (order * n))
        return QuadratureGrid(model, nodes, weights, order, n)
    x, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w
    if p_max is not None:
        err = beta_oracle_error(s, ws, 2 * int(p_max))
        if not err <= 1e-10:
            raise OrderTooSmall(f"Beta oracle error {err:.3g} at order {order}, p_max {p_max}")
    n_angle = order if n_angle is None else int(n_angle)
    angles = 2.0 * np.pi * np.arange(n_angle) / n_angle
    r = np.sqrt(s / (1.0 - s))
    nodes = (r[:, None] * np.exp(1j * angles[None, :])).ravel()
    density = 1.0 + model.perturbation * _bump_q(s)
    weights = np.repeat(ws * density / n_angle, n_angle)
    return QuadratureGrid(model, nodes, weights, order, n_angle, s, ws, angles)


@dataclass(frozen=True)
class GramFactorization:
    """Gram matrix G with Cholesky factor G_s = L L^H of the scaled Gram.

    ``scale`` holds the per-section pre-scaling d (all ones unless the first
    factorization failed), so G = D^-1 L L^H D^-1.  ``transform`` is the
    upper-triangular R = D L^-H with R^H G R = I: the row vector of
    orthonormal sections is S R.
    """

    gram: np.ndarray
    chol: np.ndarray
    scale: np.ndarray
    condition: float
    prescaled: bool = False

    @property
    def transform(self) -> np.ndarray:
        Linv = linalg.solve_triangular(self.chol, np.eye(self.chol.shape[0]), lower=True)
        return self.scale[:, None] * Linv.conj().T

    def orthonormal(self, unit_vals: np.ndarray) -> np.ndarray:
        """Map unit values of the raw sections (..., d) to those of S R."""
        shape = unit_vals.shape
        flat = (unit_vals.reshape(-1, shape[-1]) * self.scale).T
        # (S R)^T = R^T S^T and R^T = conj(L^-1) D
        out = linalg.solve_triangular(self.chol, flat.conj(), lower=True).conj()
        return out.T.reshape(shape)


def _gram_separable(basis: MonomialBasis, grid: QuadratureGrid) -> tuple[np.ndarray, np.ndarray]:
    """Same product rule as the dense sum, factorized over (s, angle)."""
    s, ws = grid.s_nodes, grid.s_weights
    e = basis.exponents
    N, p, a = basis.degree, basis.p, basis.model.perturbation
    log_mod = 0.5 * (xlogy(e[None, :], s[:, None]) + (N - e)[None, :] * np.log1p(-s)[:, None]) \
        - 0.5 * p * a * (s * (1.0 - s))[:, None]
    rho = np.exp(log_mod)
    radial = rho.T @ ((ws * (1.0 + a * _bump_q(s)))[:, None] * rho)
    dm = e[None, :] - e[:, None]
    angular = np.exp(1j * np.multiply.outer(dm, grid.angles)).mean(axis=-1)
    return radial * angular, rho.max(axis=0)


def _gram_dense(basis: SectionBasis, grid: QuadratureGrid, chunk: int = 8192):
    d = basis.raw_dim
    G = np.zeros((d, d), dtype=complex)
    sup = np.zeros(d)
    for start in range(0, grid.size, chunk):
        stop = start + chunk
        U = basis._raw_unit_values(grid.nodes[start:stop], "z")
        G += U.conj().T @ (grid.weights[start:stop, None] * U)
        sup = np.maximum(sup, np.abs(U).max(axis=0))
    return G, sup


def _check_order(basis: SectionBasis, grid: QuadratureGrid) -> None:
    if grid.model.kind is not basis.model.kind and not (basis.model.is_cp1 and grid.model.is_cp1):
        raise WrongModel("grid and basis belong to different models")
    if isinstance(basis, MonomialBasis):
        if grid.n_angle <= basis.degree:
            raise OrderTooSmall(f"{grid.n_angle} angles cannot resolve modes up to {basis.degree}")
        if grid.order < basis.degree + 1:
            raise OrderTooSmall(f"radial order {grid.order} below degree {basis.degree} + 1")
    elif isinstance(basis, ThetaBasis):
        if min(grid.order, grid.n_angle) < basis.p + 1:
            raise OrderTooSmall(f"torus grid side {grid.order} too small for p = {basis.p}")


def gram(basis: SectionBasis, grid: QuadratureGrid, method: str = "auto") -> GramFactorization:
    """Gram matrix of ``basis`` under the grid's L^2 product and its factorization.

    ``method`` is "separable" (CP^1 only), "dense" or "auto".  The
    basis' ``volume_scale`` multiplies the product (1/k on quotients).
    """
    _check_order(basis, grid)
    if method == "auto":
        method = "separable" if isinstance(basis, MonomialBasis) and grid.s_nodes is not None else "dense"
    if method == "separable":
        if not isinstance(basis, MonomialBasis) or grid.s_nodes is None:
            raise WrongModel("separable Gram needs monomial sections on a CP^1 grid")
        if basis.model.perturbation != grid.model.perturbation:
            raise WrongModel("grid and basis use different metrics")
        G, sup = _gram_separable(basis, grid)
    elif method == "dense":
        G, sup = _gram_dense(basis, grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    G = G * basis.volume_scale
    if basis.mixing is not None:
        M = basis.mixing
        G = M.conj().T @ G @ M
        sup = np.abs(M).T @ sup
    G = 0.5 * (G + G.conj().T)
    cond = float(np.linalg.cond(G))
    L = _cholesky(G)
    if L is not None:
        return GramFactorization(G, L, np.ones(G.shape[0]), cond)
    d = 1.0 / np.where(sup > 0, sup, 1.0)
    L = _cholesky(d[:, None] * G * d[None, :])
    if L is None:
        raise IndefiniteGram("Gram matrix is not numerically positive definite; raise the grid order")
    return GramFactorization(G, L, d, cond, prescaled=True)


def _cholesky(G: np.ndarray, rel_pivot: float = 1e-13):
    """Lower Cholesky factor, or None when a pivot is lost to rounding."""
    try:
        L = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError:
        return None
    # a pivot this small relative to its diagonal entry is rounding noise
    if np.any(np.abs(np.diag(L)) ** 2 < rel_pivot * np.abs(np.diag(G))):
        return None
    return L


def bergman_diagonal(basis: SectionBasis, fact: GramFactorization, z, chart: str = "z"):
    """B_p(z) = sum_i |(S R)_i(z)|^2, vectorized over ``z``."""
    e = fact.orthonormal(basis.unit_values(z, chart))
    out = np.sum(np.abs(e) ** 2, axis=-1)
    return float(out) if out.ndim == 0 else out


def bergman_offdiag(basis: SectionBasis, fact: GramFactorization, x, y,
                    chart_x: str = "z", chart_y: str = "z"):
    """P_p(x, y) = sum_i (S R)_i(x) conj((S R)_i(y)), broadcasting x against y."""
    ex = fact.orthonormal(basis.unit_values(x, chart_x))
    ey = fact.orthonormal(basis.unit_values(y, chart_y))
    out = np.sum(ex * ey.conj(), axis=-1)
    return complex(out) if out.ndim == 0 else out


def orbifold_kernel(basis: SectionBasis, fact: GramFactorization, x, y):
    """Downstairs kernel of the quotient from its invariant basis."""
    if basis.model.kind is not ModelKind.CYCLIC_QUOTIENT or basis.volume_scale == 1.0:
        raise WrongModel("orbifold_kernel needs the invariant basis of a CyclicQuotientCP1")
    return bergman_offdiag(basis, fact, x, y)


def group_averaged_kernel(upstairs: SectionBasis, fact: GramFactorization, x, y, k: int):
    """sum over g in Z_k of the upstairs kernel P(g^-1 x, y).

    The rotation preserves the radial weight, so in the unit-frame gauge it
    acts on the fiber trivially and only moves the point.
    """
    if not upstairs.model.is_cp1 or upstairs.volume_scale != 1.0:
        raise WrongModel("group averaging needs the full CP^1 basis upstairs")
    x = np.asarray(x, dtype=complex)
    total = 0
    for l in range(k):
        total = total + bergman_offdiag(upstairs, fact, x * np.exp(-2j * np.pi * l / k), y)
    return total


def trace_integral(basis: SectionBasis, fact: GramFactorization, grid: QuadratureGrid) -> float:
    """Quadrature of B_p over X (downstairs volume on quotients)."""
    B = bergman_diagonal(basis, fact, grid.nodes)
    return float(math.fsum(grid.weights * B) * basis.volume_scale)


@dataclass(frozen=True)
class KernelSample:
    p: int
    model_id: str
    x: np.ndarray
    y: np.ndarray | None
    values: np.ndarray
    gauge: str = field(default="unit frame f(z) exp(-W_p(z)/2) in the z-chart")

    @property
    def is_diagonal(self) -> bool:
        return self.y is None


def sample_diagonal(basis, fact, z) -> KernelSample:
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    return KernelSample(basis.p, basis.model.label, z, None, bergman_diagonal(basis, fact, z))


def sample_offdiag(basis, fact, x, y) -> KernelSample:
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    return KernelSample(basis.p, basis.model.label, x, y, bergman_offdiag(basis, fact, x, y))
