"""Euclidean model kernels and the second-order coefficient machinery.

Real coordinates Z = (x_1, y_1, ..., x_n, y_n) with complex structure
J(x, y) = (-y, x) on each plane.  The skew pairing used throughout is

    <JZ, Z'> = sum_j (x_j y'_j - y_j x'_j),

which vanishes on the diagonal Z = Z'.  For spectrum a = (a_1, ..., a_n)
(all equal to 2 pi in the Kähler normalization):

    P(Z, Z')     = prod(a_j / 2pi) exp(-sum a_j/4 |z_j - z'_j|^2 - i sum a_j/2 <JZ, Z'>_j)
    K_u(Z, Z')   = prod(a_j / 2pi / (1 - exp(-2 u a_j)))
                   * exp(-sum a_j/4 coth(u a_j) |z_j - z'_j|^2 - i sum a_j/2 <JZ, Z'>_j)

K_u is the heat kernel of
Q_0 = -Laplacian + sum a_j^2/4 |z_j|^2 - sum a_j + i sum a_j (x_j d/dy_j - y_j d/dx_j),
and K_u -> P as u -> infinity at the rate exp(-2 u min a_j).

Curvature conventions (n = 1).  The constant-curvature tensor is
R(u, v)w = K (<v, w> u - <u, w> v), whose contraction gives r^X = 2K, and
R^E(u, v) = -(i/2) r^E omega_0(u, v) with omega_0(e_1, e_2) = 1, so that
i (R^E(e_1, J e_1) + R^E(e_2, J e_2)) = r^E.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridTooCoarse, QuadratureDiverged

__all__ = [
    "ModelSpectrum",
    "kaehler_spectrum",
    "CurvatureScalars",
    "UniformGrid",
    "model_bergman",
    "model_heat_kernel",
    "b0u",
    "q0_apply",
    "q2_apply_gaussian",
    "q2_apply_fd",
    "q2_bracket",
    "j2u_volterra",
    "j2u_closed",
    "j2u_deviation",
    "b1",
    "plane_rule",
    "gauss_hermite_2d",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ModelSpectrum:
    """Eigenvalues a_1 <= ... <= a_n of the model operator, all positive."""

    n: int
    a: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        if len(a) != self.n or not all(v > 0 for v in a):
            raise ValueError("need n positive eigenvalues")
        object.__setattr__(self, "a", tuple(sorted(a)))

    @property
    def det(self) -> float:
        return float(np.prod(self.a))

    @property
    def trace(self) -> float:
        return float(sum(self.a))

    @property
    def mu0(self) -> float:
        return min(self.a) / TWO_PI

    @property
    def diag_value(self) -> float:
        """P(Z, Z) = prod a_j / (2 pi)^n."""
        return float(np.prod(np.asarray(self.a) / TWO_PI))


def kaehler_spectrum(n: int = 1) -> ModelSpectrum:
    return ModelSpectrum(n, (TWO_PI,) * n)


@dataclass(frozen=True)
class CurvatureScalars:
    rX: float
    rE: float

    @property
    def K(self) -> float:
        return 0.5 * self.rX

    def R(self, u, v, w) -> np.ndarray:
        """Riemann tensor R(u, v)w on the plane; vectors may carry leading axes."""
        u, v, w = (np.asarray(t, dtype=float) for t in (u, v, w))
        vw = np.sum(v * w, axis=-1, keepdims=True)
        uw = np.sum(u * w, axis=-1, keepdims=True)
        return self.K * (vw * u - uw * v)

    def RE(self, u, v):
        """Twisting curvature R^E(u, v), a purely imaginary scalar."""
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        return -0.5j * self.rE * (u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])


def _J(v):
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _pairs(Z, spec):
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-1] != 2 * spec.n:
        raise ValueError(f"expected real {2 * spec.n}-vectors")
    return Z.reshape(Z.shape[:-1] + (spec.n, 2))


def _skew(Z, Zp):
    # <JZ, Z'> per complex plane
    return Z[..., 0] * Zp[..., 1] - Z[..., 1] * Zp[..., 0]


def model_bergman(Z, Zp, spec: ModelSpectrum):
    """Kernel of the projection onto the model ground states."""
    Z, Zp = _pairs(Z, spec), _pairs(Zp, spec)
    a = np.asarray(spec.a)
    dist2 = np.sum((Z - Zp) ** 2, axis=-1)
    expo = np.sum(-0.25 * a * dist2 - 0.5j * a * _skew(Z, Zp), axis=-1)
    out = spec.diag_value * np.exp(expo)
    return complex(out) if np.ndim(out) == 0 else out


def model_heat_kernel(Z, Zp, u, spec: ModelSpectrum):
    """Mehler kernel exp(-u Q_0)(Z, Z') of the model operator."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("u must be positive")
    Z, Zp = _pairs(Z, spec), _pairs(Zp, spec)
    a = np.asarray(spec.a)
    ua = u[..., None] * a
    dist2 = np.sum((Z - Zp) ** 2, axis=-1)
    coth = 1.0 / np.tanh(ua)
    pref = np.prod(a / TWO_PI / -np.expm1(-2.0 * ua), axis=-1)
    expo = np.sum(-0.25 * a * coth * dist2 - 0.5j * a * _skew(Z, Zp), axis=-1)
    out = pref * np.exp(expo)
    return complex(out) if np.ndim(out) == 0 else out


def b0u(u, spec: ModelSpectrum):
    """Diagonal heat coefficient prod a_j/2pi / (1 - exp(-2 u a_j))."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("u must be positive")
    a = np.asarray(spec.a)
    out = np.prod(a / TWO_PI / -np.expm1(-2.0 * u[..., None] * a), axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class UniformGrid:
    """Square-cell grid on the plane; fields are indexed f[i, j] at (x[i], y[j])."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def square(cls, half_width: float, h: float) -> "UniformGrid":
        m = int(round(half_width / h))
        pts = h * np.arange(-m, m + 1)
        return cls(pts, pts.copy())

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")


def _coarseness(f: np.ndarray) -> float:
    """Ratio of fourth to second differences; O(h^2) on resolved fields."""
    worst = 0.0
    scale = np.max(np.abs(f))
    for axis in (0, 1):
        d2 = np.diff(f, 2, axis=axis)
        m2 = np.max(np.abs(d2)) if d2.size else 0.0
        if m2 <= 1e-13 * max(scale, 1e-300):
            continue
        d4 = np.diff(f, 4, axis=axis)
        worst = max(worst, float(np.max(np.abs(d4)) / m2))
    return worst


def q0_apply(f, grid: UniformGrid, spec: ModelSpectrum, check: bool = True) -> np.ndarray:
    """Second-order finite-difference application of Q_0 (n = 1).

    Returns an array shaped like ``f`` with NaN on the boundary ring.
    """
    if spec.n != 1:
        raise ValueError("q0_apply is implemented for n = 1")
    f = np.asarray(f)
    h = grid.h
    if check:
        ratio = _coarseness(f)
        if ratio > 0.25:
            raise GridTooCoarse(f"field not resolved on the grid (difference ratio {ratio:.2f})")
    a = spec.a[0]
    X, Y = grid.mesh()
    c = f[1:-1, 1:-1]
    lap = (f[2:, 1:-1] + f[:-2, 1:-1] + f[1:-1, 2:] + f[1:-1, :-2] - 4.0 * c) / h ** 2
    fx = (f[2:, 1:-1] - f[:-2, 1:-1]) / (2.0 * h)
    fy = (f[1:-1, 2:] - f[1:-1, :-2]) / (2.0 * h)
    x, y = X[1:-1, 1:-1], Y[1:-1, 1:-1]
    out = np.full(f.shape, np.nan, dtype=np.result_type(f, complex))
    out[1:-1, 1:-1] = -lap + (0.25 * a * a * (x * x + y * y) - a) * c + 1j * a * (x * fy - y * fx)
    return out


def q2_bracket(u1, curv: CurvatureScalars, r2):
    """Polynomial factor of Q_2 applied to exp(-pi |Z|^2 / (2 tanh(2 pi u1)))."""
    K, rE = curv.K, curv.rE
    coth = 1.0 / np.tanh(TWO_PI * np.asarray(u1, dtype=float))
    return (0.5 * math.pi * rE * r2 + (math.pi ** 2 / 6.0) * K * r2 * r2
            - (math.pi / 3.0) * K * coth * r2 - 0.5 * rE)


def q2_apply_gaussian(u1, curv: CurvatureScalars, Z):
    """Q_2 applied to the Gaussian of width set by u1, evaluated at Z (n = 1).

    Curvature contractions are expanded with the constant-curvature tensor;
    the imaginary contributions cancel, so the value is real.
    """
    Z = np.asarray(Z, dtype=float)
    r2 = np.sum(Z * Z, axis=-1)
    coth = 1.0 / np.tanh(TWO_PI * np.asarray(u1, dtype=float))
    out = q2_bracket(u1, curv, r2) * np.exp(-0.5 * math.pi * coth * r2)
    return float(out) if np.ndim(out) == 0 else out


def _fd_derivatives(f, Z, h):
    """Gradient and Hessian of f at Z by fourth-order central differences."""
    Z = np.asarray(Z, dtype=float)
    E = np.eye(2)
    grad = np.zeros(2, dtype=complex)
    hess = np.zeros((2, 2), dtype=complex)
    f0 = f(Z)
    for i in range(2):
        e = E[i] * h
        fp1, fm1, fp2, fm2 = f(Z + e), f(Z - e), f(Z + 2 * e), f(Z - 2 * e)
        grad[i] = (8 * (fp1 - fm1) - (fp2 - fm2)) / (12 * h)
        hess[i, i] = (16 * (fp1 + fm1) - (fp2 + fm2) - 30 * f0) / (12 * h * h)
    ei, ej = E[0] * h, E[1] * h

    def mixed(s):
        return (f(Z + s * ei + s * ej) - f(Z + s * ei - s * ej)
                - f(Z - s * ei + s * ej) + f(Z - s * ei - s * ej)) / (4 * s * s * h * h)

    hess[0, 1] = hess[1, 0] = (4 * mixed(1) - mixed(2)) / 3
    return f0, grad, hess


def q2_apply_fd(f, curv: CurvatureScalars, Z, h: float = 1e-3):
    """Apply Q_2 to a callable ``f`` at ``Z``, term by term, with finite differences.

    Independent of :func:`q2_apply_gaussian`: every curvature contraction
    is formed from the tensors of ``curv`` rather than from closed forms.
    """
    Z = np.asarray(Z, dtype=float)
    e = np.eye(2)
    JZ = _J(Z)
    f0, grad, hess = _fd_derivatives(f, Z, h)
    R = curv.R
    first = 0j
    for j in range(2):
        coef = (2.0 / 3.0) * sum(np.dot(R(Z, e[i], e[i]), e[j]) for i in range(2)) \
            - 0.5j * math.pi * np.dot(R(Z, JZ, Z), e[j]) - curv.RE(Z, e[j])
        first += coef * grad[j]
    zeroth = -1j * sum(0.5 * curv.RE(e[j], _J(e[j])) + 0.5 * math.pi * np.dot(R(Z, e[j], Z), _J(e[j]))
                       for j in range(2))
    zeroth += 1j * math.pi * curv.RE(Z, JZ) - (math.pi ** 2 / 6.0) * np.dot(R(Z, JZ, Z), JZ)
    second = sum(np.dot(R(Z, e[i], Z), e[j]) * hess[i, j] for i in range(2) for j in range(2)) / 3.0
    return complex(first + zeroth * f0 + second)


@lru_cache(maxsize=None)
def gauss_hermite_2d(order: int):
    """Tensor Gauss-Hermite rule for integrals against exp(-|xi|^2) on R^2."""
    x, w = np.polynomial.hermite.hermgauss(order)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=-1), np.outer(w, w).ravel()


def plane_rule(half_width: float = 8.0, n: int = 241):
    """Trapezoid rule on [-L, L]^2; spectrally accurate for Gaussian integrands."""
    t = np.linspace(-half_width, half_width, n)
    h = t[1] - t[0]
    X, Y = np.meshgrid(t, t, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=-1), np.full(X.size, h * h)


def _inner_plane(u1, u, curv, order):
    # Gaussian exp(-gamma |Z|^2) collects both heat factors
    c1 = 1.0 / np.tanh(TWO_PI * u1)
    c2 = 1.0 / np.tanh(TWO_PI * (u - u1))
    gamma = 0.5 * math.pi * (c1 + c2)
    xi, w = gauss_hermite_2d(order)
    Z = xi[None, :, :] / np.sqrt(gamma)[:, None, None]
    r2 = np.sum(xi * xi, axis=-1)
    vals = q2_apply_gaussian(u1[:, None], curv, Z) * np.exp(-0.5 * math.pi * c2[:, None] * np.sum(Z * Z, axis=-1))
    vals = vals * np.exp(r2)[None, :]
    return (vals @ w) / gamma


def j2u_volterra(u: float, curv: CurvatureScalars, tol: float = 1e-8, max_order: int = 1024) -> float:
    """Second Volterra term at the origin by direct quadrature (n = 1).

    Outer Gauss-Legendre rule in u1 on [0, u], inner tensor Gauss-Hermite
    rule on the plane; both orders double until successive values agree
    to ``tol`` (relative, absolute near zero).
    """
    u = float(u)
    if not 0.0 < u <= 8.0:
        raise ValueError("j2u_volterra needs 0 < u <= 8")

    def outer(n_outer, n_inner):
        x, w = np.polynomial.legendre.leggauss(n_outer)
        u1 = 0.5 * u * (x + 1.0)
        pref = 1.0 / (-np.expm1(-2.0 * TWO_PI * u1) * -np.expm1(-2.0 * TWO_PI * (u - u1)))
        inner = _inner_plane(u1, u, curv, n_inner)
        return -0.5 * u * float(np.sum(w * pref * inner))

    n_inner = 4
    prev = outer(16, n_inner)
    while True:
        n_inner *= 2
        cur = outer(16, n_inner)
        if abs(cur - prev) <= tol * max(abs(cur), 1.0):
            break
        if n_inner >= 128:
            raise QuadratureDiverged("plane quadrature did not settle")
        prev = cur
    n_outer = 16
    prev = cur
    while True:
        n_outer *= 2
        cur = outer(n_outer, n_inner)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-300) or abs(cur - prev) <= 1e-14:
            return cur
        if n_outer >= max_order:
            raise QuadratureDiverged(f"u1 quadrature did not settle by order {n_outer}")
        prev = cur


# Taylor coefficients (powers u^0 .. u^12) of the two u1-integrals
#   E(u) = int_0^u (c(u1) - 1/2) du1,  X(u) = int_0^u (c/tanh(2 pi u1) - 2 c^2) du1
_PI = math.pi
_E_SERIES = np.array([0.0, -0.5, _PI / 3, 0.0, -4 * _PI ** 3 / 45, 0.0, 32 * _PI ** 5 / 945, 0.0,
                      -64 * _PI ** 7 / 4725, 0.0, 512 * _PI ** 9 / 93555, 0.0,
                      -1415168 * _PI ** 11 / 638512875])
_X_SERIES = np.array([0.0, 0.5, 0.0, -4 * _PI ** 2 / 15, 0.0, 16 * _PI ** 4 / 105, 0.0,
                      -128 * _PI ** 6 / 1575, 0.0, 256 * _PI ** 8 / 6237, 0.0,
                      -1415168 * _PI ** 10 / 70945875, 0.0])


def _ex_integrals(u: float):
    if u < 0.01:
        return (np.polynomial.polynomial.polyval(u, _E_SERIES),
                np.polynomial.polynomial.polyval(u, _X_SERIES))
    x = TWO_PI * u
    coth = 1.0 / math.tanh(x)
    E = (coth - 1.0) * u / 2.0 - 1.0 / (4.0 * _PI)
    X = u / 2.0 - u * coth ** 2 / 2.0 - (2.0 / math.sinh(x) ** 2) * (-3.0 * math.sinh(2 * x) / (32 * _PI) + u / 8.0)
    return E, X


def j2u_closed(u: float, curv: CurvatureScalars, n: int = 1) -> float:
    """Closed form of the second Volterra term at the origin.

    J = (-E(u) r^E + X(u) r^X / 3) / (1 - exp(-4 pi u))^n, with E and X the
    u1-integrals above.  Small u uses the Taylor series; large u a rewrite
    in eps = exp(-4 pi u) free of overflowing hyperbolic functions.
    """
    u = float(u)
    if not u > 0:
        raise ValueError("u must be positive")
    D = -math.expm1(-2.0 * TWO_PI * u)
    if u > 5.0:
        eps = math.exp(-2.0 * TWO_PI * u)
        coth = 1.0 / math.tanh(TWO_PI * u)
        num = curv.rE * (1.0 / (4 * _PI) - u * eps / D) + curv.rX * (coth / (8 * _PI) - u * eps / D ** 2)
        return num / D ** n
    E, X = _ex_integrals(u)
    return (-E * curv.rE + X * curv.rX / 3.0) / D ** n


def j2u_deviation(u: float, curv: CurvatureScalars, n: int = 1) -> float:
    """j2u_closed(u) - b1 evaluated without cancellation."""
    u = float(u)
    eps = math.exp(-2.0 * TWO_PI * u)
    D = -math.expm1(-2.0 * TWO_PI * u)
    one_minus_Dn = -math.expm1(n * math.log1p(-eps))
    inv_minus_1 = one_minus_Dn / D ** n                      # 1/D^n - 1
    dev_E = inv_minus_1 / (4 * _PI) - (u * eps / D) / D ** n
    dev_X = inv_minus_1 / (8 * _PI) + (2 * eps / (8 * _PI * D) - u * eps / D ** 2) / D ** n
    return curv.rE * dev_E + curv.rX * dev_X


def b1(curv: CurvatureScalars) -> float:
    """Second diagonal coefficient (r^E + r^X / 2) / 4 pi."""
    return (curv.rE + 0.5 * curv.rX) / (4.0 * math.pi)
