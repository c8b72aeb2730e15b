"""Model Kähler curves: metric, curvature, volume density and distances.

Every model carries a Kähler form normalized to total area one, so that
the polarizing line bundle L has degree one.  The CP^1 family uses the
affine chart z together with the opposite chart w = 1/z; the perturbation
of the Fubini-Study potential is the rotation-invariant bump

    phi(z) = a * s * (1 - s),      s = |z|^2 / (1 + |z|^2),

which is a smooth function on all of CP^1 and leaves the area unchanged.
In terms of s the area form reads

    omega = (1 - s)^2 (1 + a q(s)) / pi  dx ^ dy,   q(s) = 1 - 6 s + 6 s^2,

so omega is positive exactly when -1 < a < 2.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import BadModulus, NonPositiveForm, OutOfChart, WrongModel

__all__ = [
    "ModelKind",
    "KaehlerModel",
    "MetricData",
    "CurvatureData",
    "build_model",
    "metric_at",
    "scalar_curvature",
    "geodesic_distance",
    "radial_distance",
    "point_at_distance",
    "injectivity_scale",
    "COMPLEX_STRUCTURE",
]

COMPLEX_STRUCTURE = np.array([[0.0, -1.0], [1.0, 0.0]])

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


class ModelKind(str, enum.Enum):
    FUBINI_STUDY = "FubiniStudyCP1"
    PERTURBED = "PerturbedCP1"
    FLAT_TORUS = "FlatTorus"
    BARGMANN_FOCK = "BargmannFock"
    CYCLIC_QUOTIENT = "CyclicQuotientCP1"


_ALIASES = {
    "fs": ModelKind.FUBINI_STUDY,
    "fubini-study": ModelKind.FUBINI_STUDY,
    "perturbed": ModelKind.PERTURBED,
    "torus": ModelKind.FLAT_TORUS,
    "bargmann-fock": ModelKind.BARGMANN_FOCK,
    "fock": ModelKind.BARGMANN_FOCK,
    "quotient": ModelKind.CYCLIC_QUOTIENT,
    "orbifold": ModelKind.CYCLIC_QUOTIENT,
}


def _parse_kind(kind) -> ModelKind:
    if isinstance(kind, ModelKind):
        return kind
    try:
        return ModelKind(kind)
    except ValueError:
        pass
    try:
        return _ALIASES[str(kind).lower()]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


@dataclass(frozen=True)
class KaehlerModel:
    """A validated model curve.

    ``potential_perturbation`` is the amplitude ``a`` of the bump family (CP^1 kinds),
    ``tau`` the torus modulus, ``twist_degree`` the degree m of E = O(m) and
    ``quotient_order`` the order k of the rotation group z -> exp(2 pi i / k) z.
    """

    kind: ModelKind
    potential_perturbation: float = 0.0
    torus_modulus: complex = 1j
    twist_degree: int = 0
    quotient_order: int = 1

    @property
    def perturbation(self) -> float:
        return self.potential_perturbation

    @property
    def is_cp1(self) -> bool:
        return self.kind in (ModelKind.FUBINI_STUDY, ModelKind.PERTURBED, ModelKind.CYCLIC_QUOTIENT)

    @property
    def is_compact(self) -> bool:
        return self.kind is not ModelKind.BARGMANN_FOCK

    @property
    def rotation_invariant(self) -> bool:
        return self.is_cp1 or self.kind is ModelKind.BARGMANN_FOCK

    @property
    def label(self) -> str:
        parts = [self.kind.value]
        if self.is_cp1 and self.perturbation:
            parts.append(f"a={self.perturbation:g}")
        if self.twist_degree:
            parts.append(f"m={self.twist_degree}")
        if self.kind is ModelKind.FLAT_TORUS:
            parts.append(f"tau={self.torus_modulus.real:g}{self.torus_modulus.imag:+g}j")
        if self.kind is ModelKind.CYCLIC_QUOTIENT:
            parts.append(f"k={self.quotient_order}")
        return ",".join(parts)


@dataclass(frozen=True)
class MetricData:
    g: np.ndarray
    omega_density: float
    kappa: float
    J: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        """Matrix of the Kähler form: omega(u, v) = u^T omega v."""
        h = self.omega_density
        return np.array([[0.0, h], [-h, 0.0]])


@dataclass(frozen=True)
class CurvatureData:
    rX: float
    rE: float


def _bump_q(s):
    return 1.0 - 6.0 * s + 6.0 * s * s


def build_model(kind, *, perturbation: float = 0.0, torus_modulus: complex = 1j,
                twist_degree: int = 0, quotient_order: int | None = None) -> KaehlerModel:
    """Validate parameters and return a :class:`KaehlerModel`.

    The perturbation amplitude is meant to stay in [-0.3, 0.3]; anything
    for which the area form fails to be positive on a coarse grid raises
    :class:`NonPositiveForm`.
    """
    kind = _parse_kind(kind)
    if np.ndim(perturbation):
        # the bump family has a single parameter
        (perturbation,) = np.ravel(perturbation)
    a = float(perturbation)
    m = int(twist_degree)
    if m < 0:
        raise ValueError("twist_degree must be >= 0")
    tau = complex(torus_modulus)
    k = 1
    if kind is ModelKind.FUBINI_STUDY and a != 0.0:
        raise WrongModel("FubiniStudyCP1 carries no perturbation; use PerturbedCP1")
    if kind is ModelKind.FLAT_TORUS:
        if not tau.imag > 0:
            raise BadModulus(f"Im tau must be positive, got {tau}")
        if m or a:
            raise WrongModel("FlatTorus takes neither a twist nor a perturbation")
    if kind is ModelKind.BARGMANN_FOCK and (m or a):
        raise WrongModel("BargmannFock takes neither a twist nor a perturbation")
    if kind is ModelKind.CYCLIC_QUOTIENT:
        if quotient_order is None or int(quotient_order) < 2:
            raise ValueError("CyclicQuotientCP1 needs quotient_order >= 2")
        k = int(quotient_order)
    elif quotient_order not in (None, 1):
        raise WrongModel("quotient_order only applies to CyclicQuotientCP1")
    if kind in (ModelKind.PERTURBED, ModelKind.CYCLIC_QUOTIENT):
        s = np.linspace(0.0, 1.0, 65)
        if not np.all(1.0 + a * _bump_q(s) > 0.0):
            raise NonPositiveForm(f"perturbation amplitude {a} destroys positivity of omega")
    return KaehlerModel(kind=kind, potential_perturbation=a, torus_modulus=tau, twist_degree=m,
                        quotient_order=k)


def _check_point(z, chart: str) -> complex:
    if chart not in ("z", "w"):
        raise ValueError(f"chart must be 'z' or 'w', got {chart!r}")
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise OutOfChart(f"{z} is not in the {chart}-chart; switch to the opposite chart")
    return z


def _chart_for(model: KaehlerModel, chart: str) -> None:
    if chart == "w" and not model.is_cp1:
        raise OutOfChart(f"{model.kind.value} has a single chart")


def cp1_s(z):
    """Return s = |z|^2/(1+|z|^2) together with log s and log(1 - s).

    Both logarithms are computed from |z|^2 directly so they stay accurate
    near either pole.
    """
    t = np.abs(np.asarray(z)) ** 2
    with np.errstate(divide="ignore"):
        log1ms = -np.log1p(t)
        logs = np.log(t) + log1ms
    return t / (1.0 + t), logs, log1ms


def _omega_density(model: KaehlerModel, z: complex) -> float:
    if model.is_cp1:
        s = abs(z) ** 2 / (1.0 + abs(z) ** 2)
        return (1.0 - s) ** 2 * (1.0 + model.perturbation * _bump_q(s)) / math.pi
    if model.kind is ModelKind.FLAT_TORUS:
        return 1.0 / model.torus_modulus.imag
    return 1.0


def metric_at(model: KaehlerModel, z, chart: str = "z") -> MetricData:
    """Metric data at a chart point.

    ``kappa`` is the volume density of geodesic normal coordinates centred
    at the origin of the chart in use (a pole for the CP^1 kinds), i.e. the
    ratio of the Riemannian area element to the Euclidean one in those
    coordinates.
    """
    z = _check_point(z, chart)
    _chart_for(model, chart)
    h = _omega_density(model, z)
    if model.is_cp1:
        r = abs(z)
        if r < 1e-7:
            kappa = 1.0
        else:
            kappa = math.sqrt(h) * r / radial_distance(model, r)
    else:
        kappa = 1.0
    return MetricData(g=h * np.eye(2), omega_density=h, kappa=kappa, J=COMPLEX_STRUCTURE.copy())


def _perturbed_rX(a: float, s):
    q = _bump_q(s)
    dq = 12.0 * s - 6.0
    den = 1.0 + a * q
    # G = a s (1-s) q' / (1 + a q);  r^X = 4 pi (2 - G') / (1 + a q)
    dG = a * ((1.0 - 2.0 * s) * dq + 12.0 * s * (1.0 - s)) / den \
        - a * a * s * (1.0 - s) * dq * dq / den ** 2
    return 4.0 * math.pi * (2.0 - dG) / den


def scalar_curvature(model: KaehlerModel, z, chart: str = "z") -> CurvatureData:
    """Scalar curvature r^X and the twisting-curvature scalar r^E.

    Here r^X = 2K with K the Gauss curvature of g = omega(., J.), and
    r^E = sqrt(-1) sum_i R^E(e_i, J e_i) for an orthonormal frame, which
    for E = O(m) with its Fubini-Study fiber metric equals
    4 pi m / (1 + a q(s)).
    """
    z = _check_point(z, chart)
    _chart_for(model, chart)
    if not model.is_cp1:
        return CurvatureData(rX=0.0, rE=0.0)
    s = abs(z) ** 2 / (1.0 + abs(z) ** 2)
    a = model.perturbation
    rX = float(_perturbed_rX(a, s))
    rE = 4.0 * math.pi * model.twist_degree / (1.0 + a * _bump_q(s))
    return CurvatureData(rX=rX, rE=rE)


def radial_distance(model: KaehlerModel, r):
    """Distance from the chart origin to any point with |z| = r (CP^1 kinds).

    Along a meridian the arc length is (1/sqrt(pi)) * integral of
    sqrt(1 + a q(sin^2 phi)) d phi over [0, arctan r].
    """
    if not model.is_cp1:
        raise WrongModel("radial_distance is defined for the CP^1 kinds")
    r = np.asarray(r, dtype=float)
    phi_end = np.where(np.isinf(r), 0.5 * math.pi, np.arctan(r))
    a = model.perturbation
    if a == 0.0:
        out = phi_end / math.sqrt(math.pi)
    else:
        phi = 0.5 * phi_end[..., None] * (_GL_NODES + 1.0)
        integrand = np.sqrt(1.0 + a * _bump_q(np.sin(phi) ** 2))
        out = 0.5 * phi_end * (integrand @ _GL_WEIGHTS) / math.sqrt(math.pi)
    return float(out) if out.ndim == 0 else out


def injectivity_scale(model: KaehlerModel) -> float:
    """A conservative radius inside which geodesic normal coordinates are valid."""
    if model.is_cp1:
        # pole-to-pole length; the round sphere of area 1 gives sqrt(pi)/2
        return float(radial_distance(model, np.inf))
    if model.kind is ModelKind.FLAT_TORUS:
        tau = model.torus_modulus
        shortest = min(abs(m + n * tau) for m in range(-2, 3) for n in range(-2, 3) if (m, n) != (0, 0))
        return 0.5 * shortest / math.sqrt(tau.imag)
    return math.inf


def _torus_distance(tau: complex, x: complex, y: complex) -> float:
    d = y - x
    # reduce into the fundamental parallelogram, then scan neighbours
    n0 = math.floor(d.imag / tau.imag)
    d -= n0 * tau
    d -= math.floor(d.real)
    span = 2 + int(math.ceil(abs(tau.real)))
    best = min(abs(d + m + n * tau) for m in range(-span, span + 1) for n in range(-2, 3))
    return best / math.sqrt(tau.imag)


def _fs_distance(x: complex, y: complex) -> float:
    return math.atan2(abs(x - y), abs(1.0 + x.conjugate() * y)) / math.sqrt(math.pi)


def _fs_geodesic_path(x: complex, y: complex, t: np.ndarray):
    """Round-sphere geodesic from x to y and its velocity, t in [0, 1]."""
    w = (y - x) / (1.0 + x.conjugate() * y)
    theta, phase = math.atan(abs(w)), w / abs(w)
    zeta = np.tan(t * theta) * phase
    dzeta = theta / np.cos(t * theta) ** 2 * phase
    den = 1.0 - x.conjugate() * zeta
    return (x + zeta) / den, (1.0 + abs(x) ** 2) / den ** 2 * dzeta


class _PathFunctional:
    """Length of base path + t(1-t) * sum_k c_k T_k(2t-1), with gradient."""

    def __init__(self, model: KaehlerModel, x: complex, y: complex, n_modes: int):
        self.a = model.perturbation
        t = 0.5 * (_GL_NODES + 1.0)
        self.w = 0.5 * _GL_WEIGHTS
        self.base, self.dbase = _fs_geodesic_path(x, y, t)
        cheb = np.polynomial.chebyshev
        eye = np.eye(n_modes)
        T = np.stack([cheb.chebval(2 * t - 1, eye[k]) for k in range(n_modes)], axis=1)
        dT = np.stack([2 * cheb.chebval(2 * t - 1, cheb.chebder(eye[k])) for k in range(n_modes)], axis=1)
        bump = (t * (1 - t))[:, None]
        self.phi = bump * T
        self.dphi = (1 - 2 * t)[:, None] * T + bump * dT
        self.n = n_modes

    def __call__(self, coeffs):
        c = coeffs[: self.n] + 1j * coeffs[self.n:]
        gam = self.base + self.phi @ c
        dgam = self.dbase + self.dphi @ c
        tt = np.abs(gam) ** 2
        s = tt / (1.0 + tt)
        q = _bump_q(s)
        h = (1.0 - s) ** 2 * (1.0 + self.a * q) / math.pi
        sq = np.sqrt(h)
        speed = np.abs(dgam)
        length = float((sq * speed) @ self.w)
        dh_ds = (-2.0 * (1.0 - s) * (1.0 + self.a * q) + (1.0 - s) ** 2 * self.a * (12.0 * s - 6.0)) / math.pi
        dsq_dt = dh_ds * (1.0 - s) ** 2 / (2.0 * sq)
        # derivative of |gamma|^2 along phi_k is 2 Re(conj(gamma) phi_k)
        pos = (self.w * dsq_dt * speed * 2.0)[:, None]
        vel = (self.w * sq / speed)[:, None]
        g_re = np.sum(pos * (np.conj(gam)[:, None] * self.phi).real
                      + vel * (np.conj(dgam)[:, None] * self.dphi).real, axis=0)
        g_im = np.sum(pos * (np.conj(gam)[:, None] * 1j * self.phi).real
                      + vel * (np.conj(dgam)[:, None] * 1j * self.dphi).real, axis=0)
        return length, np.concatenate([g_re, g_im])


def _geodesic_by_path(model: KaehlerModel, x: complex, y: complex, n_modes: int = 14) -> float:
    fun = _PathFunctional(model, x, y, n_modes)
    res = optimize.minimize(fun, np.zeros(2 * n_modes), jac=True, method="BFGS",
                            options={"gtol": 1e-13, "maxiter": 5000})
    return float(res.fun)


def _cp1_distance(model: KaehlerModel, x: complex, y: complex) -> float:
    if x == y:
        return 0.0
    a = model.perturbation
    if a == 0.0:
        return _fs_distance(x, y)
    rx, ry = abs(x), abs(y)
    if rx == 0.0 or ry == 0.0 or abs(x * y.conjugate()) - (x * y.conjugate()).real <= 1e-15 * rx * ry:
        # same meridian (or one point at the pole): meridians are geodesics
        return abs(radial_distance(model, rx) - radial_distance(model, ry))
    if abs(x * y.conjugate()) + (x * y.conjugate()).real <= 1e-15 * rx * ry:
        # opposite meridians: shortest route runs over one of the poles
        total = radial_distance(model, np.inf)
        dx, dy = radial_distance(model, rx), radial_distance(model, ry)
        return min(dx + dy, 2.0 * total - dx - dy)
    # fixed argument order makes the solver result exactly symmetric
    if (abs(x), x.real, x.imag) > (abs(y), y.real, y.imag):
        x, y = y, x
    return _geodesic_by_path(model, x, y)


def geodesic_distance(model: KaehlerModel, x, y) -> float:
    """Riemannian distance between two z-chart points.

    Closed forms on the round sphere and the flat models; meridian arc
    length on perturbed spheres when the points share a meridian; otherwise
    a minimizing path in the chart (polynomial deformation of the round
    geodesic), converged to about 1e-10.  On the quotient the
    distance is the minimum over the orbit of ``x``.
    """
    x = _check_point(x, "z")
    y = _check_point(y, "z")
    if model.kind is ModelKind.FLAT_TORUS:
        return _torus_distance(model.torus_modulus, x, y)
    if model.kind is ModelKind.BARGMANN_FOCK:
        return abs(x - y)
    if model.kind is ModelKind.CYCLIC_QUOTIENT:
        k = model.quotient_order
        return min(_cp1_distance(model, x * np.exp(2j * np.pi * l / k), y) for l in range(k))
    return _cp1_distance(model, x, y)


def point_at_distance(model: KaehlerModel, x, direction, d: float) -> complex:
    """Chart point at geodesic distance ``d`` from ``x`` along ``direction``.

    Supported: any start on the round sphere (via the isometry of CP^1
    carrying 0 to x), meridians on the perturbed spheres, straight lines on
    the flat models.
    """
    x = _check_point(x, "z")
    direction = complex(direction)
    if direction == 0:
        raise ValueError("direction must be nonzero")
    u = direction / abs(direction)
    if model.kind is ModelKind.FLAT_TORUS:
        return x + d * math.sqrt(model.torus_modulus.imag) * u
    if model.kind is ModelKind.BARGMANN_FOCK:
        return x + d * u
    if model.perturbation == 0.0:
        if d * math.sqrt(math.pi) >= 0.5 * math.pi:
            raise ValueError("distance reaches the antipode")
        w = math.tan(d * math.sqrt(math.pi)) * u
        # Moebius isometry of the round sphere sending 0 to x; at 0 its
        # differential is a positive multiple of the identity
        return (x + w) / (1.0 - x.conjugate() * w)
    if x != 0 and abs((u * x.conjugate()).imag) > 1e-12 * abs(x):
        raise ValueError("perturbed spheres support only meridian directions away from the pole")
    if x == 0:
        ray, target = u, d
    else:
        ray = x / abs(x)
        target = radial_distance(model, abs(x)) + (d if (u * x.conjugate()).real > 0 else -d)
        if target < 0:
            # passes over the pole onto the opposite ray
            ray, target = -ray, -target
    total = radial_distance(model, np.inf)
    if target >= total:
        raise ValueError("distance leaves the chart along this meridian")
    if target == 0.0:
        return 0j
    if target <= radial_distance(model, 1.0):
        r = optimize.brentq(lambda r: radial_distance(model, r) - target, 0.0, 1.0, xtol=1e-15)
    else:
        v = optimize.brentq(lambda v: radial_distance(model, 1.0 / v) - target, 1e-300, 1.0, xtol=1e-15)
        r = 1.0 / v
    return r * ray
