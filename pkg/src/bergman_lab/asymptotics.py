"""Coefficient extraction across p, decay scans and orbifold profiles."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg

from .bergman import (bergman_diagonal, bergman_offdiag, build_grid, default_order, gram,
                      group_averaged_kernel, orbifold_kernel, trace_integral)
from .errors import BelowFloor, GridTooCoarse, IllConditioned, InsufficientSamples, WrongModel
from .geometry import (KaehlerModel, ModelKind, _bump_q, injectivity_scale,
                       point_at_distance, radial_distance, scalar_curvature)
from .model import CurvatureScalars, b1
from .sections import basis_cp1, basis_quotient, basis_torus

__all__ = [
    "ExpansionFit",
    "B1Check",
    "DecayScan",
    "OrbifoldReport",
    "PullbackReport",
    "DEFAULT_P_RANGE",
    "fit_expansion",
    "kernel_setup",
    "diagonal_values",
    "check_b1",
    "offdiag_decay_scan",
    "orbifold_profile",
    "smooth_locus_comparison",
    "fubini_study_pullback",
    "noise_floor",
]

DEFAULT_P_RANGE = (8, 12, 16, 24, 32, 48, 64, 96, 128)
COND_FLAG = 1e10


@dataclass
class ExpansionFit:
    """Least-squares fit of value(p) = sum_r c_r p^(n-r) (+ c_half p^(n-1/2))."""

    base_point: object
    p_list: np.ndarray
    coeffs: np.ndarray
    stderr: np.ndarray
    residual_norm: float
    condition: float
    n: int
    half_coeff: float | None = None
    half_stderr: float | None = None

    @property
    def ill_conditioned(self) -> bool:
        return self.condition > COND_FLAG

    @property
    def b0(self) -> float:
        return float(self.coeffs[0])

    @property
    def b1(self) -> float:
        return float(self.coeffs[1])

    def parity_ratio(self) -> float:
        """|c_half| in units of its standard error."""
        if self.half_coeff is None:
            raise ValueError("fit was made without the half-integer probe")
        return abs(self.half_coeff) / self.half_stderr


def fit_expansion(samples, n: int = 1, k: int = 2, half_probe: bool = False,
                  base_point=None, data_noise: float = 1e-13, pinned=None) -> ExpansionFit:
    """Fit expansion coefficients from ``(p, value)`` pairs.

    The fit runs in x = 1/p on value / p^n with unit-norm columns and a QR
    solve.  ``pinned`` optionally fixes leading coefficients (a sequence of
    known c_0, c_1, ...); they are subtracted before fitting and reported
    back with zero standard error.

    The standard errors use the residual variance with a floor of
    ``data_noise`` times the largest scaled value, which stands for the
    rounding level of the samples.  Fits whose column-scaled design has
    condition above 1e10 are flagged (and warned about) but returned.
    """
    pairs = sorted((int(p), float(v)) for p, v in samples)
    p = np.array([q for q, _ in pairs], dtype=float)
    y = np.array([v for _, v in pairs]) / p ** n
    pinned = () if pinned is None else tuple(float(c) for c in pinned)
    n_free = k + 1 - len(pinned) + (1 if half_probe else 0)
    need = k + 2 + (1 if half_probe else 0) - len(pinned)
    if np.unique(p).size < need:
        raise InsufficientSamples(f"need >= {need} distinct p-values for k = {k}, got {np.unique(p).size}")
    x = 1.0 / p
    for r, c in enumerate(pinned):
        y = y - c * x ** r
    cols = [x ** r for r in range(len(pinned), k + 1)]
    if half_probe:
        cols.append(np.sqrt(x))
    A = np.stack(cols, axis=1)
    norms = np.linalg.norm(A, axis=0)
    As = A / norms
    Q, R = linalg.qr(As, mode="economic")
    sol = linalg.solve_triangular(R, Q.T @ y)
    coef = sol / norms
    res = y - A @ coef
    dof = p.size - n_free
    sigma = math.sqrt(float(res @ res) / dof) if dof > 0 else 0.0
    sigma = max(sigma, data_noise * float(np.max(np.abs(y))))
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    se = sigma * np.linalg.norm(Rinv, axis=1) / norms
    cond = float(np.linalg.cond(As))
    if cond > COND_FLAG:
        warnings.warn(f"expansion fit design has condition {cond:.3g}", RuntimeWarning, stacklevel=2)
    m = k + 1 - len(pinned)
    coeffs = np.concatenate([pinned, coef[:m]])
    stderr = np.concatenate([np.zeros(len(pinned)), se[:m]])
    fit = ExpansionFit(base_point, p.astype(int), coeffs, stderr, float(np.linalg.norm(res)), cond, n)
    if half_probe:
        fit.half_coeff, fit.half_stderr = float(coef[-1]), float(se[-1])
    return fit


def require_well_conditioned(fit: ExpansionFit) -> ExpansionFit:
    if fit.ill_conditioned:
        raise IllConditioned(f"design condition {fit.condition:.3g} exceeds {COND_FLAG:g}")
    return fit


@lru_cache(maxsize=128)
def kernel_setup(model: KaehlerModel, p: int, upstairs: bool = False):
    """Basis, grid and factorization at default order (cached per model, p)."""
    if model.kind is ModelKind.FLAT_TORUS:
        basis = basis_torus(model, p)
    elif model.kind is ModelKind.CYCLIC_QUOTIENT and not upstairs:
        basis = basis_quotient(model, p)
    elif model.is_cp1:
        basis = basis_cp1(model, p)
    else:
        raise WrongModel(f"no section space for {model.kind.value}")
    grid = build_grid(model, default_order(model, p))
    return basis, grid, gram(basis, grid)


@lru_cache(maxsize=128)
def noise_floor(model: KaehlerModel, p: int) -> float:
    """Relative noise level of kernel values, from the trace identity.

    The trace is re-evaluated on a finer independent grid; the relative
    mismatch with dim H^0 (at least 1e-16) estimates quadrature noise.
    """
    basis, _, fact = kernel_setup(model, p)
    fine = build_grid(model, default_order(model, p) + 24)
    rel = abs(trace_integral(basis, fact, fine) / basis.dim - 1.0)
    return max(rel, 1e-16)


def diagonal_values(model: KaehlerModel, p: int, points) -> np.ndarray:
    basis, _, fact = kernel_setup(model, p)
    return np.atleast_1d(bergman_diagonal(basis, fact, np.asarray(points, dtype=complex)))


def _curvature_scalars(model, z) -> CurvatureScalars:
    c = scalar_curvature(model, z)
    return CurvatureScalars(c.rX, c.rE)


@dataclass
class B1Check:
    point: complex
    target: float
    fit: ExpansionFit

    @property
    def measured(self) -> float:
        return self.fit.b1

    @property
    def abs_error(self) -> float:
        return abs(self.measured - self.target)

    @property
    def rel_error(self) -> float:
        return self.abs_error / abs(self.target) if self.target else math.inf


def check_b1(model: KaehlerModel, x, p_range=DEFAULT_P_RANGE, k: int = 4,
             half_probe: bool = False) -> list[B1Check]:
    """Fit b1 at each point of ``x`` and compare with the curvature formula.

    Degree k = 4 by default: on perturbed spheres the p^-2 .. p^-4 terms are
    large enough at p ~ 10 that a k = 2 fit biases b1 by several percent.
    """
    pts = np.atleast_1d(np.asarray(x, dtype=complex))
    p_range = tuple(int(p) for p in p_range)
    vals = np.stack([diagonal_values(model, p, pts) for p in p_range])
    out = []
    for i, z in enumerate(pts):
        fit = fit_expansion(zip(p_range, vals[:, i]), n=1, k=k, half_probe=half_probe, base_point=complex(z))
        out.append(B1Check(complex(z), b1(_curvature_scalars(model, z)), fit))
    return out


@dataclass
class DecayScan:
    base_point: complex
    direction: complex
    p: int
    distances: np.ndarray
    log_magnitudes: np.ndarray
    near_exponent: float
    near_target: float
    agmon_exponent: float
    agmon_log_constant: float
    far_mask: np.ndarray
    floor: float
    monotone: bool

    @property
    def near_rel_error(self) -> float:
        return abs(self.near_exponent / self.near_target - 1.0)


def _default_distances(model, x, p):
    near = np.linspace(0.0, 3.0 / math.sqrt(p), 13)
    if model.is_cp1:
        # outward along the meridian, short of the opposite pole
        reach = 0.9 * (radial_distance(model, np.inf) - _dist_from_pole(model, x))
    else:
        reach = 0.95 * injectivity_scale(model)
    far = np.linspace(3.0 / math.sqrt(p), reach, 40)[1:]
    return np.concatenate([near, far])


def _dist_from_pole(model, x):
    return radial_distance(model, abs(x)) if x != 0 else 0.0


def offdiag_decay_scan(model: KaehlerModel, x, p: int, distances=None, direction=None) -> DecayScan:
    """Sample |P_p(x, y)| along a geodesic from ``x`` and fit both zones.

    Near zone d <= 3/sqrt(p): log|P_p| = c0 + c1 d^2 + c2 d^4, reporting c1
    (a pure d^2 fit is biased by the quartic term at the zone edge).
    Far zone: samples above 1e3 times the noise floor, regression of
    log|P_p| - n log p on sqrt(p) d gives the exponent c > 0.
    """
    x = complex(x)
    if direction is None:
        direction = x / abs(x) if x != 0 else 1.0
    direction = complex(direction)
    d = np.asarray(_default_distances(model, x, p) if distances is None else distances, dtype=float)
    if np.any(np.diff(d) <= 0):
        raise ValueError("distances must be strictly increasing")
    basis, _, fact = kernel_setup(model, p)
    ys = np.array([point_at_distance(model, x, direction, float(t)) for t in d])
    mags = np.abs(bergman_offdiag(basis, fact, x, ys))
    Bx = bergman_diagonal(basis, fact, x)
    with np.errstate(divide="ignore"):
        logm = np.log(mags)
    floor = noise_floor(model, p) * Bx
    near = d <= 3.0 / math.sqrt(p) * (1 + 1e-12)
    if near.sum() < 4:
        raise InsufficientSamples("need at least 4 near-zone distances")
    V = np.stack([np.ones(near.sum()), d[near] ** 2, d[near] ** 4], axis=1)
    c_near = np.linalg.lstsq(V, logm[near], rcond=None)[0]
    far = (~near) & (mags > 1e3 * floor)
    if not np.any(~near):
        raise InsufficientSamples("no far-zone distances")
    if not np.any(far):
        raise BelowFloor("all far-zone samples are below the noise floor")
    if far.sum() < 3:
        raise InsufficientSamples("need at least 3 far-zone samples above the floor")
    t = math.sqrt(p) * d[far]
    yv = logm[far] - math.log(p)
    slope, intercept = np.polyfit(t, yv, 1)
    c = -slope
    logC = float(np.max(yv + c * t))
    resolved = mags > 1e-13 * Bx
    monotone = bool(np.all(np.diff(logm[resolved]) < 0))
    return DecayScan(x, direction, p, d, logm, float(c_near[1]), -math.pi * p / 2.0,
                     float(c), logC, far, float(floor), monotone)


def _distance_to_fixed(model, z):
    rho = radial_distance(model, np.abs(z))
    return np.minimum(rho, radial_distance(model, np.inf) - rho)


@dataclass
class OrbifoldReport:
    k: int
    p_values: list
    fixed_ratios: list
    deviations: list
    deviation_ratios: list = field(default_factory=list)     # (p, 4p, ratio)
    monotone_beyond_32: bool = True
    envelope_slope: float = math.nan
    predicted_slope: float = math.nan
    envelope_r2: float = math.nan
    envelope_consistent: bool = True
    identity_residual: float = math.nan


def orbifold_profile(model: KaehlerModel, p_range=None, n_pairs: int = 100, seed: int = 0,
                     envelope_samples: int = 10) -> OrbifoldReport:
    """Fixed-point blow-up, off-fixed-point correction envelope and the
    invariant-basis versus group-averaged identity on a cyclic quotient.

    The correction at z is measured against the smooth upstairs kernel,
    |B^orb(z) / B~(z) - 1|, and its envelope is
    sum over g != 1 of |P~(g^-1 z, z)| / B~(z); for k = 2 the two coincide.
    The envelope is regressed on p d^2 with d the distance to the fixed
    points; the Gaussian profile predicts slope -2 pi sin^2(pi/k).
    """
    if model.kind is not ModelKind.CYCLIC_QUOTIENT:
        raise WrongModel("orbifold_profile needs a CyclicQuotientCP1")
    k, m = model.quotient_order, model.twist_degree
    if p_range is None:
        base = 8 * k if k <= 2 else 6 * k
        p_range = [base * 2 ** i for i in range(4)]
    p_values = sorted(int(p) for p in p_range if (int(p) + m) % k == 0)
    if len(p_values) < 2:
        raise InsufficientSamples("need at least two compatible p-values")
    ratios, devs = [], []
    for p in p_values:
        basis, _, fact = kernel_setup(model, p)
        r = bergman_diagonal(basis, fact, 0.0) / p
        ratios.append(r)
        devs.append(abs(r - k))
    rep = OrbifoldReport(k, p_values, ratios, devs)
    for i, p in enumerate(p_values):
        if 4 * p in p_values:
            j = p_values.index(4 * p)
            rep.deviation_ratios.append((p, 4 * p, devs[j] / devs[i]))
    tail = [dv for p, dv in zip(p_values, devs) if p >= 32]
    rep.monotone_beyond_32 = bool(np.all(np.diff(tail) < 0))

    rep.predicted_slope = -2.0 * math.pi * math.sin(math.pi / k) ** 2
    xs, ys = [], []
    consistent = True
    total = radial_distance(model, np.inf)
    for p in p_values:
        basis, _, fact = kernel_setup(model, p)
        up, _, ufact = kernel_setup(model, p, upstairs=True)
        # p d^2 from 0.1 up to where the envelope reaches about exp(-12)
        pd2 = np.linspace(0.1, 12.0 / abs(rep.predicted_slope), envelope_samples)
        dist = np.sqrt(pd2 / p)
        dist = dist[dist < 0.5 * total]
        z = np.array([point_at_distance(model, 0.0, 1.0, float(t)) for t in dist])
        Bt = bergman_diagonal(up, ufact, z)
        corr = np.abs(bergman_diagonal(basis, fact, z) / Bt - 1.0)
        env = sum(np.abs(bergman_offdiag(up, ufact, z * np.exp(-2j * np.pi * l / k), z))
                  for l in range(1, k)) / Bt
        consistent &= bool(np.all(corr <= env * (1 + 1e-6) + 1e-12))
        xs.append(p * _distance_to_fixed(model, z) ** 2)
        ys.append(np.log(env))
    X, Y = np.concatenate(xs), np.concatenate(ys)
    slope, icpt = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + icpt)
    rep.envelope_slope = float(slope)
    rep.envelope_r2 = float(1.0 - resid @ resid / np.sum((Y - Y.mean()) ** 2))
    rep.envelope_consistent = consistent

    p0 = p_values[0]
    basis, _, fact = kernel_setup(model, p0)
    up, _, ufact = kernel_setup(model, p0, upstairs=True)
    rng = np.random.default_rng(seed)
    pts = _random_sphere_points(rng, 2 * n_pairs)
    xv, yv = pts[:n_pairs], pts[n_pairs:]
    direct = orbifold_kernel(basis, fact, xv, yv)
    avg = group_averaged_kernel(up, ufact, xv, yv, k)
    scale = math.sqrt(max(np.max(bergman_diagonal(basis, fact, xv)), np.max(bergman_diagonal(basis, fact, yv))))
    rep.identity_residual = float(np.max(np.abs(direct - avg)) / scale ** 2)
    return rep


def _random_sphere_points(rng, n):
    """Chart points uniform for the round area form, kept off the point at infinity."""
    s = rng.uniform(0.0, 0.98, n)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    return np.sqrt(s / (1 - s)) * np.exp(1j * theta)


def smooth_locus_comparison(model: KaehlerModel, x, p_values, k: int = 2):
    """Fit the orbifold kernel and the smooth upstairs kernel at ``x``.

    Only p with p d(x, fixed)^2 >= 25 are used, where the group correction
    is far below rounding.  Returns (orbifold fit, smooth fit).
    """
    d = float(_distance_to_fixed(model, abs(complex(x))))
    ps = [int(p) for p in p_values if p * d * d >= 25 and (p + model.twist_degree) % model.quotient_order == 0]
    orb, smooth = [], []
    for p in ps:
        basis, _, fact = kernel_setup(model, p)
        up, _, ufact = kernel_setup(model, p, upstairs=True)
        orb.append((p, bergman_diagonal(basis, fact, x)))
        smooth.append((p, bergman_diagonal(up, ufact, x)))
    return fit_expansion(orb, k=k, base_point=x), fit_expansion(smooth, k=k, base_point=x)


@dataclass
class PullbackReport:
    p: int
    sup_deviation: float
    deviations: np.ndarray
    points: np.ndarray
    charts: np.ndarray
    method: str


def _pullback_points(model, n_radial, n_angle):
    if model.kind is ModelKind.FLAT_TORUS:
        u = (np.arange(n_radial) + 0.5) / n_radial
        v = (np.arange(n_angle) + 0.5) / n_angle
        pts = (u[:, None] + model.torus_modulus * v[None, :]).ravel()
        return pts, np.array(["z"] * pts.size)
    s = (np.arange(n_radial) + 0.5) / n_radial
    theta = 2 * np.pi * (np.arange(n_angle) + 0.25) / n_angle
    use_w = s > 0.5
    r = np.where(use_w, np.sqrt((1 - s) / s), np.sqrt(s / (1 - s)))
    pts = (r[:, None] * np.exp(1j * theta)[None, :]).ravel()
    charts = np.repeat(np.where(use_w, "w", "z"), n_angle)
    return pts, charts


def _potential_laplacian(model, basis, z):
    """d^2 W_p / dz dzbar of the weight, in either chart."""
    if model.kind is ModelKind.FLAT_TORUS:
        return np.full(z.shape, math.pi * basis.p / model.torus_modulus.imag)
    t = np.abs(z) ** 2
    s = t / (1 + t)
    return (1 - s) ** 2 * (basis.degree + basis.p * model.perturbation * _bump_q(s))


def _omega_density(model, z):
    if model.kind is ModelKind.FLAT_TORUS:
        return np.full(z.shape, 1.0 / model.torus_modulus.imag)
    t = np.abs(z) ** 2
    s = t / (1 + t)
    return (1 - s) ** 2 * (1 + model.perturbation * _bump_q(s)) / math.pi


def fubini_study_pullback(model: KaehlerModel, p: int, n_radial: int = 24, n_angle: int = 12,
                          method: str = "analytic", step: float | None = None) -> PullbackReport:
    """Sup norm of Laplacian(log B_p) / (4 pi p) over a grid covering X.

    This is the scalar form of (1/p) phi_p^* omega_FS - omega (minus the
    fixed m/p omega_E contribution of the twist), measured in units of omega.
    ``method="analytic"`` differentiates the section values exactly;
    ``method="fd"`` applies a five-point Laplacian with chart step ``step``.
    """
    if model.kind not in (ModelKind.FUBINI_STUDY, ModelKind.PERTURBED, ModelKind.FLAT_TORUS):
        raise WrongModel("fubini_study_pullback runs on smooth compact models")
    basis, _, fact = kernel_setup(model, p)
    pts, charts = _pullback_points(model, n_radial, n_angle)
    dev = np.empty(pts.size)
    for chart in ("z", "w"):
        sel = charts == chart
        if not np.any(sel):
            continue
        z = pts[sel]
        h = _omega_density(model, z)
        if method == "analytic":
            e = fact.orthonormal(basis.unit_values(z, chart))
            de = fact.orthonormal(basis.unit_derivatives(z, chart))
            F = np.sum(np.abs(e) ** 2, axis=-1)
            G = np.sum(np.abs(de) ** 2, axis=-1)
            H = np.sum(de * e.conj(), axis=-1)
            logF_zz = (F * G - np.abs(H) ** 2) / F ** 2
            lap_quarter = logF_zz - _potential_laplacian(model, basis, z)
            dev[sel] = lap_quarter / (math.pi * p * h)
        elif method == "fd":
            if step is None:
                step = 0.05 / math.sqrt(p)
            if np.max(step * np.sqrt(h)) * math.sqrt(p) > 0.5:
                raise GridTooCoarse("finite-difference step is not small against 1/sqrt(p)")

            def logB(w):
                return np.log(bergman_diagonal(basis, fact, w, chart))

            lap = (logB(z + step) + logB(z - step) + logB(z + 1j * step) + logB(z - 1j * step)
                   - 4 * logB(z)) / step ** 2
            dev[sel] = lap / (4 * math.pi * p * h)
        else:
            raise ValueError(f"unknown method {method!r}")
    return PullbackReport(p, float(np.max(np.abs(dev))), dev, pts, charts, method)
