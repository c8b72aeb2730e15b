"""Explicit bases of holomorphic sections of L^p (x) E.

A section is stored through its holomorphic chart function f_j and the
log-weight W_p of the Hermitian metric, so that

    |S_j(z)|^2 = |f_j(z)|^2 exp(-W_p(z)).

Kernel assembly only ever needs the *unit values* f_j(z) exp(-W_p(z)/2),
which are evaluated in the log domain; for p in the hundreds the factors
|z|^{2j} and (1 + |z|^2)^{-p} separately over- and underflow.

Theta truncation
----------------
Write nu = n + j/p and centre the summation window at the index n_c that
minimizes |Im(tau) nu + Im z|.  The unit value of the n-th term has modulus
exp(-pi p Im(tau) (n - n_c + delta)^2) with |delta| <= 1/2, so keeping
|n - n_c| <= T leaves a tail of at most

    2 exp(-pi p Im(tau) (T + 1/2)^2) / (1 - exp(-pi p Im(tau)))

relative to the unit scale of B_p.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import xlogy

from .errors import IncompatiblePower, OutOfChart, TruncationTooSmall, WrongModel
from .geometry import KaehlerModel, ModelKind

__all__ = [
    "SectionBasis",
    "MonomialBasis",
    "ThetaBasis",
    "basis_cp1",
    "basis_torus",
    "basis_quotient",
    "evaluate_sections",
    "theta_tail_bound",
]

THETA_TAIL_TOL = 1e-15


def _as_points(z, chart: str) -> np.ndarray:
    if chart not in ("z", "w"):
        raise ValueError(f"chart must be 'z' or 'w', got {chart!r}")
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise OutOfChart(f"non-finite point in the {chart}-chart; switch to the opposite chart")
    return z


class SectionBasis:
    """Common interface; see :class:`MonomialBasis` and :class:`ThetaBasis`.

    ``mixing`` is an optional invertible matrix M; the represented sections
    are S'_i = sum_j M[j, i] S_j.
    """

    p: int
    model: KaehlerModel
    mixing: np.ndarray | None = None
    volume_scale: float = 1.0

    @property
    def raw_dim(self) -> int:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.raw_dim

    def weight_log(self, z, chart: str = "z") -> np.ndarray:
        raise NotImplementedError

    def _raw_unit_values(self, z: np.ndarray, chart: str) -> np.ndarray:
        raise NotImplementedError

    def _raw_unit_derivatives(self, z: np.ndarray, chart: str) -> np.ndarray:
        raise NotImplementedError

    def _mix(self, vals: np.ndarray) -> np.ndarray:
        return vals if self.mixing is None else vals @ self.mixing

    def unit_values(self, z, chart: str = "z") -> np.ndarray:
        """f_j(z) exp(-W_p(z)/2), shape ``z.shape + (dim,)``."""
        return self._mix(self._raw_unit_values(_as_points(z, chart), chart))

    def unit_derivatives(self, z, chart: str = "z") -> np.ndarray:
        """f_j'(z) exp(-W_p(z)/2), same shape as :meth:`unit_values`."""
        return self._mix(self._raw_unit_derivatives(_as_points(z, chart), chart))

    def holo(self, z, chart: str = "z") -> np.ndarray:
        """Plain chart values f_j(z); may overflow for large p away from 0."""
        z = _as_points(z, chart)
        return self.unit_values(z, chart) * np.exp(0.5 * self.weight_log(z, chart))[..., None]

    @property
    def holo_parts(self):
        """The chart functions f_j as vectorized callables."""
        return [lambda z, _i=i: self.holo(z)[..., _i] for i in range(self.dim)]

    def mixed(self, matrix) -> "SectionBasis":
        """Copy of the basis with sections replaced by combinations ``S @ matrix``."""
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (self.dim, self.dim):
            raise ValueError(f"mixing matrix must be {self.dim}x{self.dim}")
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.mixing = matrix if self.mixing is None else self.mixing @ matrix
        return new


class MonomialBasis(SectionBasis):
    """Sections z^j of O(N) over CP^1, N = p + m, j in ``exponents``."""

    def __init__(self, model: KaehlerModel, p: int, exponents, volume_scale: float = 1.0):
        self.model = model
        self.p = int(p)
        self.degree = self.p + model.twist_degree
        self.exponents = np.asarray(exponents, dtype=int)
        self.volume_scale = float(volume_scale)
        self.mixing = None

    @property
    def raw_dim(self) -> int:
        return int(self.exponents.size)

    def _log_parts(self, z: np.ndarray):
        t = np.abs(z) ** 2
        log1p_t = np.log1p(t)
        s = t / (1.0 + t)
        bump = self.model.perturbation * s * (1.0 - s)
        return t, log1p_t, bump

    def weight_log(self, z, chart: str = "z") -> np.ndarray:
        """W_p = (p + m) log(1 + |z|^2) + p phi(z); identical form in both charts."""
        z = _as_points(z, chart)
        _, log1p_t, bump = self._log_parts(z)
        return self.degree * log1p_t + self.p * bump

    def _chart_exponents(self, chart: str) -> np.ndarray:
        # in the frame of the w-chart z^j reads w^(N - j)
        return self.exponents if chart == "z" else self.degree - self.exponents

    def _raw_unit_values(self, z, chart):
        t, log1p_t, bump = self._log_parts(z)
        e = self._chart_exponents(chart)
        half_w = 0.5 * (self.degree * log1p_t + self.p * bump)
        logmod = 0.5 * xlogy(e, t[..., None]) - half_w[..., None]
        phase = np.exp(1j * e * np.angle(z)[..., None])
        return np.exp(logmod) * phase

    def _raw_unit_derivatives(self, z, chart):
        t, log1p_t, bump = self._log_parts(z)
        e = self._chart_exponents(chart)
        half_w = 0.5 * (self.degree * log1p_t + self.p * bump)
        em1 = np.maximum(e - 1, 0)
        logmod = 0.5 * xlogy(em1, t[..., None]) - half_w[..., None]
        phase = np.exp(1j * em1 * np.angle(z)[..., None])
        return e * np.exp(logmod) * phase


def theta_tail_bound(p: int, tau: complex, truncation: int) -> float:
    """Relative tail of the centred theta window |n - n_c| <= truncation."""
    c = math.pi * p * tau.imag
    return 2.0 * math.exp(-c * (truncation + 0.5) ** 2) / (-math.expm1(-c))


class ThetaBasis(SectionBasis):
    """Theta functions with characteristics j/p on C / (Z + tau Z).

    theta_j(z) = sum_n exp(pi i p tau nu^2 + 2 pi i p nu z),  nu = n + j/p,
    with weight W_p(z) = 2 pi p (Im z)^2 / Im tau.  They satisfy
    theta_j(z + 1) = theta_j(z) and
    theta_j(z + tau) = exp(-pi i p tau - 2 pi i p z) theta_j(z).
    """

    def __init__(self, model: KaehlerModel, p: int, truncation: int):
        self.model = model
        self.p = int(p)
        self.truncation = int(truncation)
        self.tau = model.torus_modulus
        self.volume_scale = 1.0
        self.mixing = None
        self.offsets = np.arange(-self.truncation, self.truncation + 1)

    @property
    def raw_dim(self) -> int:
        return self.p

    def weight_log(self, z, chart: str = "z") -> np.ndarray:
        z = _as_points(z, chart)
        if chart != "z":
            raise OutOfChart("the torus has a single chart")
        return 2.0 * math.pi * self.p * z.imag ** 2 / self.tau.imag

    def _terms(self, z):
        p, tau = self.p, self.tau
        j = np.arange(p) / p
        y = z.imag[..., None]
        centre = np.rint(-j - y / tau.imag)
        nu = (centre + j)[..., None] + self.offsets          # (..., p, 2T+1)
        y = y[..., None]
        x = z.real[..., None, None]
        logmod = -(math.pi * p / tau.imag) * (tau.imag * nu + y) ** 2
        phase = math.pi * p * tau.real * nu ** 2 + 2.0 * math.pi * p * nu * x
        # reduce the phase before exponentiating to keep it accurate
        phase = np.mod(phase, 2.0 * math.pi)
        return nu, np.exp(logmod + 1j * phase)

    def _raw_unit_values(self, z, chart):
        if chart != "z":
            raise OutOfChart("the torus has a single chart")
        _, terms = self._terms(z)
        return terms.sum(axis=-1)

    def _raw_unit_derivatives(self, z, chart):
        if chart != "z":
            raise OutOfChart("the torus has a single chart")
        nu, terms = self._terms(z)
        return (2j * math.pi * self.p * nu * terms).sum(axis=-1)


def basis_cp1(model: KaehlerModel, p: int) -> MonomialBasis:
    """Monomials 1, z, ..., z^(p+m) on a CP^1 kind.

    On a cyclic quotient this is the full basis upstairs.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if not model.is_cp1:
        raise WrongModel(f"basis_cp1 needs a CP^1 model, got {model.kind.value}")
    return MonomialBasis(model, p, np.arange(p + model.twist_degree + 1))


def basis_torus(model: KaehlerModel, p: int, truncation: int | None = None) -> ThetaBasis:
    """Theta basis of the p-th power of the principal polarization.

    With ``truncation=None`` the smallest window meeting the tail bound is
    used.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if model.kind is not ModelKind.FLAT_TORUS:
        raise WrongModel(f"basis_torus needs a FlatTorus, got {model.kind.value}")
    tau = model.torus_modulus
    if truncation is None:
        truncation = 0
        while theta_tail_bound(p, tau, truncation) > 0.1 * THETA_TAIL_TOL:
            truncation += 1
    bound = theta_tail_bound(p, tau, truncation)
    if bound > THETA_TAIL_TOL:
        raise TruncationTooSmall(f"tail bound {bound:.3g} exceeds {THETA_TAIL_TOL:g} at truncation {truncation}")
    return ThetaBasis(model, p, truncation)


def basis_quotient(model: KaehlerModel, p: int) -> MonomialBasis:
    """Invariant monomials z^j, j = 0 mod k, for the cyclic quotient.

    The rotation acts trivially on the fiber over z = 0.  Over z = infinity
    the frame is z^(p+m), on which the generator acts by exp(2 pi i (p+m)/k);
    we require (p + m) = 0 mod k so that this is trivial as well and the
    invariant sections are exactly the monomials with j = 0 mod k.
    The downstairs volume is 1/k, applied through ``volume_scale``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if model.kind is not ModelKind.CYCLIC_QUOTIENT:
        raise WrongModel(f"basis_quotient needs a CyclicQuotientCP1, got {model.kind.value}")
    k = model.quotient_order
    N = p + model.twist_degree
    if N % k:
        raise IncompatiblePower(f"p + m = {N} is not divisible by k = {k}")
    return MonomialBasis(model, p, np.arange(0, N + 1, k), volume_scale=1.0 / k)


def evaluate_sections(basis: SectionBasis, z, chart: str = "z"):
    """Return ``(f_j(z))_j`` and ``exp(-W_p(z)/2)``.

    For large p prefer ``basis.unit_values`` which never forms the two
    factors separately.
    """
    z = _as_points(z, chart)
    weight = np.exp(-0.5 * basis.weight_log(z, chart))
    return basis.holo(z, chart), weight
