import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bergman_lab.asymptotics import (DEFAULT_P_RANGE, check_b1, diagonal_values, fit_expansion,
                                     fubini_study_pullback, noise_floor, offdiag_decay_scan,
                                     orbifold_profile, require_well_conditioned, smooth_locus_comparison)
from bergman_lab.errors import BelowFloor, IllConditioned, InsufficientSamples, WrongModel
from bergman_lab.geometry import build_model, scalar_curvature

from conftest import sphere_points

FIT_RANGE = (8, 16, 24, 32, 40, 48, 56, 64)


def test_fit_exact_polynomial():
    fit = fit_expansion([(p, p + 2.0) for p in range(4, 21)], n=1, k=2)
    np.testing.assert_allclose(fit.coeffs, [1, 2, 0], atol=1e-10)
    assert fit.residual_norm < 1e-12
    assert not fit.ill_conditioned


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=4), st.integers(1, 2))
def test_fit_exactness_synthetic(coeffs, n):
    k = len(coeffs) - 1
    ps = list(DEFAULT_P_RANGE)
    samples = [(p, sum(c * p ** (n - r) for r, c in enumerate(coeffs))) for p in ps]
    fit = fit_expansion(samples, n=n, k=k)
    np.testing.assert_allclose(fit.coeffs, coeffs, atol=1e-10)


def test_fit_needs_samples():
    with pytest.raises(InsufficientSamples, match="need >= 4 distinct p-values"):
        fit_expansion([(8, 9.0), (8, 9.0), (16, 17.0)], k=2)


def test_fit_pinned():
    samples = [(p, p + 1 + 3 / p) for p in (8, 16, 32, 64)]
    fit = fit_expansion(samples, k=2, pinned=[1.0])
    np.testing.assert_allclose(fit.coeffs, [1, 1, 3], atol=1e-10)
    assert fit.stderr[0] == 0


def test_ill_conditioned_flagged():
    ps = [100, 101, 102, 103, 104, 105, 106, 107]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_expansion([(p, p + 1.0) for p in ps], k=5)
    assert fit.ill_conditioned
    assert any("condition" in str(w.message) for w in caught)
    with pytest.raises(IllConditioned):
        require_well_conditioned(fit)


def test_parity_probe_detects_half_power(rng):
    # the probe must see a genuine p^(1/2) term at a small multiple of the noise
    ps = DEFAULT_P_RANGE
    clean = [(p, p + 1 + 0.5 / p) for p in ps]
    noise = 1e-10
    noisy = [(p, v * (1 + noise * rng.normal())) for p, v in clean]
    quiet = fit_expansion(noisy, k=5, half_probe=True, data_noise=noise)
    assert quiet.parity_ratio() < 10
    injected = [(p, v + 1e-5 * math.sqrt(p)) for p, v in noisy]
    loud = fit_expansion(injected, k=5, half_probe=True, data_noise=noise)
    assert loud.parity_ratio() > 10
    assert loud.half_coeff == pytest.approx(1e-5, rel=0.05)
    with pytest.raises(ValueError):
        fit_expansion(clean, k=2).parity_ratio()


@pytest.mark.parametrize("m", [0, 2])
def test_fs_fit(m):
    model = build_model("fs", twist_degree=m)
    z = 0.3 + 0.4j
    vals = [(p, diagonal_values(model, p, [z])[0]) for p in FIT_RANGE]
    fit = fit_expansion(vals, k=2)
    assert fit.b0 == pytest.approx(1.0, abs=1e-6)
    assert fit.b1 == pytest.approx(m + 1, abs=1e-4)


def test_torus_fit(torus):
    vals = [(p, diagonal_values(torus, p, [0.3 + 0.2j])[0]) for p in FIT_RANGE[1:]]
    fit = fit_expansion(vals, k=2)
    assert fit.b0 == pytest.approx(1.0, abs=1e-6)
    assert abs(fit.b1) <= 1e-4


def test_torus_fit_small_p_bias(torus):
    # at p = 8 the density still carries a 4 exp(-4 pi) lattice term, which a
    # polynomial fit in 1/p spreads over the coefficients
    z = 0.3 + 0.2j
    vals = [(p, diagonal_values(torus, p, [z])[0]) for p in FIT_RANGE]
    assert abs(vals[0][1] / 8 - 1) <= 4 * math.exp(-4 * math.pi)
    fit = fit_expansion(vals, k=2)
    assert 1e-7 < abs(fit.b0 - 1) < 1e-5
    assert 1e-5 < abs(fit.b1) < 1e-3


def test_check_b1_fs_m2_and_torus(torus):
    for c in check_b1(build_model("fs", twist_degree=2), [0.0, 1.0, 3j]):
        assert c.measured == pytest.approx(3.0, abs=1e-3)
        assert c.target == pytest.approx(3.0)
    for c in check_b1(torus, [0.1, 0.5 + 0.5j]):
        assert abs(c.measured) <= 1e-4
        assert c.target == 0.0


def test_check_b1_perturbed(perturbed, rng):
    pts = sphere_points(rng, 10, s_max=0.95)
    checks = check_b1(perturbed, pts)
    for c in checks:
        assert c.target == pytest.approx(scalar_curvature(perturbed, c.point).rX / (8 * math.pi))
        assert c.rel_error <= 2e-2


def test_b1_converges_as_range_grows(perturbed):
    z = 0.7 + 0.2j
    errs = []
    for top in (32, 64, 128):
        ps = [p for p in DEFAULT_P_RANGE if p <= top]
        errs.append(check_b1(perturbed, [z], ps, k=3)[0].abs_error)
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("name", ["fs", "perturbed", "torus"])
def test_parity_probe_smooth_models(name, request, rng):
    model = request.getfixturevalue(name)
    pts = [0.2, 0.5 + 0.5j] if name == "torus" else sphere_points(rng, 4, s_max=0.9)
    floor = max(noise_floor(model, p) for p in DEFAULT_P_RANGE)
    for c in check_b1(model, pts, k=5, half_probe=True):
        assert c.fit.parity_ratio() <= 10 or abs(c.fit.half_coeff) <= 10 * floor


def test_decay_scan_fs(fs):
    scan = offdiag_decay_scan(fs, 0.0, 64)
    assert scan.log_magnitudes[0] == pytest.approx(math.log(65), abs=1e-10)
    assert scan.near_rel_error <= 0.05
    assert scan.agmon_exponent > 0
    assert scan.monotone
    # closed form |P(0, z)| = (p+1) (1+|z|^2)^(-p/2) along the scan
    r = np.tan(math.sqrt(math.pi) * scan.distances)
    expected = math.log(65) - 32 * np.log1p(r * r)
    ok = np.isfinite(scan.log_magnitudes) & (scan.log_magnitudes > math.log(65) - 28)
    np.testing.assert_allclose(scan.log_magnitudes[ok], expected[ok], atol=1e-8)


@pytest.mark.parametrize("x", [0.0, 0.6 + 0.3j])
def test_decay_scan_perturbed(perturbed, x):
    scan = offdiag_decay_scan(perturbed, x, 64)
    assert scan.near_rel_error <= 0.05
    assert scan.agmon_exponent > 0
    assert scan.monotone


def test_decay_scan_torus(torus):
    scan = offdiag_decay_scan(torus, 0.1 + 0.2j, 64, direction=1 + 1j)
    assert scan.near_rel_error <= 0.05
    assert scan.monotone


def test_decay_scan_errors(fs):
    with pytest.raises(ValueError):
        offdiag_decay_scan(fs, 0.0, 16, distances=[0.1, 0.05, 0.2])
    with pytest.raises(InsufficientSamples):
        offdiag_decay_scan(fs, 0.0, 16, distances=[0.0, 0.1])
    near = list(np.linspace(0, 0.375, 6))
    with pytest.raises(BelowFloor):
        offdiag_decay_scan(fs, 0.0, 64, distances=near + [0.8, 0.82, 0.84])


@pytest.mark.parametrize("k", [2, 3])
def test_orbifold_profile(k):
    rep = orbifold_profile(build_model("quotient", quotient_order=k))
    assert rep.identity_residual <= 1e-8
    assert all(r <= 0.6 for _, _, r in rep.deviation_ratios)
    assert len(rep.deviation_ratios) >= 1
    assert abs(rep.fixed_ratios[-1] - k) < abs(rep.fixed_ratios[0] - k)
    assert rep.envelope_r2 >= 0.95
    assert rep.envelope_consistent
    assert rep.envelope_slope < 0


def test_orbifold_k2_monotone():
    rep = orbifold_profile(build_model("quotient", quotient_order=2), p_range=[16, 32, 64, 128])
    assert rep.monotone_beyond_32
    assert rep.fixed_ratios[-1] == pytest.approx(2.0, abs=0.02)


def test_orbifold_profile_errors(fs):
    with pytest.raises(WrongModel):
        orbifold_profile(fs)
    with pytest.raises(InsufficientSamples):
        orbifold_profile(build_model("quotient", quotient_order=3), p_range=[18, 19, 20])


def test_smooth_locus_matches_smooth_fit():
    model = build_model("quotient", quotient_order=2)
    orb, smooth = smooth_locus_comparison(model, 1.0, range(96, 257, 32))
    assert len(orb.p_list) >= 4
    assert orb.b0 == pytest.approx(smooth.b0, abs=1e-3)
    assert orb.b1 == pytest.approx(smooth.b1, abs=1e-3)
    assert orb.b1 == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("name", ["fs", "torus"])
def test_pullback_exact_models(name, request):
    model = request.getfixturevalue(name)
    for p in (16, 64):
        assert fubini_study_pullback(model, p).sup_deviation <= 1e-8


def test_pullback_twisted_fs():
    assert fubini_study_pullback(build_model("fs", twist_degree=2), 16).sup_deviation <= 1e-8


def test_pullback_halves(perturbed):
    r64 = fubini_study_pullback(perturbed, 64).sup_deviation
    r128 = fubini_study_pullback(perturbed, 128).sup_deviation
    assert r128 <= 0.55 * r64


def test_pullback_routes_agree(perturbed):
    a = fubini_study_pullback(perturbed, 32, n_radial=6, n_angle=4)
    b = fubini_study_pullback(perturbed, 32, n_radial=6, n_angle=4, method="fd")
    np.testing.assert_allclose(a.deviations, b.deviations, atol=1e-6)


def test_pullback_rejects_quotient():
    with pytest.raises(WrongModel):
        fubini_study_pullback(build_model("quotient", quotient_order=2), 16)
