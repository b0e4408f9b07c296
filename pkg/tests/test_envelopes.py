import math

import numpy as np
import pytest
from scipy import integrate

from modules.envelopes import (CompactEnvelope, GaussianEnvelope, PowerEnvelope, create_envelope,
                               kappa_norm, lattice_power_sum_tail, norm_ratios, sphere_area)


def _window_tail(envelope, R, n, d, kappa, reach=240):
    axis = np.arange(-reach, reach + 1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
    norms = kappa_norm(grid, kappa)
    outside = norms > R
    return float(np.sum(envelope(norms[outside] / n))) / n ** d


def test_sphere_area_and_norm_ratios():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert norm_ratios(2, 2.0) == (1.0, 1.0)
    a, b = norm_ratios(2, 1.0)
    assert a == 1.0 and b == pytest.approx(math.sqrt(2))
    a, b = norm_ratios(3, math.inf)
    assert a == pytest.approx(1 / math.sqrt(3)) and b == 1.0


def test_kappa_norm_variants():
    x = np.array([[3.0, -4.0]])
    assert kappa_norm(x, 2.0)[0] == pytest.approx(5.0)
    assert kappa_norm(x, 1.0)[0] == pytest.approx(7.0)
    assert kappa_norm(x, math.inf)[0] == pytest.approx(4.0)
    assert kappa_norm(x, 3.0)[0] == pytest.approx((27 + 64) ** (1 / 3))


@pytest.mark.parametrize('kappa', [1.0, 2.0, math.inf])
def test_power_lattice_tail_bounds_the_sum(kappa):
    envelope = PowerEnvelope(1.0, 6.0)
    for R in (12, 24):
        bound = envelope.lattice_tail(R, 4, 2, kappa)
        assert _window_tail(envelope, R, 4, 2, kappa) <= bound


def test_gaussian_lattice_tail_bounds_the_sum():
    envelope = GaussianEnvelope(1.0, 0.5)
    bound = envelope.lattice_tail(10, 3, 2, 2.0)
    assert _window_tail(envelope, 10, 3, 2, 2.0, reach=60) <= bound


def test_radius_for_reaches_the_target():
    envelope = PowerEnvelope(2.0, 8.0)
    R = envelope.radius_for(1e-6, 16, 2, 2.0)
    assert envelope.lattice_tail(R, 16, 2, 2.0) <= 1e-6
    assert envelope.lattice_tail(R - 1, 16, 2, 2.0) > 1e-6
    assert envelope.radius_for(1e-8, 16, 2, 2.0) >= R
    with pytest.raises(ValueError):
        envelope.radius_for(0.0, 16, 2, 2.0)


def test_compact_envelope_truncation_is_exact():
    envelope = CompactEnvelope(1.0, 1.5)
    R = envelope.radius_for(1e-12, 8, 2, 2.0)
    assert R == 12
    assert envelope.lattice_tail(R, 8, 2, 2.0) == 0.0
    assert envelope(np.array([1.5, 1.6])).tolist() == [1.0, 0.0]


def test_moment_tails_match_quadrature():
    power = PowerEnvelope(1.0, 7.0)
    exact, _ = integrate.quad(lambda v: v * (1 + v) ** -7.0, 2.0, np.inf)
    assert power.moment_tail(1, 2.0) >= exact
    gauss = GaussianEnvelope(3.0, 0.7)
    exact, _ = integrate.quad(lambda v: v ** 2 * 3.0 * math.exp(-0.7 * v * v), 1.0, np.inf)
    assert gauss.moment_tail(2, 1.0) == pytest.approx(exact, rel=1e-8)
    assert PowerEnvelope(1.0, 2.0).moment_tail(1, 1.0) == math.inf


def test_power_certificate_threshold():
    sub = PowerEnvelope(1.0, 6.0).certificate(2)
    assert sub.subcritical and not sub.certified
    assert sub.total_bound == math.inf or math.isnan(sub.total_bound)
    good = PowerEnvelope(1.0, 7.0).certificate(2)
    assert good.certified and not good.subcritical
    assert math.isfinite(good.total_bound) and good.remainder_bound >= 0


def test_gaussian_and_compact_certificates_are_finite():
    assert math.isfinite(GaussianEnvelope(1.0, 1.0).certificate(3).total_bound)
    compact = CompactEnvelope(1.0, 2.0).certificate(2)
    assert compact.remainder_bound == 0.0 and compact.terms == 3


def test_envelopes_are_nonincreasing():
    radii = np.linspace(0, 10, 50)
    for envelope in (PowerEnvelope(1.0, 3.0), GaussianEnvelope(1.0, 2.0), CompactEnvelope(1.0, 4.0)):
        assert envelope.is_nonincreasing(radii)


def test_create_envelope_round_trip_and_rejections():
    for spec in ({'family': 'power', 'C': 2.0, 'beta': 9.0},
                 {'family': 'gaussian', 'C': 1.0, 'a': 0.3},
                 {'family': 'compact', 'C': 1.0, 'r0': 2.0}):
        assert create_envelope(spec).to_dict() == spec
    with pytest.raises(ValueError):
        create_envelope({'family': 'stretched'})
    with pytest.raises(ValueError):
        PowerEnvelope(1.0, -1.0)
    with pytest.raises(ValueError):
        GaussianEnvelope(1.0, 0.0)


def test_lattice_power_sum_tail():
    assert lattice_power_sum_tail(2.0, 10, 2, 2.0) == math.inf
    bound = lattice_power_sum_tail(5.0, 10, 2, 2.0)
    axis = np.arange(-200, 201)
    grid = np.stack(np.meshgrid(axis, axis, indexing='ij'), axis=-1).reshape(-1, 2)
    norms = kappa_norm(grid, 2.0)
    actual = float(np.sum(norms[norms >= 10] ** -5.0))
    assert actual <= bound
