import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geometry.discrete_manifold import DiscreteManifold, cell_centres, disk_mask, flat_manifold
from geometry.distances import (boundary_distance, distance_field, geodesic_distance, metric_ball,
                                pairwise_distances)
from geometry.gaussian_integrals import (gaussian_ratio, gaussian_tail_check, scalar_gaussian_inequality,
                                         volume_ratio_floor, whole_ball_gaussian_integral)
from shared.errors import MaskedDomainError, UnreachableError
from shared.fitting import loglog_slope


@pytest.fixture
def bumpy():
    x, y = cell_centres(32)
    return DiscreteManifold(0.4 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))


def test_constant_field_has_zero_laplacian(bumpy):
    np.testing.assert_array_equal(bumpy.laplacian_apply(np.full((32, 32), 3.0)), 0.0)


def test_laplacian_fourier_oracle_converges_second_order():
    errors, hs = [], []
    for m in (16, 32, 64):
        x, _ = cell_centres(m)
        f = np.sin(2 * np.pi * x)
        lap = flat_manifold(m).laplacian_apply(f)
        errors.append(np.max(np.abs(lap + (2 * np.pi) ** 2 * f)))
        hs.append(1.0 / m)
    assert loglog_slope(hs, errors).slope == pytest.approx(2.0, abs=0.2)


def test_laplacian_is_self_adjoint_in_volume_product(bumpy):
    rng = np.random.default_rng(3)
    for _ in range(100):
        f, g = rng.standard_normal((2, 32, 32))
        lhs = bumpy.integrate(bumpy.laplacian_apply(f) * g)
        rhs = bumpy.integrate(f * bumpy.laplacian_apply(g))
        assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(lhs)))


def test_masked_laplacian_rejects_undefined_values():
    man = flat_manifold(16, disk_mask(16))
    f = np.where(man.mask, np.nan, 1.0)
    with pytest.raises(MaskedDomainError):
        man.laplacian_apply(f)


def test_masked_laplacian_rows_sum_to_zero():
    man = DiscreteManifold(np.random.default_rng(0).uniform(-0.3, 0.3, (16, 16)), disk_mask(16))
    np.testing.assert_array_equal(np.asarray(man.flat_stiffness.sum(axis=1)).ravel(), 0.0)
    sums = np.asarray(man.laplacian_matrix.sum(axis=1)).ravel()
    assert np.max(np.abs(sums)) <= 1e-12 * np.max(np.abs(man.laplacian_matrix.diagonal()))


def test_unit_area_and_linearity(bumpy):
    flat = flat_manifold(32)
    assert flat.integrate(1.0) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(4)
    f, g = rng.standard_normal((2, 32, 32))
    combined = bumpy.integrate(2.0 * f - 3.0 * g)
    assert combined == pytest.approx(2.0 * bumpy.integrate(f) - 3.0 * bumpy.integrate(g), abs=1e-12)


def test_integration_is_additive_over_disjoint_regions(bumpy):
    region = disk_mask(32, radius=0.2)
    f = np.random.default_rng(5).standard_normal((32, 32))
    parts = bumpy.integrate(f, region) + bumpy.integrate(f, ~region)
    assert bumpy.integrate(f) == pytest.approx(parts, abs=1e-13)


def test_integration_outside_mask_rejected():
    man = flat_manifold(16, disk_mask(16))
    with pytest.raises(MaskedDomainError):
        man.integrate(1.0, np.ones((16, 16), dtype=bool))


def test_flat_distance_close_to_euclidean():
    man = flat_manifold(64)
    d = geodesic_distance(man, (10, 10), (40, 15))
    euclid = np.hypot(30, 5) / 64
    assert abs(d - euclid) / euclid < 0.08


def test_distance_to_self_is_zero(bumpy):
    assert geodesic_distance(bumpy, (5, 7), (5, 7)) == 0.0


def test_uniform_scale_scales_distances():
    base = flat_manifold(32)
    scaled = DiscreteManifold(np.full((32, 32), 2.0 * np.log(3.0)))
    d0 = geodesic_distance(base, (1, 2), (20, 9))
    assert geodesic_distance(scaled, (1, 2), (20, 9)) == pytest.approx(3.0 * d0, rel=1e-12)


def test_distances_are_symmetric_path_metric(bumpy):
    cells = [(0, 0), (5, 9), (17, 3), (30, 30), (12, 22)]
    dist = pairwise_distances(bumpy, cells)
    np.testing.assert_allclose(dist, dist.T, atol=1e-12)
    for i in range(len(cells)):
        for j in range(len(cells)):
            for k in range(len(cells)):
                assert dist[i, j] <= dist[i, k] + dist[k, j] + 1e-12


def test_disconnected_pair_is_unreachable():
    mask = np.zeros((16, 16), dtype=bool)
    mask[2:5, 2:5] = True
    mask[10:13, 10:13] = True
    man = flat_manifold(16, mask)
    with pytest.raises(UnreachableError):
        geodesic_distance(man, (3, 3), (11, 11))


def test_inactive_source_rejected():
    man = flat_manifold(16, disk_mask(16))
    with pytest.raises(MaskedDomainError):
        distance_field(man, (0, 0))


def test_removing_cells_never_shortens_paths(bumpy):
    full = distance_field(bumpy, (16, 16))
    shrunk = distance_field(bumpy.with_mask(disk_mask(32, radius=0.3)), (16, 16))
    inside = np.isfinite(shrunk)
    assert np.all(shrunk[inside] >= full[inside] - 1e-14)


def test_ball_of_radius_zero_is_the_centre(bumpy):
    ball = metric_ball(bumpy, (4, 4), 0.0)
    assert ball.sum() == 1 and ball[4, 4]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.4), st.floats(0.0, 0.4))
def test_balls_are_nested(r1, r2):
    man = flat_manifold(16)
    small, large = sorted((r1, r2))
    assert not np.any(metric_ball(man, (3, 3), small) & ~metric_ball(man, (3, 3), large))


def test_flat_ball_area_converges_to_chamfer_octagon():
    # 8-neighbour balls are regular octagons inscribed in the Euclidean circle
    r = 0.3
    octagon = 2.0 * np.sqrt(2.0) * r ** 2
    errors = []
    for m in (32, 64, 128):
        man = flat_manifold(m)
        area = man.integrate(1.0, metric_ball(man, (m // 2, m // 2), r))
        errors.append(abs(area - octagon) / octagon)
    assert errors[-1] < 0.05


def test_boundary_distance_of_whole_domain_is_infinite():
    man = flat_manifold(16)
    assert np.all(np.isinf(boundary_distance(man, man.mask)))


def test_boundary_distance_half_cell_at_interface():
    man = flat_manifold(32)
    region = disk_mask(32, radius=0.25)
    dist = boundary_distance(man, region)
    edge = region & ~np.roll(region, 1, axis=0)
    assert np.allclose(dist[edge], 0.5 / 32)


def test_whole_ball_integral_bounded_on_hyperbolic_like_metric():
    x, y = cell_centres(64)
    r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
    man = DiscreteManifold(-2.0 * np.log1p(-np.minimum(r2 / 0.2, 0.8)))
    sweep = whole_ball_gaussian_integral(man, (32, 32), 0.4, 1.0, [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0])
    assert np.isfinite(sweep.constant)
    assert sweep.constant < 50.0


def test_tail_decays_on_static_torus():
    man = flat_manifold(64)
    times = [1e-3, 2e-3, 5e-3, 1e-2, 2e-2]
    report = gaussian_tail_check([(t, man) for t in times], (32, 32), 0.3, 0.01, 1.0)
    assert report.threshold_ok
    assert report.fitted_constant is not None
    assert all(a < b for a, b in zip(report.tails, report.tails[1:]))
    assert report.scalar.fitted_c1 is not None


def test_scalar_gaussian_inequality_holds_with_one_constant():
    report = scalar_gaussian_inequality(1.0, 2, samples=1000)
    assert report.fitted_c1 is not None
    assert report.worst_ratio <= 1.0 + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.01, 1.0), st.integers(1, 5))
def test_scalar_gaussian_near_equal_times(d, frac, n):
    big_t = frac * d ** 2
    ratio = gaussian_ratio(1.0, 1.0, n, big_t * (1 - 1e-9), big_t, d)
    assert ratio <= 1.0 + 1e-9 * max(1.0, n)


def test_volume_ratio_of_flat_torus():
    man = flat_manifold(64)
    assert volume_ratio_floor(man, (32, 32), 0.25) == pytest.approx(2.0 * np.sqrt(2.0), rel=0.05)
