import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvature.cones import (ConeKind, ConeSpec, complex_frame_contains, cone_contains,
                             ell)
from curvature.curvature_operator import (bianchi_defect, from_record, make_identity_operator,
                                          operator_from_spectrum, product_with_flat_factor,
                                          random_curvature_operator, ricci_tensor, riemann_tensor,
                                          scalar_curvature, to_record, zero_operator)
from curvature.isotropic import (SearchBudget, isotropic_value, min_isotropic_curvature,
                                 min_isotropic_curvature_complex,
                                 random_stiefel_frames)
from shared.errors import (DimensionTooSmallError, InvalidDimensionError,
                           UnsupportedFactorError)

seeds = st.integers(min_value=0, max_value=2 ** 31 - 1)
dims = st.sampled_from([3, 4, 5])
SMALL_BUDGET = SearchBudget(restarts=8, iterations=80)


def _oracle_scalar(rm):
    tensor = riemann_tensor(rm)
    total = 0.0
    for i in range(rm.dim):
        for j in range(rm.dim):
            if i != j:
                total += tensor[i, j, i, j]
    return total


def test_identity_scalar_curvature_n3():
    assert scalar_curvature(make_identity_operator(3)) == pytest.approx(6.0)


def test_identity_matrix_n4():
    np.testing.assert_array_equal(make_identity_operator(4).lambda2_matrix, np.eye(6))
    assert scalar_curvature(make_identity_operator(4)) == pytest.approx(12.0)


def test_identity_n2_is_single_bivector():
    rm = make_identity_operator(2)
    assert rm.lambda2_matrix.shape == (1, 1)
    assert rm.lambda2_matrix[0, 0] == 1.0


def test_invalid_dimension():
    with pytest.raises(InvalidDimensionError):
        make_identity_operator(1)


def test_zero_operator_scalar():
    assert scalar_curvature(zero_operator(4)) == 0.0


@given(seed=seeds, n=dims)
@settings(max_examples=40, deadline=None)
def test_random_operator_is_algebraic(seed, n):
    rm = random_curvature_operator(n, np.random.default_rng(seed))
    assert rm.symmetry_defect() <= 1e-12
    assert bianchi_defect(rm) <= 1e-12


@given(seed=seeds, n=dims)
@settings(max_examples=40, deadline=None)
def test_scalar_curvature_matches_index_loop(seed, n):
    rm = random_curvature_operator(n, np.random.default_rng(seed))
    assert scalar_curvature(rm) == pytest.approx(_oracle_scalar(rm), abs=1e-12)


@given(seed=seeds, n=dims)
@settings(max_examples=40, deadline=None)
def test_ricci_trace_is_scalar(seed, n):
    rm = random_curvature_operator(n, np.random.default_rng(seed))
    ric = ricci_tensor(rm)
    np.testing.assert_allclose(ric, ric.T, atol=1e-14)
    assert np.trace(ric) == pytest.approx(scalar_curvature(rm), abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_ricci_of_identity(n):
    np.testing.assert_allclose(ricci_tensor(make_identity_operator(n)), (n - 1) * np.eye(n))


def test_n3_ricci_sign_matches_two_lowest_eigenvalues():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        rm = random_curvature_operator(3, rng).shifted(rng.uniform(-2.0, 2.0))
        pair_sum = rm.eigenvalues[0] + rm.eigenvalues[1]
        ric_min = np.linalg.eigvalsh(ricci_tensor(rm))[0]
        if abs(pair_sum) < 1e-9:
            continue
        if np.sign(pair_sum) != np.sign(ric_min):
            mismatches += 1
    assert mismatches == 0


def test_product_with_flat_factor_keeps_scalar():
    product = product_with_flat_factor(make_identity_operator(3), 1)
    assert product.dim == 4
    assert scalar_curvature(product) == pytest.approx(6.0)


@pytest.mark.parametrize("k", [1, 2])
def test_product_dimension_and_bianchi(k):
    rng = np.random.default_rng(11)
    for _ in range(100):
        rm = random_curvature_operator(4, rng)
        product = product_with_flat_factor(rm, k)
        assert product.dim == 4 + k
        assert bianchi_defect(product) <= 1e-12


def test_product_flat_entries_vanish():
    product = product_with_flat_factor(random_curvature_operator(3, np.random.default_rng(1)), 2)
    tensor = riemann_tensor(product)
    for idx in itertools.product(range(5), repeat=4):
        if max(idx) >= 3:
            assert tensor[idx] == 0.0


@pytest.mark.parametrize("k", [0, 3])
def test_product_rejects_unsupported_factor(k):
    with pytest.raises(UnsupportedFactorError):
        product_with_flat_factor(make_identity_operator(3), k)


def test_min_isotropic_of_identity_is_four():
    value = min_isotropic_curvature(make_identity_operator(4), SMALL_BUDGET, np.random.default_rng(0))
    assert value == pytest.approx(4.0, abs=1e-9)


def test_min_isotropic_of_zero():
    assert min_isotropic_curvature(zero_operator(4), SMALL_BUDGET, np.random.default_rng(0)) == 0.0


def test_min_isotropic_rejects_small_dimension():
    with pytest.raises(DimensionTooSmallError):
        min_isotropic_curvature(make_identity_operator(3))


def test_min_isotropic_below_audit_frames():
    rng = np.random.default_rng(5)
    rm = random_curvature_operator(4, rng)
    found = min_isotropic_curvature(rm, SearchBudget(restarts=32, iterations=300), np.random.default_rng(9))
    audit = random_stiefel_frames(np.random.default_rng(123), 10_000, 4)
    assert found <= isotropic_value(rm, audit).min() + 1e-6


def test_min_isotropic_monotone_in_budget():
    rm = random_curvature_operator(5, np.random.default_rng(21))
    values = [min_isotropic_curvature(rm, SearchBudget(restarts=r, iterations=50), np.random.default_rng(4))
              for r in (1, 4, 16, 40)]
    for coarse, fine in zip(values, values[1:]):
        assert fine <= coarse + 1e-12


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("kind", list(ConeKind))
def test_identity_in_every_cone(n, kind):
    assert cone_contains(make_identity_operator(n), ConeSpec(kind, budget=SMALL_BUDGET)).contains


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("kind", [ConeKind.NONNEG_OPERATOR, ConeKind.TWO_NONNEG])
def test_negative_identity_outside_eigen_cones(n, kind):
    result = cone_contains(make_identity_operator(n).scaled(-1.0), ConeSpec(kind))
    assert not result.contains
    assert result.witness is not None


def test_cone_nesting_on_samples():
    rng = np.random.default_rng(7)
    budget = SearchBudget(restarts=16, iterations=150)
    specs = {kind: ConeSpec(kind, budget=budget) for kind in ConeKind}
    slack = {kind: ConeSpec(kind, tol=10 * specs[kind].tol, budget=budget) for kind in ConeKind}
    for _ in range(25):
        rm = random_curvature_operator(4, rng, scale=0.3).shifted(rng.uniform(-0.5, 1.5))
        if cone_contains(rm, specs[ConeKind.NONNEG_OPERATOR]).contains:
            assert cone_contains(rm, slack[ConeKind.TWO_NONNEG]).contains
            assert cone_contains(rm, slack[ConeKind.WPIC2]).contains
        if cone_contains(rm, specs[ConeKind.WPIC2]).contains:
            assert cone_contains(rm, slack[ConeKind.WPIC1]).contains


def test_n3_two_nonneg_matches_ricci():
    rng = np.random.default_rng(8)
    spec = ConeSpec(ConeKind.TWO_NONNEG)
    for _ in range(500):
        rm = random_curvature_operator(3, rng).shifted(rng.uniform(-2.0, 2.0))
        ric_min = np.linalg.eigvalsh(ricci_tensor(rm))[0]
        if abs(ric_min) < 1e-8:
            continue
        assert cone_contains(rm, spec).contains == (ric_min >= -1e-9)


def test_surface_cones_collapse_to_gauss_curvature():
    for kind in ConeKind:
        assert cone_contains(make_identity_operator(2).scaled(-0.5), ConeSpec(kind)).contains is False
        assert ell(make_identity_operator(2).scaled(-0.5), ConeSpec(kind)).value == pytest.approx(0.5)


@pytest.mark.parametrize("kind", list(ConeKind))
def test_ell_of_identity_is_zero(kind):
    assert ell(make_identity_operator(4), ConeSpec(kind, budget=SMALL_BUDGET)).value == 0.0


def test_ell_nonneg_of_negative_identity():
    assert ell(make_identity_operator(4).scaled(-1.0), ConeSpec(ConeKind.NONNEG_OPERATOR)).value == 1.0


def test_ell_two_nonneg_closed_form_and_bisection():
    rm = operator_from_spectrum(3, np.array([-3.0, 1.0, 2.0]), np.random.default_rng(2))
    spec = ConeSpec(ConeKind.TWO_NONNEG)
    closed = ell(rm, spec)
    assert closed.method == "closed_form"
    assert closed.value == pytest.approx(1.0, abs=1e-12)
    assert ell(rm, spec, method="bisection").value == pytest.approx(closed.value, abs=1e-8)


@given(seed=seeds, n=dims)
@settings(max_examples=60, deadline=None)
def test_closed_form_ell_equals_bisection(seed, n):
    rm = random_curvature_operator(n, np.random.default_rng(seed))
    for kind in (ConeKind.NONNEG_OPERATOR, ConeKind.TWO_NONNEG):
        spec = ConeSpec(kind)
        assert ell(rm, spec, method="bisection").value == pytest.approx(ell(rm, spec).value, abs=1e-8)


@given(seed=seeds, n=dims, c=st.floats(min_value=0.1, max_value=10.0))
@settings(max_examples=40, deadline=None)
def test_ell_scales_linearly(seed, n, c):
    rm = random_curvature_operator(n, np.random.default_rng(seed))
    for kind in (ConeKind.NONNEG_OPERATOR, ConeKind.TWO_NONNEG):
        spec = ConeSpec(kind)
        assert ell(rm.scaled(c), spec).value == pytest.approx(c * ell(rm, spec).value, abs=1e-8)


@given(seed=seeds, n=dims)
@settings(max_examples=40, deadline=None)
def test_ell_result_brackets_membership(seed, n):
    rm = random_curvature_operator(n, np.random.default_rng(seed))
    for kind in (ConeKind.NONNEG_OPERATOR, ConeKind.TWO_NONNEG):
        spec = ConeSpec(kind)
        exact = spec.with_tol(0.0)
        value = ell(rm, spec).value
        assert value >= 0.0
        assert cone_contains(rm.shifted(value + spec.tol), exact).contains
        if value > spec.tol:
            assert not cone_contains(rm.shifted(value - spec.tol), exact).contains


@given(seed=seeds, n=dims, scale=st.floats(min_value=0.05, max_value=1.0))
@settings(max_examples=40, deadline=None)
def test_small_ell_bounds_ricci_below(seed, n, scale):
    rm = random_curvature_operator(n, np.random.default_rng(seed), scale=scale)
    for kind in (ConeKind.NONNEG_OPERATOR, ConeKind.TWO_NONNEG):
        if ell(rm, ConeSpec(kind)).value <= 1.0:
            assert np.linalg.eigvalsh(ricci_tensor(rm))[0] >= -(n - 1) - 1e-9


def test_membership_monotone_in_shift():
    rng = np.random.default_rng(17)
    spec = ConeSpec(ConeKind.WPIC1, budget=SMALL_BUDGET)
    rm = random_curvature_operator(4, rng, scale=0.5)
    seen_inside = False
    for eps in np.linspace(0.0, 3.0, 13):
        inside = cone_contains(rm.shifted(eps), spec).contains
        if seen_inside:
            assert inside
        seen_inside = seen_inside or inside


def test_wpic2_ell_of_negative_identity():
    result = ell(make_identity_operator(4).scaled(-1.0), ConeSpec(ConeKind.WPIC2, budget=SMALL_BUDGET))
    assert result.method == "bisection"
    assert result.value == pytest.approx(1.0, abs=1e-5)


def test_complex_frame_and_product_evaluators_agree():
    rng = np.random.default_rng(31)
    spec = ConeSpec(ConeKind.WPIC2, budget=SearchBudget(restarts=16, iterations=150))
    for base in (1.0, -1.0):
        for _ in range(4):
            rm = make_identity_operator(4).scaled(base) + random_curvature_operator(4, rng, scale=0.05)
            assert cone_contains(rm, spec).contains == complex_frame_contains(rm, spec).contains


def test_complex_minimum_sign_on_identity():
    budget = SearchBudget(restarts=8, iterations=100)
    identity = make_identity_operator(4)
    assert min_isotropic_curvature_complex(identity, budget, np.random.default_rng(2)) >= -1e-8
    assert min_isotropic_curvature_complex(identity.scaled(-1.0), budget, np.random.default_rng(2)) < 0


def test_record_round_trip():
    rm = random_curvature_operator(4, np.random.default_rng(0))
    record = to_record(rm)
    assert record["n"] == 4
    assert len(record["entries"]) == 21
    np.testing.assert_array_equal(from_record(record).lambda2_matrix, rm.lambda2_matrix)
