"""Tests for covariance estimation, whitening, two-class CSP, JAD and multiclass CSP."""

# pylint: disable=redefined-outer-name

from unittest.mock import patch

import numpy as np
import pytest  # pylint: disable=import-error
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles
from scipy.stats import ortho_group

from mi_tfcsp.errors import ArgumentError, DegenerateTrialError, DimensionMismatchError
from mi_tfcsp.services.csp_service import (
    as_sym_matrix,
    csp_two_class,
    extract_features,
    jad,
    mean_covariance,
    multiclass_csp,
    off_diagonal_cost,
    trial_covariance,
    whitening_from_composite,
)
from mi_tfcsp.services.data_service import Trial


def _random_spd(rng, n):
    a = rng.standard_normal((n, 3 * n))
    return a @ a.T / (3 * n)


@pytest.fixture
def inflated_covs():
    """Four classes over eight channels; class c inflates channels 2c and 2c+1"""
    base = np.diag(np.linspace(1.0, 1.7, 8))
    covs = []
    for c in range(4):
        cov = base.copy()
        cov[2 * c, 2 * c] += 3.0
        cov[2 * c + 1, 2 * c + 1] += 3.0
        covs.append(cov)
    return covs


def test_trial_covariance_trace_and_symmetry():
    samples = np.random.default_rng(1).standard_normal((4, 300))
    cov = trial_covariance(Trial(label=0, samples=samples))
    assert np.trace(cov) == pytest.approx(1.0)
    assert np.array_equal(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_trial_covariance_zero_trial():
    with pytest.raises(DegenerateTrialError):
        trial_covariance(Trial(label=0, samples=np.zeros((3, 50))))


def test_mean_covariance():
    a, b = np.eye(2), np.diag([3.0, 1.0])
    assert np.allclose(mean_covariance([a, b]), np.diag([2.0, 1.0]))
    with pytest.raises(ArgumentError):
        mean_covariance([])


def test_as_sym_matrix_rejects_asymmetric():
    with pytest.raises(ArgumentError, match="symmetric"):
        as_sym_matrix([[1.0, 2.0], [0.0, 1.0]])


def test_whitening_identity():
    rng = np.random.default_rng(2)
    composite = _random_spd(rng, 6)
    whitening = whitening_from_composite(composite)
    assert np.allclose(whitening @ composite @ whitening.T, np.eye(6), atol=1e-9)


def test_two_class_eigenvalues_complement():
    cl, cr = np.diag([4.0, 1.0]), np.diag([1.0, 4.0])
    model = csp_two_class(cl, cr)
    assert model.class_eigen[0] == pytest.approx([0.8, 0.2])
    assert model.class_eigen[1] == pytest.approx([0.2, 0.8])
    assert sorted(model.selected_rows) == [0, 1]


def test_two_class_random_complement():
    rng = np.random.default_rng(3)
    model = csp_two_class(_random_spd(rng, 5), _random_spd(rng, 5), n_features=4)
    assert np.allclose(model.class_eigen.sum(axis=0), 1.0)
    assert np.all(np.diff(model.class_eigen[0]) <= 1e-12)
    assert len(model.selected_rows) == 4


def test_jad_recovers_common_basis():
    """Exactly jointly diagonalizable matrices are diagonalized to rounding."""
    rng = np.random.default_rng(4)
    basis = ortho_group.rvs(5, random_state=5)
    matrices = [basis @ np.diag(rng.uniform(0.1, 2.0, 5)) @ basis.T for _ in range(3)]
    result = jad(matrices)

    assert result.converged
    assert np.allclose(result.rotation.T @ result.rotation, np.eye(5), atol=1e-10)
    rotated = np.stack([result.rotation.T @ m @ result.rotation for m in matrices])
    assert off_diagonal_cost(rotated) < 1e-12
    assert all(b <= a for a, b in zip(result.cost_history, result.cost_history[1:]))


def test_two_class_algebra_over_random_pairs():
    """1000 random SPD pairs: complementary eigenvalues and an exact whitening of the composite."""
    rng = np.random.default_rng(12)
    for _ in range(1000):
        n = int(rng.integers(2, 17))
        model = csp_two_class(_random_spd(rng, n), _random_spd(rng, n), n_features=n)
        assert np.allclose(model.class_eigen.sum(axis=0), 1.0, rtol=0, atol=1e-8)
        assert np.allclose(model.whitening @ model.composite @ model.whitening.T, np.eye(n), rtol=0, atol=1e-8)


@pytest.mark.parametrize("n_matrices, n", [(2, 4), (2, 8), (4, 4), (4, 8)])
def test_jad_recovers_constructed_families(n_matrices, n):
    """Families R D_c R^T are diagonalized exactly and R comes back up to sign and order."""
    rng = np.random.default_rng(100 * n_matrices + n)
    for seed in range(50):
        basis = ortho_group.rvs(n, random_state=seed)
        diagonals = [rng.permutation(np.linspace(0.5, 2.0, n)) + rng.uniform(0, 0.05, n) for _ in range(n_matrices)]
        result = jad([basis @ np.diag(d) @ basis.T for d in diagonals])

        assert result.cost_history[-1] <= 1e-12
        assert all(b <= a for a, b in zip(result.cost_history, result.cost_history[1:]))
        overlap = np.abs(basis.T @ result.rotation)
        assert np.all(overlap.max(axis=0) > 0.999)


def test_jad_diagonal_input_is_identity():
    result = jad([np.diag([1.0, 2.0, 3.0]), np.diag([3.0, 1.0, 2.0])])
    assert result.converged
    assert result.sweeps == 1
    assert np.array_equal(result.rotation, np.eye(3))


def test_jad_non_convergence_reported():
    rng = np.random.default_rng(6)
    result = jad([_random_spd(rng, 6) for _ in range(4)], max_sweeps=1)
    assert not result.converged
    assert result.sweeps == 1


def test_multiclass_identity_sum(inflated_covs):
    model = multiclass_csp(inflated_covs)
    whitened_sum = sum(model.whitening @ c @ model.whitening.T for c in inflated_covs)
    assert np.allclose(whitened_sum, np.eye(8), atol=1e-10)
    assert np.allclose(model.class_eigen.sum(axis=0), 1.0)


def test_multiclass_filters_follow_inflated_pairs(inflated_covs):
    """Each class peaks on a filter living in its inflated channel pair."""
    model = multiclass_csp(inflated_covs, n_features=8)
    for c in range(4):
        row = int(np.argmax(model.class_eigen[c]))
        filt = model.projection[row]
        alignment = np.linalg.norm(filt[[2 * c, 2 * c + 1]]) / np.linalg.norm(filt)
        assert alignment > 0.9


def test_multiclass_filters_follow_rotated_pairs(inflated_covs):
    """Same property after mixing the channels with a random orthogonal matrix."""
    mixing = ortho_group.rvs(8, random_state=11)
    mixed = [mixing @ c @ mixing.T for c in inflated_covs]
    model = multiclass_csp(mixed, n_features=8)
    assert model.converged
    for c in range(4):
        row = int(np.argmax(model.class_eigen[c]))
        filt = model.projection[row]
        subspace = mixing[:, [2 * c, 2 * c + 1]]
        alignment = np.linalg.norm(subspace.T @ filt) / np.linalg.norm(filt)
        assert alignment > 0.9


def test_multiclass_selects_requested_count(inflated_covs):
    model = multiclass_csp(inflated_covs, n_features=3)
    assert len(model.selected_rows) == 3
    assert model.filters.shape == (3, 8)


def test_ridge_repairs_rank_deficiency():
    """A channel that is silent in every class gets the ridge; the stored composite whitens to I."""
    rng = np.random.default_rng(7)
    covs = []
    for _ in range(3):
        cov = np.zeros((4, 4))
        cov[:3, :3] = _random_spd(rng, 3)
        covs.append(cov)
    model = multiclass_csp(covs, n_features=2)
    assert np.allclose(model.whitening @ model.composite @ model.whitening.T, np.eye(4), atol=1e-6)
    assert model.composite[3, 3] > 0


@pytest.mark.parametrize("n_features", [0, 9])
def test_feature_count_bounds(inflated_covs, n_features):
    with pytest.raises(ArgumentError):
        multiclass_csp(inflated_covs, n_features=n_features)


def test_single_class_rejected(inflated_covs):
    with pytest.raises(ArgumentError):
        multiclass_csp(inflated_covs[:1])


def test_features_are_log_ratios(inflated_covs):
    model = multiclass_csp(inflated_covs, n_features=4)
    samples = np.random.default_rng(8).standard_normal((8, 250))
    features = extract_features(model, samples)
    assert features.shape == (4,)
    assert np.sum(np.exp(features)) == pytest.approx(1.0)
    assert np.all(features < 0)


def test_features_reject_wrong_channels(inflated_covs):
    model = multiclass_csp(inflated_covs)
    with pytest.raises(DimensionMismatchError):
        extract_features(model, np.ones((6, 100)))


def test_features_reject_zero_trial(inflated_covs):
    model = multiclass_csp(inflated_covs)
    with pytest.raises(DegenerateTrialError):
        extract_features(model, np.zeros((8, 100)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1), classes=st.integers(min_value=2, max_value=5))
def test_multiclass_invariants_property(seed, classes):
    """For any SPD class covariances the whitened classes sum to I and the rotation stays orthogonal."""
    rng = np.random.default_rng(seed)
    covs = [_random_spd(rng, 5) for _ in range(classes)]
    model = multiclass_csp(covs, n_features=5)
    assert np.allclose(model.whitening @ model.composite @ model.whitening.T, np.eye(5), atol=1e-8)
    assert np.allclose(model.rotation.T @ model.rotation, np.eye(5), atol=1e-8)
    assert np.allclose(model.class_eigen.sum(axis=0), 1.0, atol=1e-8)
    history = jad([model.whitening @ c @ model.whitening.T for c in covs]).cost_history
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_multiclass_with_two_classes_matches_two_class_csp():
    """For M = 2 the joint diagonalization spans the same filter subspace as the classic eigenproblem."""
    rng = np.random.default_rng(13)
    for _ in range(20):
        cl, cr = _random_spd(rng, 6), _random_spd(rng, 6)
        classic = csp_two_class(cl, cr, n_features=4)
        joint = multiclass_csp([cl, cr], n_features=4)
        assert np.max(subspace_angles(classic.filters.T, joint.filters.T)) < 1e-6
        assert np.allclose(np.sort(joint.class_eigen[0]), np.sort(classic.class_eigen[0]), atol=1e-9)


def test_multiclass_whitening_is_whitening_of_stored_composite(inflated_covs):
    model = multiclass_csp(inflated_covs)
    reference = whitening_from_composite(model.composite)
    assert np.allclose(np.abs(model.whitening), np.abs(reference), atol=1e-12)


@pytest.mark.parametrize("scale", [1e-4, 0.3, 25.0, 1e5])
def test_features_ignore_trial_scale(inflated_covs, scale):
    model = multiclass_csp(inflated_covs, n_features=6)
    samples = np.random.default_rng(14).standard_normal((8, 300))
    assert np.allclose(extract_features(model, scale * samples), extract_features(model, samples), atol=1e-10)


def test_features_match_explicit_computation(inflated_covs):
    model = multiclass_csp(inflated_covs, n_features=5)
    samples = np.random.default_rng(15).standard_normal((8, 200))
    variances = []
    for row in model.selected_rows:
        z = [float(np.dot(model.projection[row], samples[:, t])) for t in range(200)]
        mean = sum(z) / len(z)
        variances.append(sum((v - mean) ** 2 for v in z) / (len(z) - 1))
    expected = [np.log(v / sum(variances)) for v in variances]
    assert extract_features(model, samples) == pytest.approx(expected, abs=1e-10)


def test_jad_single_matrix_finds_its_eigenvalues():
    rng = np.random.default_rng(16)
    for n in (2, 5, 9):
        matrix = _random_spd(rng, n)
        result = jad([matrix])
        rotated = result.rotation.T @ matrix @ result.rotation
        assert off_diagonal_cost(rotated[None]) < 1e-14
        assert np.allclose(np.sort(np.diag(rotated)), np.linalg.eigvalsh(matrix), atol=1e-10)


def test_jad_rolled_back_sweep_is_not_convergence():
    """A sweep that raises the cost is undone and the run is reported unconverged."""
    rng = np.random.default_rng(17)
    matrices = [_random_spd(rng, 4) for _ in range(2)]
    with patch("mi_tfcsp.services.csp_service.off_diagonal_cost", side_effect=[1.0, 2.0]):
        result = jad(matrices)
    assert not result.converged
    assert result.sweeps == 1
    assert result.cost_history == [1.0]
    assert np.array_equal(result.rotation, np.eye(4))


def test_off_diagonal_cost_keeps_tiny_residuals():
    matrix = np.diag([1e8, 2e8, 3e8])
    matrix[0, 1] = matrix[1, 0] = 1e-9
    assert off_diagonal_cost(matrix[None]) == pytest.approx(2e-18, rel=1e-12)
