"""Tests for LDA, Gaussian naive Bayes and the one-vs-one SMO SVM."""

from unittest.mock import patch

import numpy as np
import pytest  # pylint: disable=import-error

from mi_tfcsp.errors import DimensionMismatchError, TrainingError
from mi_tfcsp.models import ClassifierKind, ClassifierParams
from mi_tfcsp.services.classify_service import (
    GnbModel,
    LdaModel,
    SvmModel,
    gnb_predict,
    gnb_train,
    lda_predict,
    lda_train,
    svm_predict,
    svm_train,
    train_classifier,
)

XOR_X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
XOR_Y = np.array([0, 0, 1, 1])


def _blobs(seed=0, per_class=30, centres=((0, 0), (4, 0), (0, 4))):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(c, 0.5, size=(per_class, len(c))) for c in centres])
    y = np.repeat(np.arange(len(centres)), per_class)
    return x, y


def test_lda_separable_blobs():
    x, y = _blobs()
    model = lda_train(x, y)
    assert isinstance(model, LdaModel)
    assert np.mean([model.predict(v) for v in x]) == 1.0
    assert model.class_priors == pytest.approx([1 / 3] * 3)


def test_lda_equidistant_tie_goes_to_lower_class():
    x = np.array([[0.0, -1.0], [0.0, 1.0], [10.0, -1.0], [10.0, 1.0]])
    model = lda_train(x, [0, 0, 1, 1])
    label, scores = lda_predict(model, [5.0, 0.0])
    assert scores[0] == pytest.approx(scores[1])
    assert label == 0


def test_lda_one_sample_per_class():
    """Zero within-class scatter falls back to nearest-mean behaviour."""
    model = lda_train([[0.0, 0.0], [3.0, 3.0]], [0, 1])
    assert np.all(np.isfinite(model.shared_covariance_inverse))
    assert lda_predict(model, [0.5, 0.2])[0] == 0
    assert lda_predict(model, [2.5, 2.9])[0] == 1


def test_lda_scores_match_discriminant_formula():
    x, y = _blobs(seed=6)
    model = lda_train(x, y)
    point = np.array([1.3, -0.4])
    sigma_inv = model.shared_covariance_inverse
    expected = [
        point @ sigma_inv @ mu - 0.5 * mu @ sigma_inv @ mu + np.log(prior)
        for mu, prior in zip(model.class_means, model.class_priors)
    ]
    assert lda_predict(model, point)[1] == pytest.approx(expected, abs=1e-10)


def test_lda_duplicated_feature_column():
    x, y = _blobs(seed=7)
    model = lda_train(np.column_stack([x, x[:, 0]]), y)
    assert np.all(np.isfinite(model.shared_covariance_inverse))
    assert model.predict([4.0, 0.0, 4.0]) == 1


def test_gnb_boundary():
    x = np.array([[-1.0], [1.0], [4.0], [6.0]])
    model = gnb_train(x, [0, 0, 1, 1])
    assert isinstance(model, GnbModel)
    assert gnb_predict(model, [2.4]) == 0
    assert gnb_predict(model, [2.6]) == 1


def test_gnb_constant_feature_is_floored():
    x = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 5.0], [2.0, 6.0]])
    model = gnb_train(x, [0, 0, 1, 1])
    assert np.all(model.variances > 0)
    assert np.all(np.isfinite(model.scores([1.0, 0.5])))
    assert gnb_predict(model, [1.0, 0.5]) == 0


def test_svm_xor():
    """XOR with gamma 2 and C 1: all multipliers at C, decisions +-0.748."""
    model = svm_train(XOR_X, XOR_Y, gamma=2.0, c=1.0)
    assert isinstance(model, SvmModel)
    machine = model.machines[0]
    assert machine.converged
    assert np.abs(machine.dual_coef) == pytest.approx([1.0] * 4)
    expected = 1 + np.exp(-4.0) - 2 * np.exp(-2.0)
    for point, label in zip(XOR_X, XOR_Y):
        decision = model.decisions(point)[0]
        assert abs(decision) == pytest.approx(expected, abs=1e-3)
        assert svm_predict(model, point) == label


def test_svm_multiclass_blobs():
    x, y = _blobs(seed=1)
    model = svm_train(x, y)
    assert len(model.machines) == 3
    assert [(m.positive, m.negative) for m in model.machines] == [(0, 1), (0, 2), (1, 2)]
    assert model.converged
    assert np.mean([model.predict(v) for v in x]) > 0.97


def test_svm_vote_tie_uses_margins():
    """Each class wins one machine; the largest summed decision magnitude decides, then the lower index."""
    x, y = _blobs(seed=2)
    model = svm_train(x, y)
    # (0,1) -> 0, (0,2) -> 2, (1,2) -> 1
    votes, margins = model._tally(np.array([0.5, -0.3, 0.9]))  # pylint: disable=protected-access
    assert list(votes) == [1, 1, 1]
    assert list(margins) == pytest.approx([0.5, 0.9, 0.3])

    with patch.object(SvmModel, "decisions", return_value=np.array([0.5, -0.3, 0.9])):
        assert model.predict(x[0]) == 1
    with patch.object(SvmModel, "decisions", return_value=np.array([0.5, -0.5, 0.5])):
        assert model.predict(x[0]) == 0
    with patch.object(SvmModel, "decisions", return_value=np.array([0.0, 0.0, -0.4])):
        assert model.predict(x[0]) == 2


def test_svm_contradictory_points():
    """Identical points with opposite labels still yield a bounded model."""
    x = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [3.0, 3.0]])
    y = np.array([0, 1, 0, 1])
    model = svm_train(x, y, c=1.0, gamma=0.5)
    machine = model.machines[0]
    assert np.all(np.abs(machine.dual_coef) <= 1.0 + 1e-12)
    assert isinstance(machine.converged, bool)
    assert np.isfinite(machine.bias)


def test_svm_iteration_cap_reports_non_convergence():
    x, y = _blobs(seed=3, centres=((0, 0), (1, 0)))
    model = svm_train(x, y, max_iter=1)
    assert not model.converged
    assert model.machines[0].iterations == 1


def test_dimension_mismatch_on_predict():
    model = lda_train(XOR_X, XOR_Y)
    with pytest.raises(DimensionMismatchError):
        model.predict([1.0, 2.0, 3.0])


@pytest.mark.parametrize(
    "features, labels, class_count",
    [
        (np.zeros((0, 2)), [], None),
        (np.ones((3, 2)), [0, 0, 0], None),
        (np.ones((3, 2)), [0, 2, 2], 3),
        (np.ones((3, 2)), [0, 1], None),
    ],
)
def test_training_rejects_bad_inputs(features, labels, class_count):
    for train in (lda_train, gnb_train, svm_train):
        with pytest.raises(TrainingError):
            train(features, labels, class_count)


@pytest.mark.parametrize("kind, model_type", [("lda", LdaModel), ("nvb", GnbModel), ("svm", SvmModel)])
def test_train_classifier_dispatch(kind, model_type):
    x, y = _blobs(seed=4)
    model = train_classifier(ClassifierKind(kind), x, y, 3, ClassifierParams(svm_c=2.0))
    assert isinstance(model, model_type)
    assert model.kind == kind
    assert model.predict(x[0]) == 0


def test_models_survive_json_round_trip():
    x, y = _blobs(seed=5)
    for kind in ClassifierKind:
        model = train_classifier(kind, x, y, 3)
        restored = type(model).model_validate_json(model.model_dump_json())
        for v in x[::7]:
            assert restored.predict(v) == model.predict(v)


@pytest.mark.parametrize("kind", list(ClassifierKind))
def test_training_is_deterministic(kind):
    x, y = _blobs(seed=8)
    first = train_classifier(kind, x, y, 3)
    second = train_classifier(kind, x.copy(), y.copy(), 3)
    assert first.model_dump_json() == second.model_dump_json()


@pytest.mark.parametrize("kind", list(ClassifierKind))
def test_feature_order_does_not_change_predictions(kind):
    x, y = _blobs(seed=9, centres=((0, 0, 0), (3, 0, 1), (0, 3, -1)))
    order = [2, 0, 1]
    model = train_classifier(kind, x, y, 3)
    shuffled = train_classifier(kind, x[:, order], y, 3)
    points = np.vstack([x, np.random.default_rng(10).uniform(-1, 4, size=(40, 3))])
    assert [model.predict(v) for v in points] == [shuffled.predict(v[order]) for v in points]


@pytest.mark.parametrize("train", [lda_train, gnb_train])
def test_doubling_a_prior_never_lowers_that_class_score(train):
    x, y = _blobs(seed=11)
    model = train(x, y)
    points = np.random.default_rng(12).uniform(-2, 6, size=(25, 2))
    for label in range(3):
        priors = np.array(model.class_priors, dtype=float)
        priors[label] *= 2
        boosted = model.model_copy(update={"class_priors": priors / priors.sum()})
        for point in points:
            assert boosted.scores(point)[label] >= model.scores(point)[label]


def test_svm_dual_coefficients_balance():
    """Every machine keeps sum(alpha_t * y_t) at zero."""
    x, y = _blobs(seed=13, centres=((0, 0), (1.5, 0), (0, 1.5), (1.5, 1.5)))
    model = svm_train(x, y, c=2.0)
    assert len(model.machines) == 6
    for machine in model.machines:
        assert abs(float(np.sum(machine.dual_coef))) <= 1e-6
