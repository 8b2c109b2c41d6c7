"""
Multiclass LDA, Gaussian naive Bayes and one-vs-one RBF SVM trained by SMO.
"""

import logging
from itertools import combinations
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.spatial.distance import cdist

from mi_tfcsp.errors import DimensionMismatchError, TrainingError
from mi_tfcsp.models import ClassifierKind, ClassifierParams, FloatArray

logger = logging.getLogger(__name__)

SMO_TAU = 1e-12


def _prepare(features, labels, class_count: Optional[int]) -> Tuple[np.ndarray, np.ndarray, int]:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or len(x) != len(y):
        raise TrainingError(f"expected n x d features matching {len(y)} labels, got shape {x.shape}")
    if len(y) == 0:
        raise TrainingError("no training samples")
    if np.any(y < 0):
        raise TrainingError("labels must be non-negative")
    class_count = int(y.max()) + 1 if class_count is None else class_count
    counts = np.bincount(y, minlength=class_count)
    if len(counts) > class_count:
        raise TrainingError(f"label {int(y.max())} outside [0, {class_count})")
    if class_count < 2:
        raise TrainingError("at least 2 classes are required")
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise TrainingError(f"class {int(empty[0])} has no training samples")
    return x, y, class_count


def _check_dimension(x, n_features: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n_features,):
        raise DimensionMismatchError(f"feature vector has shape {x.shape}, model expects ({n_features},)")
    return x


class LdaModel(BaseModel):
    """Shared-covariance Gaussian discriminant"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["lda"] = "lda"
    class_means: FloatArray
    shared_covariance_inverse: FloatArray
    class_priors: FloatArray

    @model_validator(mode="after")
    def _check(self):
        if abs(float(self.class_priors.sum()) - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")
        return self

    @property
    def n_features(self) -> int:
        return self.class_means.shape[1]

    def scores(self, x) -> np.ndarray:
        """Linear discriminant g_c(x) = x^T S^-1 mu_c - mu_c^T S^-1 mu_c / 2 + log prior_c"""
        x = _check_dimension(x, self.n_features)
        weights = self.class_means @ self.shared_covariance_inverse
        offsets = -0.5 * np.sum(weights * self.class_means, axis=1) + np.log(self.class_priors)
        return weights @ x + offsets

    def predict(self, x) -> int:
        return int(np.argmax(self.scores(x)))


class GnbModel(BaseModel):
    """Per-class, per-feature independent Gaussians"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["nvb"] = "nvb"
    means: FloatArray
    variances: FloatArray
    class_priors: FloatArray

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def scores(self, x) -> np.ndarray:
        """log prior + summed Gaussian log-likelihoods"""
        x = _check_dimension(x, self.n_features)
        log_likelihood = -0.5 * np.sum(np.log(2 * np.pi * self.variances) + (x - self.means) ** 2 / self.variances, 1)
        return np.log(self.class_priors) + log_likelihood

    def predict(self, x) -> int:
        return int(np.argmax(self.scores(x)))


class SvmMachine(BaseModel):
    """Binary RBF machine: decision(x) = sum coef_t K(sv_t, x) + bias, positive class when > 0"""

    model_config = ConfigDict(frozen=True)

    positive: int
    negative: int
    support_vectors: FloatArray
    dual_coef: FloatArray
    bias: float
    converged: bool
    iterations: int


class SvmModel(BaseModel):
    """One-vs-one collection of binary machines"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["svm"] = "svm"
    machines: List[SvmMachine]
    gamma: float = Field(gt=0)
    c: float = Field(gt=0)
    class_count: int = Field(ge=2)
    n_features: int = Field(ge=1)

    @property
    def converged(self) -> bool:
        return all(machine.converged for machine in self.machines)

    def decisions(self, x) -> np.ndarray:
        x = _check_dimension(x, self.n_features)
        values = []
        for machine in self.machines:
            kernel = np.exp(-self.gamma * np.sum((machine.support_vectors - x) ** 2, axis=1))
            values.append(float(machine.dual_coef @ kernel + machine.bias))
        return np.array(values)

    def scores(self, x) -> np.ndarray:
        """Votes per class"""
        votes, _ = self._tally(self.decisions(x))
        return votes

    def _tally(self, decisions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        votes = np.zeros(self.class_count)
        margins = np.zeros(self.class_count)
        for machine, value in zip(self.machines, decisions):
            if value > 0:
                votes[machine.positive] += 1
                margins[machine.positive] += abs(value)
            elif value < 0:
                votes[machine.negative] += 1
                margins[machine.negative] += abs(value)
        return votes, margins

    def predict(self, x) -> int:
        """Majority vote; ties by summed decision magnitude, then the lower class index"""
        votes, margins = self._tally(self.decisions(x))
        return min(range(self.class_count), key=lambda c: (-votes[c], -margins[c], c))


ClassifierModel = Union[LdaModel, GnbModel, SvmModel]


def lda_train(features, labels, class_count: Optional[int] = None, ridge: float = 1e-3) -> LdaModel:
    """Pooled within-class covariance plus ridge * trace / d on the diagonal, empirical priors"""
    x, y, class_count = _prepare(features, labels, class_count)
    d = x.shape[1]
    means = np.vstack([x[y == c].mean(axis=0) for c in range(class_count)])
    centred = x - means[y]
    pooled = centred.T @ centred / max(len(x) - class_count, 1)

    shrinkage = ridge * np.trace(pooled) / d
    if shrinkage <= 0:
        # zero scatter (e.g. one sample per class): nearest-mean behaviour
        shrinkage = ridge if ridge > 0 else 1.0
    inverse = linalg.inv(pooled + shrinkage * np.eye(d))

    priors = np.bincount(y, minlength=class_count) / len(y)
    logger.debug("Trained LDA on %d samples, %d features, %d classes", len(y), d, class_count)
    return LdaModel(class_means=means, shared_covariance_inverse=(inverse + inverse.T) / 2, class_priors=priors)


def lda_predict(model: LdaModel, feature) -> Tuple[int, np.ndarray]:
    """Predicted class and the per-class discriminant scores"""
    scores = model.scores(feature)
    return int(np.argmax(scores)), scores


def gnb_train(features, labels, class_count: Optional[int] = None, var_floor: float = 1e-9) -> GnbModel:
    """Maximum-likelihood per-class means and variances, variances floored"""
    x, y, class_count = _prepare(features, labels, class_count)
    means = np.vstack([x[y == c].mean(axis=0) for c in range(class_count)])
    variances = np.vstack([x[y == c].var(axis=0) for c in range(class_count)])
    priors = np.bincount(y, minlength=class_count) / len(y)
    return GnbModel(means=means, variances=np.maximum(variances, var_floor), class_priors=priors)


def gnb_predict(model: GnbModel, feature) -> int:
    return model.predict(feature)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


def default_gamma(features: np.ndarray) -> float:
    """1 / (d * mean feature variance)"""
    d = features.shape[1]
    mean_variance = float(np.mean(np.var(features, axis=0)))
    return 1.0 / (d * mean_variance) if mean_variance > 0 else 1.0 / d


def _smo(kernel: np.ndarray, y: np.ndarray, c: float, tol: float, max_iter: int) -> Tuple[np.ndarray, float, bool, int]:
    """
    SMO on the RBF dual with maximal-violating-pair working set selection.

    Returns the multipliers, rho (decision = sum alpha y K - rho), the convergence flag and the
    iteration count.
    """
    n = len(y)
    q = (y[:, None] * y[None, :]) * kernel
    alpha = np.zeros(n)
    grad = -np.ones(n)
    converged = False
    iteration = 0

    while iteration < max_iter:
        violation = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, violation, -np.inf)))
        j = int(np.argmin(np.where(low, violation, np.inf)))
        if violation[i] - violation[j] < tol:
            converged = True
            break
        iteration += 1

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            curvature = kernel[i, i] + kernel[j, j] - 2 * kernel[i, j]
            delta = (-grad[i] - grad[j]) / max(curvature, SMO_TAU)
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, c - diff
            elif alpha[j] > c:
                alpha[j], alpha[i] = c, c + diff
        else:
            curvature = kernel[i, i] + kernel[j, j] - 2 * kernel[i, j]
            delta = (grad[i] - grad[j]) / max(curvature, SMO_TAU)
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, total - c
                if alpha[j] > c:
                    alpha[j], alpha[i] = c, total - c
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total

        grad += q[:, i] * (alpha[i] - old_i) + q[:, j] * (alpha[j] - old_j)

    return alpha, _rho(alpha, grad, y, c), converged, iteration


def _rho(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, c: float) -> float:
    y_grad = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return float(y_grad[free].mean())
    upper_bound = np.inf
    lower_bound = -np.inf
    at_upper = alpha >= c
    # multipliers at a bound constrain rho from one side depending on the label
    for t in range(len(y)):
        raises_lower = (at_upper[t] and y[t] > 0) or (not at_upper[t] and y[t] < 0)
        if raises_lower:
            lower_bound = max(lower_bound, y_grad[t])
        else:
            upper_bound = min(upper_bound, y_grad[t])
    return float((upper_bound + lower_bound) / 2)


def svm_train(
    features,
    labels,
    class_count: Optional[int] = None,
    c: float = 1.0,
    gamma: Optional[float] = None,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
) -> SvmModel:
    """One-vs-one RBF machines; each pair (a, b) with a < b maps a to +1 and b to -1"""
    x, y, class_count = _prepare(features, labels, class_count)
    gamma = default_gamma(x) if gamma is None else gamma

    machines = []
    for positive, negative in combinations(range(class_count), 2):
        mask = (y == positive) | (y == negative)
        pair_x = x[mask]
        pair_y = np.where(y[mask] == positive, 1.0, -1.0)
        limit = max_iter if max_iter is not None else 10 * len(pair_y)
        alpha, rho, converged, iterations = _smo(rbf_kernel(pair_x, pair_x, gamma), pair_y, c, tol, limit)
        if not converged:
            logger.warning("SMO for classes %d/%d stopped after %d iterations", positive, negative, iterations)
        support = alpha > 0
        machines.append(
            SvmMachine(
                positive=positive,
                negative=negative,
                support_vectors=pair_x[support],
                dual_coef=alpha[support] * pair_y[support],
                bias=-rho,
                converged=converged,
                iterations=iterations,
            )
        )
    logger.debug("Trained %d pairwise SVMs (gamma=%.4g, C=%.4g)", len(machines), gamma, c)
    return SvmModel(machines=machines, gamma=gamma, c=c, class_count=class_count, n_features=x.shape[1])


def svm_predict(model: SvmModel, feature) -> int:
    return model.predict(feature)


def train_classifier(
    kind: ClassifierKind, features, labels, class_count: int, params: Optional[ClassifierParams] = None
) -> ClassifierModel:
    """Dispatch on the configured classifier family"""
    params = params or ClassifierParams()
    kind = ClassifierKind(kind)
    if kind is ClassifierKind.LDA:
        return lda_train(features, labels, class_count, ridge=params.lda_ridge)
    if kind is ClassifierKind.NVB:
        return gnb_train(features, labels, class_count, var_floor=params.gnb_var_floor)
    return svm_train(
        features,
        labels,
        class_count,
        c=params.svm_c,
        gamma=params.svm_gamma,
        tol=params.svm_tol,
        max_iter=params.svm_max_iter,
    )
