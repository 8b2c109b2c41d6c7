"""
Common spatial patterns: trace-normalised covariances, whitening, two-class CSP and the
multiclass extension by Jacobi joint approximate diagonalization.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg

from mi_tfcsp.errors import ArgumentError, ConditioningError, DegenerateTrialError, DimensionMismatchError
from mi_tfcsp.models import FloatArray
from mi_tfcsp.services.data_service import Trial

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
RIDGE_FACTOR = 1e-9
MIN_EIGENVALUE = 1e-10
# pairs whose off-diagonal energy is this small relative to their diagonal are left alone
NEGLIGIBLE_PAIR = 1e-30


class CspModel(BaseModel):
    """Whitening P, joint rotation U, projection Q = U^T P and the per-class eigenvalue profiles"""

    model_config = ConfigDict(frozen=True)

    whitening: FloatArray
    rotation: FloatArray
    projection: FloatArray
    composite: FloatArray
    class_eigen: FloatArray
    selected_rows: List[int]
    class_count: int = Field(ge=2)
    converged: bool = True

    @model_validator(mode="after")
    def _check_shapes(self):
        n = self.whitening.shape[0]
        for name in ("whitening", "rotation", "projection", "composite"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"{name} must be {n} x {n}")
        if self.class_eigen.shape != (self.class_count, n):
            raise ValueError(f"class_eigen must be {self.class_count} x {n}")
        if len(set(self.selected_rows)) != len(self.selected_rows):
            raise ValueError("selected rows must be distinct")
        if any(row < 0 or row >= n for row in self.selected_rows):
            raise ValueError(f"selected rows must lie in [0, {n})")
        return self

    @property
    def n_channels(self) -> int:
        return self.whitening.shape[0]

    @property
    def filters(self) -> np.ndarray:
        """Selected rows of Q, one spatial filter per row"""
        return self.projection[self.selected_rows]


class JadResult(BaseModel):
    """Outcome of a joint diagonalization run"""

    model_config = ConfigDict(frozen=True)

    rotation: FloatArray
    converged: bool
    sweeps: int
    cost_history: List[float]


def as_sym_matrix(matrix) -> np.ndarray:
    """Validate symmetry and finiteness, return the exactly symmetrised matrix"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ArgumentError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOL * scale:
        raise ArgumentError("matrix is not symmetric")
    return (matrix + matrix.T) / 2


def _samples(x: Union[Trial, np.ndarray]) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Trial) else x, dtype=np.float64)


def trial_covariance(x: Union[Trial, np.ndarray]) -> np.ndarray:
    """C = X X^T / trace(X X^T)"""
    samples = _samples(x)
    if samples.ndim != 2 or samples.shape[1] < 2:
        raise ArgumentError(f"trial must be channels x time with T >= 2, got shape {samples.shape}")
    scatter = samples @ samples.T
    trace = np.trace(scatter)
    if trace <= 0:
        raise DegenerateTrialError("trial has zero energy; covariance is undefined")
    cov = scatter / trace
    return (cov + cov.T) / 2


def mean_covariance(covariances: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean"""
    if len(covariances) == 0:
        raise ArgumentError("cannot average an empty list of covariances")
    shapes = {np.shape(c) for c in covariances}
    if len(shapes) != 1:
        raise ArgumentError(f"covariances have different shapes: {sorted(shapes)}")
    return np.mean(np.stack(covariances), axis=0)


def _ridged_eigh(composite: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Eigendecomposition of the composite, adding the ridge only when it is needed"""
    n = composite.shape[0]
    eigenvalues, eigenvectors = linalg.eigh(composite)
    if eigenvalues[0] > MIN_EIGENVALUE:
        return eigenvalues, eigenvectors, 0.0

    ridge = RIDGE_FACTOR * np.trace(composite) / n
    logger.warning("Composite covariance near singular (min eigenvalue %.3g); adding ridge %.3g", eigenvalues[0], ridge)
    eigenvalues, eigenvectors = linalg.eigh(composite + ridge * np.eye(n))
    if eigenvalues[0] <= MIN_EIGENVALUE:
        raise ConditioningError(f"composite covariance rank deficient (min eigenvalue {eigenvalues[0]:.3g})")
    return eigenvalues, eigenvectors, ridge


def _whitening(eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> np.ndarray:
    return eigenvectors.T / np.sqrt(eigenvalues)[:, None]


def whitening_from_composite(composite) -> np.ndarray:
    """P = lambda^(-1/2) V^T from C = V lambda V^T, so that P C P^T = I"""
    eigenvalues, eigenvectors, _ = _ridged_eigh(as_sym_matrix(composite))
    return _whitening(eigenvalues, eigenvectors)


def _whiten_classes(class_covs: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
    """Whitening of the class-sum plus the whitened class matrices, which sum to I exactly"""
    covs = [as_sym_matrix(c) for c in class_covs]
    if len({c.shape for c in covs}) != 1:
        raise ArgumentError("class covariances have different shapes")
    n = covs[0].shape[0]
    composite = np.sum(covs, axis=0)
    eigenvalues, eigenvectors, ridge = _ridged_eigh(composite)
    if ridge:
        # split the ridge over the classes so the stored composite stays their exact sum
        covs = [c + (ridge / len(covs)) * np.eye(n) for c in covs]
        composite = composite + ridge * np.eye(n)
    whitening = _whitening(eigenvalues, eigenvectors)
    whitened = []
    for cov in covs:
        w = whitening @ cov @ whitening.T
        whitened.append((w + w.T) / 2)
    return whitening, composite, whitened


def _dispersion_scores(class_eigen: np.ndarray) -> np.ndarray:
    class_count = class_eigen.shape[0]
    return np.sum((class_eigen - 1.0 / class_count) ** 2, axis=0)


def _select_filters(class_eigen: np.ndarray, n_features: int) -> List[int]:
    """Highest eigenvalue-dispersion first; scores equal to 12 decimals tie and go to the lower index"""
    scores = np.round(_dispersion_scores(class_eigen), 12)
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return order[:n_features]


def _check_feature_count(n_features: int, n_channels: int):
    if n_features < 1 or n_features > n_channels:
        raise ArgumentError(f"n_features must lie in [1, {n_channels}], got {n_features}")


def csp_two_class(cl, cr, n_features: Optional[int] = None) -> CspModel:
    """
    Classic two-class CSP.

    W_L = P cl P^T is eigendecomposed with eigenvalues sorted descending; since W_L + W_R = I, the same
    eigenvectors diagonalize W_R with lambda_R = 1 - lambda_L.
    """
    whitening, composite, (w_left, w_right) = _whiten_classes([cl, cr])
    n = composite.shape[0]
    n_features = min(8, n) if n_features is None else n_features
    _check_feature_count(n_features, n)

    eigenvalues, rotation = linalg.eigh(w_left)
    order = np.argsort(eigenvalues)[::-1]
    rotation = rotation[:, order]
    lambda_left = np.diag(rotation.T @ w_left @ rotation)
    lambda_right = np.diag(rotation.T @ w_right @ rotation)
    class_eigen = np.vstack([lambda_left, lambda_right])

    return CspModel(
        whitening=whitening,
        rotation=rotation,
        projection=rotation.T @ whitening,
        composite=composite,
        class_eigen=class_eigen,
        selected_rows=_select_filters(class_eigen, n_features),
        class_count=2,
    )


def off_diagonal_cost(matrices: np.ndarray) -> float:
    """Summed squared off-diagonal entries over a stack of matrices"""
    matrices = np.asarray(matrices, dtype=float)
    off = matrices * (1.0 - np.eye(matrices.shape[-1]))
    return float(np.sum(off**2))


def _rotation_angle(stack: np.ndarray, p: int, q: int) -> Tuple[float, float]:
    """Cosine and sine of the Jacobi angle minimising the pair's joint off-diagonal energy"""
    diff = stack[:, p, p] - stack[:, q, q]
    cross = stack[:, p, q] + stack[:, q, p]
    diagonal_energy = np.dot(stack[:, p, p], stack[:, p, p]) + np.dot(stack[:, q, q], stack[:, q, q])
    if np.dot(cross, cross) <= NEGLIGIBLE_PAIR * diagonal_energy:
        return 1.0, 0.0
    ton = np.dot(diff, diff) - np.dot(cross, cross)
    toff = 2 * np.dot(diff, cross)
    if toff == 0.0 and ton < 0:
        theta = np.pi / 4
    else:
        theta = 0.5 * np.arctan2(toff, ton + np.hypot(ton, toff))
    return float(np.cos(theta)), float(np.sin(theta))


def jad(matrices: Sequence[np.ndarray], tol: float = 1e-9, max_sweeps: int = 100) -> JadResult:
    """
    Orthogonal joint approximate diagonalization by Jacobi plane rotations.

    Each sweep visits every (p, q) pair and applies the rotation that minimises the summed squared
    off-diagonal entries of all U^T A_k U. Stops after a sweep whose rotation sines all stay below tol.
    A sweep that would raise the cost is rolled back and ends the run unconverged, so the recorded cost
    history is non-increasing.
    """
    if len(matrices) == 0:
        raise ArgumentError("jad needs at least one matrix")
    stack = np.stack([as_sym_matrix(m) for m in matrices]).copy()
    n = stack.shape[1]
    rotation = np.eye(n)
    history = [off_diagonal_cost(stack)]
    converged = False
    sweeps = 0

    while sweeps < max_sweeps:
        saved_stack, saved_rotation = stack.copy(), rotation.copy()
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                c, s = _rotation_angle(stack, p, q)
                if abs(s) <= tol:
                    continue
                rotated = True
                col_p, col_q = stack[:, :, p].copy(), stack[:, :, q].copy()
                stack[:, :, p] = c * col_p + s * col_q
                stack[:, :, q] = c * col_q - s * col_p
                row_p, row_q = stack[:, p, :].copy(), stack[:, q, :].copy()
                stack[:, p, :] = c * row_p + s * row_q
                stack[:, q, :] = c * row_q - s * row_p
                vec_p, vec_q = rotation[:, p].copy(), rotation[:, q].copy()
                rotation[:, p] = c * vec_p + s * vec_q
                rotation[:, q] = c * vec_q - s * vec_p
        sweeps += 1
        if not rotated:
            converged = True
            break
        cost = off_diagonal_cost(stack)
        if cost > history[-1]:
            logger.debug("Sweep %d raised the off-diagonal cost to %.3g; rolled back", sweeps, cost)
            stack, rotation = saved_stack, saved_rotation
            break
        history.append(cost)

    if not converged:
        logger.warning("Joint diagonalization stopped after %d sweeps without converging", sweeps)
    logger.debug("Joint diagonalization: %d sweeps, residual cost %.3g", sweeps, history[-1])
    return JadResult(rotation=rotation, converged=converged, sweeps=sweeps, cost_history=history)


def multiclass_csp(class_covs: Sequence[np.ndarray], n_features: int = 8) -> CspModel:
    """
    Multiclass CSP: whiten the class sum, jointly diagonalize the whitened class covariances and keep
    the n_features filters whose class eigenvalues deviate most from 1/M.
    """
    if len(class_covs) < 2:
        raise ArgumentError(f"multiclass CSP needs at least 2 classes, got {len(class_covs)}")
    whitening, composite, whitened = _whiten_classes(class_covs)
    _check_feature_count(n_features, composite.shape[0])

    result = jad(whitened)
    rotation = result.rotation
    class_eigen = np.vstack([np.diag(rotation.T @ w @ rotation) for w in whitened])

    return CspModel(
        whitening=whitening,
        rotation=rotation,
        projection=rotation.T @ whitening,
        composite=composite,
        class_eigen=class_eigen,
        selected_rows=_select_filters(class_eigen, n_features),
        class_count=len(class_covs),
        converged=result.converged,
    )


def extract_features(model: CspModel, x: Union[Trial, np.ndarray]) -> np.ndarray:
    """log(var(Z_j) / sum of selected variances) for every selected filter row j of Z = Q X"""
    samples = _samples(x)
    if samples.shape[0] != model.n_channels:
        raise DimensionMismatchError(f"trial has {samples.shape[0]} channels, model expects {model.n_channels}")
    projected = model.filters @ samples
    variances = np.var(projected, axis=1, ddof=1)
    total = variances.sum()
    if total <= 0:
        raise DegenerateTrialError("projected trial has zero variance; features are undefined")
    with np.errstate(divide="raise"):
        try:
            return np.log(variances / total)
        except FloatingPointError as e:
            raise DegenerateTrialError("a selected filter has zero variance") from e
