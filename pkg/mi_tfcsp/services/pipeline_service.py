"""
End-to-end training and evaluation of the time-frequency CSP pipeline, the single-band and
filter-bank CSP baselines, Cohen's kappa scoring and the relative runtime benchmark.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Annotated, Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import mutual_info_score
from threadpoolctl import threadpool_limits

from mi_tfcsp.errors import ArgumentError, DimensionMismatchError, PipelineStageError, RangeError
from mi_tfcsp.models import (
    BenchRatios,
    BenchReport,
    ClassifierKind,
    EpochWindow,
    EvalReport,
    InspectionResult,
    Method,
    MethodTiming,
    PipelineConfig,
    StudyReport,
    StudyRow,
)
from mi_tfcsp.services.classify_service import GnbModel, LdaModel, SvmModel, train_classifier
from mi_tfcsp.services.csp_service import CspModel, extract_features, mean_covariance, multiclass_csp, trial_covariance
from mi_tfcsp.services.data_service import Trial, TrialSet
from mi_tfcsp.services.dsp_service import cached_bandpass, filter_signal, stft
from mi_tfcsp.services.tfa_service import (
    BandEnergyMatrix,
    band_energy_matrix,
    crop_to_selection,
    select_optimal_element,
    select_time_for_band,
    selection_spread,
    subject_frequency_band,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT = "mi-tfcsp-model"
MODEL_VERSION = 1


class TrainingSummary(BaseModel):
    """What a training run decided and how long each stage took"""

    method: Method
    classifier: ClassifierKind
    feature_count: int
    bands: List[Tuple[float, float]]
    subject_freq_start: Optional[float] = None
    freq_start_std: Optional[float] = None
    time_start_std: Optional[float] = None
    selected_feature_bands: Optional[List[Tuple[float, float]]] = None
    csp_fits: int
    stage_seconds: Dict[str, float]


class TrainedPipeline(BaseModel):
    """Everything needed to score a fresh trial"""

    model_config = ConfigDict(frozen=True)

    format: Literal["mi-tfcsp-model"] = MODEL_FORMAT
    version: int = MODEL_VERSION
    method: Method
    config: PipelineConfig
    sampling_rate: float
    channel_count: int
    sample_count: int
    class_count: int
    subject_freq_start: Optional[float] = None
    bands: List[Tuple[float, float]]
    csp_models: List[CspModel]
    selected_features: Optional[List[int]] = None
    classifier: Annotated[Union[LdaModel, GnbModel, SvmModel], Field(discriminator="kind")]
    summary: TrainingSummary


@contextmanager
def _stage(name: str, timings: Dict[str, float]) -> Iterator[None]:
    """Time a training stage and annotate failures with its name"""
    started = time.perf_counter()
    try:
        yield
    except PipelineStageError:
        raise
    except (ValueError, np.linalg.LinAlgError) as e:
        logger.error("Training stage %s failed: %s", name, str(e))
        raise PipelineStageError(name, e) from e
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - started


def epoch_extract(trial_set: TrialSet, window: Optional[EpochWindow] = None, cue_s: Optional[float] = None) -> TrialSet:
    """
    Cut [cue - pre, cue + task + post] out of every trial.

    Without a cue the trials are taken as already epoched (cue at `pre` seconds), so only the duration
    is validated and any tail beyond the window is dropped.
    """
    window = window or EpochWindow()
    if not trial_set.trials:
        return trial_set
    fs = trial_set.sampling_rate
    required = int(round(window.duration_s * fs))
    start = 0 if cue_s is None else int(round((cue_s - window.pre_s) * fs))
    if start < 0 or start + required > trial_set.n_samples:
        raise RangeError(
            f"epoch of {window.duration_s:g} s starting at {start / fs:g} s does not fit trials of "
            f"{trial_set.duration_s:g} s"
        )
    if start == 0 and required == trial_set.n_samples:
        return trial_set
    return trial_set.with_trials(
        [Trial(label=t.label, samples=t.samples[:, start : start + required]) for t in trial_set.trials]
    )


def _check_trainable(train: TrialSet):
    if not train.trials:
        raise ArgumentError("training set is empty")
    counts = np.bincount(train.labels, minlength=train.class_count)
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise ArgumentError(f"class {int(empty[0])} has no training trials")


def _class_covariances(trials: Sequence[Trial], class_count: int) -> List[np.ndarray]:
    grouped: List[List[np.ndarray]] = [[] for _ in range(class_count)]
    for trial in trials:
        grouped[trial.label].append(trial_covariance(trial))
    return [mean_covariance(covs) for covs in grouped]


def _prefilter(trial: Trial, config: PipelineConfig, fs: float) -> Trial:
    spec = config.filter
    iir = cached_bandpass(spec.order, spec.low_hz, spec.high_hz, fs)
    return Trial(label=trial.label, samples=filter_signal(iir, trial.samples))


def trial_energy_matrix(trial: Trial, config: PipelineConfig, fs: float) -> BandEnergyMatrix:
    """Band-energy matrix of an already bandpassed trial"""
    spectrogram = stft(trial.samples, config.stft.window_len, config.stft.hop, fs)
    return band_energy_matrix(spectrogram, config.grid, config.selection_channels)


def _tfcsp_crop(trial: Trial, matrix: BandEnergyMatrix, freq_start: float, config: PipelineConfig, fs: float) -> Trial:
    selection = select_time_for_band(matrix, freq_start)
    return crop_to_selection(trial, freq_start, selection.time_start, config.grid, fs)


def _summary(method: Method, config: PipelineConfig, bands, csp_fits: int, timings, **extra) -> TrainingSummary:
    return TrainingSummary(
        method=method,
        classifier=config.classifier,
        feature_count=config.fbcsp_selected if method is Method.FBCSP else config.n_features,
        bands=bands,
        csp_fits=csp_fits,
        stage_seconds=dict(timings),
        **extra,
    )


def train_tfcsp(train: TrialSet, config: Optional[PipelineConfig] = None) -> TrainedPipeline:
    """
    Time-frequency CSP: bandpass, per-trial band-energy selection, subject frequency band from the
    trial average, per-trial temporal crop, multiclass CSP and the configured classifier.
    """
    config = config or PipelineConfig()
    _check_trainable(train)
    fs = train.sampling_rate
    timings: Dict[str, float] = {}

    with _stage("epoch", timings):
        epochs = epoch_extract(train, config.epoch)
    with _stage("bandpass", timings):
        filtered = [_prefilter(t, config, fs) for t in epochs.trials]
    with _stage("stft", timings):
        matrices = [trial_energy_matrix(t, config, fs) for t in filtered]
    with _stage("band_selection", timings):
        selections = [select_optimal_element(m) for m in matrices]
        freq_start = subject_frequency_band(selections, config.grid)
        freq_std, time_std = selection_spread(selections)
    logger.info("Subject frequency band %.1f-%.1f Hz", freq_start, freq_start + config.grid.freq_band_width)
    with _stage("crop", timings):
        cropped = [_tfcsp_crop(t, m, freq_start, config, fs) for t, m in zip(filtered, matrices)]
    with _stage("covariance", timings):
        class_covs = _class_covariances(cropped, train.class_count)
    with _stage("csp", timings):
        csp = multiclass_csp(class_covs, config.n_features)
    with _stage("features", timings):
        features = np.vstack([extract_features(csp, t) for t in cropped])
    with _stage("classifier", timings):
        classifier = train_classifier(
            config.classifier, features, epochs.labels, train.class_count, config.classifier_params
        )

    band = (freq_start, freq_start + config.grid.freq_band_width)
    return TrainedPipeline(
        method=Method.TFCSP,
        config=config,
        sampling_rate=fs,
        channel_count=train.n_channels,
        sample_count=epochs.n_samples,
        class_count=train.class_count,
        subject_freq_start=freq_start,
        bands=[band],
        csp_models=[csp],
        classifier=classifier,
        summary=_summary(
            Method.TFCSP,
            config,
            [band],
            1,
            timings,
            subject_freq_start=freq_start,
            freq_start_std=freq_std,
            time_start_std=time_std,
        ),
    )


def train_tdcsp(train: TrialSet, config: Optional[PipelineConfig] = None) -> TrainedPipeline:
    """Traditional CSP on the full bandpassed epoch"""
    config = config or PipelineConfig()
    _check_trainable(train)
    fs = train.sampling_rate
    timings: Dict[str, float] = {}

    with _stage("epoch", timings):
        epochs = epoch_extract(train, config.epoch)
    with _stage("bandpass", timings):
        filtered = [_prefilter(t, config, fs) for t in epochs.trials]
    with _stage("covariance", timings):
        class_covs = _class_covariances(filtered, train.class_count)
    with _stage("csp", timings):
        csp = multiclass_csp(class_covs, config.n_features)
    with _stage("features", timings):
        features = np.vstack([extract_features(csp, t) for t in filtered])
    with _stage("classifier", timings):
        classifier = train_classifier(
            config.classifier, features, epochs.labels, train.class_count, config.classifier_params
        )

    band = (config.filter.low_hz, config.filter.high_hz)
    return TrainedPipeline(
        method=Method.TDCSP,
        config=config,
        sampling_rate=fs,
        channel_count=train.n_channels,
        sample_count=epochs.n_samples,
        class_count=train.class_count,
        bands=[band],
        csp_models=[csp],
        classifier=classifier,
        summary=_summary(Method.TDCSP, config, [band], 1, timings),
    )


def mutual_information_scores(features: np.ndarray, labels: np.ndarray, bins: int = 10) -> np.ndarray:
    """Histogram mutual information between each feature column and the labels, equal-frequency bins"""
    scores = []
    for column in np.asarray(features, dtype=np.float64).T:
        edges = np.quantile(column, np.linspace(0.0, 1.0, bins + 1)[1:-1])
        binned = np.searchsorted(edges, column, side="right")
        scores.append(mutual_info_score(labels, binned))
    return np.array(scores)


def select_by_mutual_information(features: np.ndarray, labels: np.ndarray, k: int, bins: int = 10) -> List[int]:
    """Indices of the k most informative columns; equal scores go to the lower index"""
    scores = np.round(mutual_information_scores(features, labels, bins), 12)
    if k > len(scores):
        raise ArgumentError(f"cannot select {k} of {len(scores)} features")
    return sorted(range(len(scores)), key=lambda j: (-scores[j], j))[:k]


def _band_trial(trial: Trial, band: Tuple[float, float], config: PipelineConfig, fs: float) -> Trial:
    iir = cached_bandpass(config.filter.order, band[0], band[1], fs)
    return Trial(label=trial.label, samples=filter_signal(iir, trial.samples))


def train_fbcsp(train: TrialSet, config: Optional[PipelineConfig] = None) -> TrainedPipeline:
    """Filter-bank CSP: one multiclass CSP per band, mutual-information feature selection, classifier"""
    config = config or PipelineConfig()
    _check_trainable(train)
    fs = train.sampling_rate
    timings: Dict[str, float] = {}
    bands = [tuple(b) for b in config.fbcsp_bands]

    with _stage("epoch", timings):
        epochs = epoch_extract(train, config.epoch)
    models = []
    blocks = []
    for band in bands:
        with _stage("filter_bank", timings):
            filtered = [_band_trial(t, band, config, fs) for t in epochs.trials]
        with _stage("covariance", timings):
            class_covs = _class_covariances(filtered, train.class_count)
        with _stage("csp", timings):
            csp = multiclass_csp(class_covs, config.n_features)
        with _stage("features", timings):
            blocks.append(np.vstack([extract_features(csp, t) for t in filtered]))
        models.append(csp)
    with _stage("feature_selection", timings):
        features = np.hstack(blocks)
        selected = select_by_mutual_information(features, epochs.labels, config.fbcsp_selected, config.mi_bins)
    with _stage("classifier", timings):
        classifier = train_classifier(
            config.classifier, features[:, selected], epochs.labels, train.class_count, config.classifier_params
        )

    origins = [bands[j // config.n_features] for j in selected]
    logger.info("FBCSP selected features from bands %s", sorted(set(origins)))
    return TrainedPipeline(
        method=Method.FBCSP,
        config=config,
        sampling_rate=fs,
        channel_count=train.n_channels,
        sample_count=epochs.n_samples,
        class_count=train.class_count,
        bands=bands,
        csp_models=models,
        selected_features=selected,
        classifier=classifier,
        summary=_summary(Method.FBCSP, config, bands, len(models), timings, selected_feature_bands=origins),
    )


TRAINERS: Dict[Method, Callable[[TrialSet, Optional[PipelineConfig]], TrainedPipeline]] = {
    Method.TFCSP: train_tfcsp,
    Method.TDCSP: train_tdcsp,
    Method.FBCSP: train_fbcsp,
}


def train_pipeline(method: Method, train: TrialSet, config: Optional[PipelineConfig] = None) -> TrainedPipeline:
    """Train the pipeline named by `method`"""
    return TRAINERS[Method(method)](train, config)


def pipeline_features(pipeline: TrainedPipeline, trial: Trial) -> np.ndarray:
    """Feature vector of an epoched trial under the frozen preprocessing of a trained pipeline"""
    if trial.n_channels != pipeline.channel_count:
        raise DimensionMismatchError(f"trial has {trial.n_channels} channels, model expects {pipeline.channel_count}")
    if trial.n_samples != pipeline.sample_count:
        raise DimensionMismatchError(f"trial has {trial.n_samples} samples, model expects {pipeline.sample_count}")
    config = pipeline.config
    fs = pipeline.sampling_rate

    if pipeline.method is Method.FBCSP:
        blocks = [
            extract_features(csp, _band_trial(trial, band, config, fs))
            for band, csp in zip(pipeline.bands, pipeline.csp_models)
        ]
        return np.concatenate(blocks)[pipeline.selected_features]

    filtered = _prefilter(trial, config, fs)
    if pipeline.method is Method.TDCSP:
        return extract_features(pipeline.csp_models[0], filtered)

    matrix = trial_energy_matrix(filtered, config, fs)
    cropped = _tfcsp_crop(filtered, matrix, pipeline.subject_freq_start, config, fs)
    return extract_features(pipeline.csp_models[0], cropped)


def predict(pipeline: TrainedPipeline, trial: Trial) -> int:
    """Class index of one epoched trial"""
    return pipeline.classifier.predict(pipeline_features(pipeline, trial))


def cohen_kappa(confusion) -> float:
    """(p_o - p_e) / (1 - p_e) with empirical marginals; 0 when p_e = 1"""
    matrix = np.asarray(confusion, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.size == 0:
        raise ArgumentError(f"confusion must be a non-empty square matrix, got shape {matrix.shape}")
    total = matrix.sum()
    if total <= 0:
        raise ArgumentError("confusion matrix holds no counts")
    observed = np.trace(matrix) / total
    expected = float(np.sum(matrix.sum(axis=1) * matrix.sum(axis=0))) / total**2
    if expected == 1.0:
        return 0.0
    return float((observed - expected) / (1.0 - expected))


def evaluate(pipeline: TrainedPipeline, test: TrialSet, threads: int = 1) -> EvalReport:
    """Confusion matrix (rows = truth), accuracy, kappa and per-class recall over a test set"""
    if test.n_channels != pipeline.channel_count:
        raise DimensionMismatchError(
            f"test set has {test.n_channels} channels, model expects {pipeline.channel_count}"
        )
    if test.class_count != pipeline.class_count:
        raise DimensionMismatchError(f"test set has {test.class_count} classes, model expects {pipeline.class_count}")
    if not test.trials:
        raise ArgumentError("test set is empty")

    epochs = epoch_extract(test, pipeline.config.epoch)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(lambda t: predict(pipeline, t), epochs.trials))
    else:
        predictions = [predict(pipeline, t) for t in epochs.trials]

    confusion = np.zeros((pipeline.class_count, pipeline.class_count), dtype=int)
    np.add.at(confusion, (epochs.labels, np.asarray(predictions, dtype=int)), 1)
    rows = confusion.sum(axis=1)
    recall = np.divide(np.diag(confusion), rows, out=np.zeros(len(rows)), where=rows > 0)
    report = EvalReport(
        method=pipeline.method.value,
        classifier=pipeline.config.classifier.value,
        confusion=confusion.tolist(),
        accuracy=float(np.trace(confusion) / confusion.sum()),
        kappa=cohen_kappa(confusion),
        per_class_recall=recall.tolist(),
    )
    logger.info(
        "Evaluated %s/%s: accuracy %.3f, kappa %.3f", report.method, report.classifier, report.accuracy, report.kappa
    )
    return report


def run_benchmark(
    train: TrialSet,
    test: TrialSet,
    methods: Sequence[Method] = (Method.TFCSP, Method.FBCSP, Method.TDCSP),
    repeats: int = 5,
    config: Optional[PipelineConfig] = None,
) -> BenchReport:
    """
    Median wall-clock time of train + evaluate per method, single-threaded, after one discarded
    warm-up run. A failing method is recorded with its error and the others still run.
    """
    if repeats < 1:
        raise ArgumentError("repeats must be >= 1")
    config = config or PipelineConfig()
    timings = []
    with threadpool_limits(limits=1):
        for method in methods:
            method = Method(method)
            try:
                evaluate(train_pipeline(method, train, config), test)
                seconds = []
                for _ in range(repeats):
                    started = time.perf_counter()
                    evaluate(train_pipeline(method, train, config), test)
                    seconds.append(time.perf_counter() - started)
                median = float(np.median(seconds))
                timings.append(MethodTiming(name=method.value, seconds_median=median, seconds_all=seconds))
                logger.info("Benchmark %s: median %.3f s over %d runs", method.value, median, repeats)
            except Exception as e:  # pylint: disable=broad-exception-caught
                logger.error("Benchmark of %s failed: %s", method.value, str(e))
                timings.append(MethodTiming(name=method.value, error=str(e)))

    medians = {t.name: t.seconds_median for t in timings if t.seconds_median is not None}
    tfcsp = medians.get(Method.TFCSP.value)
    fbcsp = medians.get(Method.FBCSP.value)
    tdcsp = medians.get(Method.TDCSP.value)
    ratios = BenchRatios(
        tfcsp_over_fbcsp=tfcsp / fbcsp if tfcsp and fbcsp else None,
        tfcsp_over_tdcsp=tfcsp / tdcsp if tfcsp and tdcsp else None,
    )
    return BenchReport(
        methods=timings,
        ratios=ratios,
        threads=1,
        repeats=repeats,
        classifier=config.classifier.value,
        percent_faster_than_fbcsp=(1 - ratios.tfcsp_over_fbcsp) * 100 if ratios.tfcsp_over_fbcsp else None,
        percent_slower_than_tdcsp=(ratios.tfcsp_over_tdcsp - 1) * 100 if ratios.tfcsp_over_tdcsp else None,
    )


def run_study(
    subjects: Sequence[Tuple[str, TrialSet, TrialSet]],
    classifiers: Sequence[ClassifierKind] = (ClassifierKind.LDA, ClassifierKind.NVB, ClassifierKind.SVM),
    method: Method = Method.TFCSP,
    config: Optional[PipelineConfig] = None,
    threads: int = 1,
) -> StudyReport:
    """Kappa per subject and classifier, plus the column averages"""
    if not subjects:
        raise ArgumentError("study needs at least one subject")
    config = config or PipelineConfig()
    rows = []
    for name, train, test in subjects:
        kappas = {}
        for kind in classifiers:
            kind = ClassifierKind(kind)
            pipeline = train_pipeline(method, train, config.model_copy(update={"classifier": kind}))
            kappas[kind.value] = evaluate(pipeline, test, threads=threads).kappa
        logger.info("Subject %s: %s", name, kappas)
        rows.append(StudyRow(subject=name, kappa=kappas))
    averages = {
        ClassifierKind(kind).value: float(np.mean([row.kappa[ClassifierKind(kind).value] for row in rows]))
        for kind in classifiers
    }
    return StudyReport(method=Method(method).value, rows=rows, averages=averages)


def inspect_trial(trial_set: TrialSet, index: int, config: Optional[PipelineConfig] = None) -> InspectionResult:
    """Band-energy matrix of one bandpassed trial with its selected element"""
    config = config or PipelineConfig()
    if not 0 <= index < len(trial_set.trials):
        raise ArgumentError(f"trial index {index} outside [0, {len(trial_set.trials)})")
    trial = trial_set.trials[index]
    matrix = trial_energy_matrix(_prefilter(trial, config, trial_set.sampling_rate), config, trial_set.sampling_rate)
    return InspectionResult(
        trial_index=index,
        label=trial.label,
        freq_starts=config.grid.freq_starts.tolist(),
        time_starts=config.grid.time_starts.tolist(),
        energy=matrix.values.tolist(),
        selection=select_optimal_element(matrix),
    )
