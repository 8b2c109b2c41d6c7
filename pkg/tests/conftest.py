"""Shared fixtures: synthetic trial sets and trained pipelines."""

# pylint: disable=redefined-outer-name

import pytest  # pylint: disable=import-error

from mi_tfcsp.models import SynthConfig
from mi_tfcsp.services.data_service import generate_synthetic
from mi_tfcsp.services.pipeline_service import train_tfcsp

# beta at half the mu amplitude keeps every trial's band selection on the mu rhythm
MU_DOMINANT = [1.0, 0.5]


@pytest.fixture(scope="session")
def standard_train():
    """4-class, 8-channel, snr 2 training set (40 trials per class), mu-dominant"""
    return generate_synthetic(SynthConfig(seed=7, rhythm_weights=MU_DOMINANT))


@pytest.fixture(scope="session")
def standard_test():
    """Held-out set from the same generator with another seed"""
    return generate_synthetic(SynthConfig(seed=8, rhythm_weights=MU_DOMINANT))


@pytest.fixture(scope="session")
def small_train():
    """Small set for tests that only need a working pipeline"""
    return generate_synthetic(SynthConfig(seed=3, trials_per_class=8, rhythm_weights=MU_DOMINANT))


@pytest.fixture(scope="session")
def small_test():
    return generate_synthetic(SynthConfig(seed=4, trials_per_class=6, rhythm_weights=MU_DOMINANT))


@pytest.fixture(scope="session")
def tfcsp_lda(standard_train):
    """TFCSP + LDA trained on the standard set"""
    return train_tfcsp(standard_train)


@pytest.fixture(scope="session")
def small_tfcsp(small_train):
    return train_tfcsp(small_train)
