import numpy as np
import pytest

from seqbias.synth import (DatasetConfig, FeatureKind, FeatureSpec,
                           generate_dataset)
from seqbias.model import TrainConfig, train


TINY_TRAIN = TrainConfig(rng_seed=7, max_epochs=40, patience=6)


@pytest.fixture(scope="session")
def tiny_clean_dataset():
    cfg = DatasetConfig(feature=None, seq_len=3, n_train=400, n_val=200,
                        n_test=200, rng_seed=7)
    return generate_dataset(cfg)


@pytest.fixture(scope="session")
def tiny_biased_dataset():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.BACKGROUND),
                        seq_len=3, feature_span=2, target_cramers_v=0.95,
                        n_train=600, n_val=300, n_test=300, rng_seed=7)
    return generate_dataset(cfg)


@pytest.fixture(scope="session")
def tiny_biased_model(tiny_biased_dataset):
    return train(tiny_biased_dataset, TINY_TRAIN, temporal=True)


@pytest.fixture(scope="session")
def tiny_records(tiny_biased_model, tiny_biased_dataset):
    from seqbias.discovery import compute_records
    return compute_records(tiny_biased_model, tiny_biased_dataset, "val")


def rng(seed=0):
    return np.random.default_rng(seed)
