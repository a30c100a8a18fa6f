import os

import pytest
from hypothesis import HealthCheck, settings

from resilient_options import synthlab
from resilient_options.gbt import GbtConfig
from resilient_options.pipeline import train_bundle

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SMALL_GBT = GbtConfig(n_estimators=300)


@pytest.fixture(scope="session")
def synth_train_12():
    """One training scenario at 12% volatility."""
    return synthlab.pooled_dataset([0.12], synthlab.ROLE_TRAIN, seed=0)


@pytest.fixture(scope="session")
def synth_bundle_12(synth_train_12):
    return train_bundle(synth_train_12, SMALL_GBT, name="s12")


@pytest.fixture(scope="session")
def synth_tests_small():
    return synthlab.test_datasets([0.02, 0.06, 0.10, 0.12, 0.14, 0.20, 0.30], seed=0)
