"""Shared fixtures: one trained desk-scale setup reused across the suite.

The heavy artifacts (trained classifiers, captures, the attack VAE, the
reference sweep) are session-scoped so the acceptance suite and the unit
tests pay for them once.
"""

import numpy as np
import pytest

from splitlab import attack as attack_mod
from splitlab import channel as channel_mod
from splitlab import datasets as datasets_mod
from splitlab import evaluation as eval_mod
from splitlab import models as models_mod
from splitlab import vae as vae_mod

DATA_SEED = 11
MODEL_SEED = 42
TRAIN_SEED = 7
VAE_SEED = 3
ATTACK_SEED = 123
ALPHA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
CUT_INDEX = 9

_ACCEPTANCE_RESULTS = []


@pytest.fixture
def record_acceptance():
    def _record(name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE_RESULTS.append((name, bool(passed), detail))

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"ACCEPTANCE: {name} -- {status}{suffix}")


@pytest.fixture(scope="session")
def full_data():
    return datasets_mod.make_synthetic(5000, seed=DATA_SEED)


@pytest.fixture(scope="session")
def trainset(full_data):
    return full_data.split(4000)[0]


@pytest.fixture(scope="session")
def testset(full_data):
    return full_data.split(4000)[1]


@pytest.fixture(scope="session")
def tinynet_trained(trainset, testset):
    model = models_mod.build_model("tinynet", MODEL_SEED)
    return models_mod.train_model(model, trainset, epochs=8, seed=TRAIN_SEED,
                                  test_data=testset)


@pytest.fixture(scope="session")
def tinydwnet_trained(trainset, testset):
    model = models_mod.build_model("tinydwnet", MODEL_SEED + 1)
    return models_mod.train_model(model, trainset, epochs=8,
                                  seed=TRAIN_SEED + 1, test_data=testset)


@pytest.fixture(scope="session")
def part9(tinynet_trained):
    return models_mod.partition(tinynet_trained, CUT_INDEX)


def _capture(part, images) -> channel_mod.EavesdropDataset:
    heads = models_mod.forward_head_batch(part, images)
    return channel_mod.EavesdropDataset(
        [models_mod.ActivationTensor(h) for h in heads])


@pytest.fixture(scope="session")
def captures9(part9, trainset):
    return _capture(part9, trainset.images[:4000])


@pytest.fixture(scope="session")
def capture_factory():
    return _capture


@pytest.fixture(scope="session")
def vae2000(captures9):
    config = vae_mod.VaeConfig(input_shape=captures9.shape, epochs=30,
                               seed=VAE_SEED)
    return vae_mod.train_vae(captures9.take(2000), config)


@pytest.fixture(scope="session")
def small_vae(captures9):
    """Cheap VAE for API-level tests; not used for trend measurements."""
    config = vae_mod.VaeConfig(input_shape=captures9.shape, epochs=6,
                               seed=VAE_SEED + 1)
    return vae_mod.train_vae(captures9.take(400), config)


@pytest.fixture(scope="session")
def attack_config():
    return attack_mod.AttackConfig(interpolation="lerp", seed=ATTACK_SEED)


@pytest.fixture(scope="session")
def sweep_lerp(part9, vae2000, testset, attack_config):
    return eval_mod.sweep(part9, vae2000, testset, list(ALPHA_GRID),
                          attack_config, baseline_mode="clean-accuracy")
