import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from quantproxy import load_dataset, load_model  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def convnet():
    return load_model(fixture_path("convnet.json"))


@pytest.fixture(scope="session")
def mlp():
    return load_model(fixture_path("mlp.json"))


@pytest.fixture(scope="session")
def calib16(convnet):
    return load_dataset(fixture_path("calib16.json"), convnet.input_shape)


@pytest.fixture(scope="session")
def eval64(convnet):
    return load_dataset(fixture_path("eval64.json"), convnet.input_shape)


@pytest.fixture(scope="session")
def evaluator(convnet, calib16, eval64):
    from quantproxy.fitness import CandidateEvaluator, EvalSettings
    return CandidateEvaluator(convnet, calib16, eval64, EvalSettings())
