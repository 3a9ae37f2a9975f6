import copy

import numpy as np
import pytest
import yaml
from hypothesis import strategies as st

from specdec.dist import Distribution
from specdec.experiment import ExperimentConfig, fixture_config_path

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@st.composite
def distributions(draw, vocab=None, min_vocab=1, max_vocab=12):
    v = vocab if vocab is not None else draw(st.integers(min_vocab, max_vocab))
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=v, max_size=v))
    arr = np.array(raw)
    if arr.sum() <= 1e-6:
        arr[draw(st.integers(0, v - 1))] = 1.0
    return Distribution(arr / arr.sum())


@pytest.fixture(scope="session")
def fixture_raw():
    path = fixture_config_path()
    return yaml.safe_load(path.read_text()), path.parent


@pytest.fixture
def make_config(fixture_raw):
    """Build a config from the bundled fixture with the given top-level overrides."""
    raw, base = fixture_raw

    def make(**overrides):
        data = copy.deepcopy(raw)
        data.update(copy.deepcopy(overrides))
        return ExperimentConfig.from_dict(data, base)

    return make
