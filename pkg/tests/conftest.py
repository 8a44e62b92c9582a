import pathlib

import pytest

from bpimm.model import Pmf2, ModelSpec, load_model
from bpimm import spectral

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "src" / "bpimm" / "fixtures"


@pytest.fixture(scope="session")
def fixture_a_path():
    return FIXTURES / "fixture_a.toml"


@pytest.fixture(scope="session")
def fixture_b_path():
    return FIXTURES / "fixture_b.toml"


@pytest.fixture(scope="session")
def spec_a(fixture_a_path):
    return load_model(fixture_a_path)


@pytest.fixture(scope="session")
def spec_b(fixture_b_path):
    return load_model(fixture_b_path)


@pytest.fixture(scope="session")
def spectral_a(spec_a):
    return spectral.analyze(spec_a)


@pytest.fixture(scope="session")
def spectral_b(spec_b):
    return spectral.analyze(spec_b)


@pytest.fixture(scope="session")
def critical_spec():
    # every particle has exactly one child of random type: rho = 1
    mix = Pmf2.from_pairs([((1, 0), 0.5), ((0, 1), 0.5)])
    imm = Pmf2.from_pairs([((0, 0), 0.5), ((1, 1), 0.5)])
    return ModelSpec(offspring=(mix, mix), immigration=imm, name="critical")
