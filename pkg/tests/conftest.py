from pathlib import Path

import pytest

from acprov import ledger

import support

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def five_roles():
    return support.five_role_genesis()


@pytest.fixture(scope="session")
def genesis(five_roles) -> ledger.GenesisConfig:
    return five_roles[0]


@pytest.fixture(scope="session")
def keys(five_roles):
    return five_roles[1]


@pytest.fixture()
def state(genesis):
    return ledger.genesis_state(genesis)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES
