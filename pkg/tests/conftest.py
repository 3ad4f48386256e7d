"""Shared fixtures. Scenario recordings are session-scoped; they are read-only."""

import pytest

from e2e_fixtures import build_scenario


@pytest.fixture(scope="session")
def scenario_all_accept(tmp_path_factory):
    return build_scenario("all_accept", tmp_path_factory.mktemp("scn-accept"))


@pytest.fixture(scope="session")
def scenario_arch_rejected(tmp_path_factory):
    return build_scenario("arch_rejected_twice", tmp_path_factory.mktemp("scn-arch"))


@pytest.fixture(scope="session")
def scenario_exhausted(tmp_path_factory):
    return build_scenario("cap_exhausted", tmp_path_factory.mktemp("scn-exhaust"))
