from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from mapfree.config import RunConfig
from mapfree.dataset import generate_synthetic_dataset
from mapfree.pipeline import train_cost, train_gan
from mapfree.scenarios import scenario_suite
from mapfree.simulator import run_closed_loop

_CRITERIA: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    name = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[name] = "PASS" if rep.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _CRITERIA.items():
        terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture(scope="session")
def config() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def dataset(config):
    """The default synthetic dataset (250 frames, seed 0)."""
    return generate_synthetic_dataset(config)


@pytest.fixture(scope="session")
def cost_report(config, dataset):
    return train_cost(config, dataset)


@pytest.fixture(scope="session")
def trained_model(cost_report):
    return cost_report.result.model


@pytest.fixture(scope="session")
def gan_result(config, trained_model):
    cfg = replace(config, training=replace(config.training, freeze_evaluator=True))
    return train_gan(trained_model, cfg, scene="corridor")


@pytest.fixture(scope="session")
def suite_runs():
    """One closed-loop run per built-in scenario, with every decision kept."""
    return {sc.name: run_closed_loop(sc, keep_decisions=True) for sc in scenario_suite()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
