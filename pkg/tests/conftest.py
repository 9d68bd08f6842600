import copy

import numpy as np
import pytest

from slafnet.experiments import load_config, run_experiment, shipped_configs

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


class ExperimentRuns:
    """First run of every shipped config is cached so the determinism check only adds one rerun each."""

    def __init__(self, root):
        self.root = root
        self.paths = shipped_configs()
        self._cache: dict[str, dict] = {}

    def run(self, name: str, fresh: bool = False) -> dict:
        if name in self._cache and not fresh:
            return self._cache[name]
        cfg = load_config(self.paths[name])
        tag = "rerun" if fresh else "first"
        with np.errstate(all="ignore"):
            summary = run_experiment(cfg, self.root / tag / name)
        if not fresh:
            self._cache[name] = summary
        return copy.deepcopy(summary)


@pytest.fixture(scope="session")
def experiments(tmp_path_factory):
    return ExperimentRuns(tmp_path_factory.mktemp("experiments"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
