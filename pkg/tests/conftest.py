
import numpy as np
import pytest

from graspgate import evaluation as ev
from graspgate import scenes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class _Suite:
    """Lazily built preset scenes, grids and candidate pools shared across tests."""

    def __init__(self):
        self._scenes, self._grids, self._pools = {}, {}, {}

    def scene(self, task, i):
        key = (task, i)
        if key not in self._scenes:
            self._scenes[key] = scenes.generate_scene(scenes.preset_scenario(task, i))
        return self._scenes[key]

    def grid(self, task, i):
        key = (task, i)
        if key not in self._grids:
            self._grids[key] = scenes.scene_grid(self.scene(task, i))
        return self._grids[key]

    def pool(self, task, i, n=ev.MAIN_POOL, seed_base=ev.MAIN_SEED):
        key = (task, i, n, seed_base)
        if key not in self._pools:
            self._pools[key] = ev.preset_candidates(self.scene(task, i), i, n, seed_base)
        return self._pools[key]

    def all_presets(self):
        for task in scenes.TASKS:
            for i in range(len(scenes.PRESETS[task])):
                yield task, i


@pytest.fixture(scope="session")
def suite():
    return _Suite()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when == "call" and "test_acceptance.py" in rep.nodeid:
                lines.append((rep.nodeid.split("::")[-1], "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
