import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_assets():
    from autorig.synthgen import default_specs, generate

    return [generate(s) for s in default_specs(4, seed=100, joint_range=(3, 6))]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {
    1: "tokenization round trip",
    2: "ordering canonicality",
    3: "gradient checks",
    4: "skeleton-stage trainability",
    5: "geodesic correctness",
    6: "diffusion identities",
    7: "skinning-stage overfit",
    8: "metric suite oracles",
    9: "LBS invariants",
    10: "end-to-end determinism",
}
_acceptance: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""

    def put(number: int, ok: bool, detail: str = "") -> None:
        _acceptance[number] = (bool(ok), detail)

    return put


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion_") and report.failed:
        number = int(name.split("_")[2])
        _acceptance.setdefault(number, (False, f"{report.when} raised before a result was recorded"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n not in _acceptance:
            terminalreporter.write_line(f"[SKIP] {n:2d}. {name}: not run")
            continue
        ok, detail = _acceptance[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
