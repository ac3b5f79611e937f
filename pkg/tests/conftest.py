import re

import numpy as np
import pytest

from aneurysm_patchnet.features import build_grid, default_landmarks
from aneurysm_patchnet.phantom import CohortSpec, PhantomSpec, generate_records, generate_subject
from aneurysm_patchnet.sampler import SamplerConfig


@pytest.fixture(scope="session")
def quick_spec():
    return PhantomSpec.quick()


@pytest.fixture(scope="session")
def landmarks():
    return default_landmarks()


@pytest.fixture(scope="session")
def grid():
    return build_grid()


@pytest.fixture(scope="session")
def quick_sampler():
    return SamplerConfig.quick()


@pytest.fixture(scope="session")
def positive_subject(quick_spec):
    return generate_subject(quick_spec, 2, seed=11, subject_id="sub-pos")


@pytest.fixture(scope="session")
def control_subject(quick_spec):
    return generate_subject(quick_spec, 0, seed=12, subject_id="sub-ctl")


@pytest.fixture(scope="session")
def small_cohort(quick_spec):
    """Twelve quick phantoms, five of them positive."""
    return generate_records(CohortSpec(n_subjects=12, prevalence=0.4, seed=3), quick_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion ---------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA[n] = (outcome, m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcome, name = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {outcome}  {name}")
