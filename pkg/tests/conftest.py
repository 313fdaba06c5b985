import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

import hussim
from hussim.acts import PersonalityProfile, UserGoal, movie_schema

SRC = Path(hussim.__file__).parent
MATRIX_SEED = 7

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES = []


def source_digest():
    h = hashlib.sha256()
    for p in sorted(SRC.rglob("*")):
        if p.suffix in (".py", ".json") and "__pycache__" not in p.parts:
            h.update(p.relative_to(SRC).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def schema():
    return movie_schema()


@pytest.fixture
def fig1_goal():
    """Friday, two tickets for Sully; theatre and time left open."""
    return UserGoal(
        {"date": "Friday", "num_tickets": "2", "theatre_name": None, "movie": "Sully", "time": None},
        PersonalityProfile(1.0, 0.0),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def matrix_run(request):
    """Full ``hussim matrix --seed 7`` run: four trained variants and the 1000-goal grid.

    Training takes several minutes, so the output directory is kept in the
    pytest cache keyed by a digest of the package source and reused until
    the code changes.
    """
    from hussim.cli import main

    out = Path(request.config.cache.mkdir(f"hussim-matrix-{source_digest()}"))
    if not (out / "matrix.json").is_file():
        t0 = time.perf_counter()
        code = main(["matrix", "--seed", str(MATRIX_SEED), "--output-dir", str(out)])
        assert code == 0
        (out / "wallclock.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}))
    return out


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {crit}: {detail}")
