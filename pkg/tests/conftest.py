import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from emoguard import _kernels  # noqa: E402

ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record_acceptance(key: str, passed: bool | None, detail: str = "") -> None:
    status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[passed]
    ACCEPTANCE[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{status:8s} {key}  {detail}")


@pytest.fixture(params=sorted(_kernels.BACKENDS))
def backend(request):
    before = _kernels.backend_name()
    _kernels.use_backend(request.param)
    yield request.param
    _kernels.use_backend(before)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def corpus_root(name: str) -> Path | None:
    value = os.environ.get(f"EMOGUARD_{name.upper()}_ROOT")
    return Path(value) if value and Path(value).is_dir() else None
