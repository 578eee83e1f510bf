import os
from pathlib import Path

import pytest

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def vlsp_train_path():
    """Path of the VLSP 2019 training csv, if provided through VIHSD_VLSP_TRAIN."""
    value = os.environ.get("VIHSD_VLSP_TRAIN")
    return Path(value) if value and Path(value).is_file() else None


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
