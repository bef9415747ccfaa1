from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

from privtab.rng import RandomSource

REPO_ROOT = Path(__file__).resolve().parent.parent
SCRIPTS = REPO_ROOT / "scripts"

SAMPLE_ROWS = 10_000
SAMPLE_SEED = 20260808


@pytest.fixture(scope="session")
def sample_csv(tmp_path_factory) -> Path:
    """The bundled 10-column sample dataset, generated once per session."""
    out = tmp_path_factory.mktemp("sample") / "sample.csv"
    subprocess.run(
        [
            sys.executable,
            str(SCRIPTS / "make_sample_data.py"),
            "--rows", str(SAMPLE_ROWS),
            "--seed", str(SAMPLE_SEED),
            "--out", str(out),
        ],
        check=True,
        capture_output=True,
    )
    return out


@pytest.fixture
def make_src():
    def _make(master_seed: int = 20260808, stream_id: int = 0) -> RandomSource:
        return RandomSource(master_seed, stream_id)

    return _make
