import os
from pathlib import Path

import pytest


@pytest.fixture
def fixtures() -> Path:
    return Path(os.environ.get("VOXID_FIXTURE_DIR", Path(__file__).resolve().parents[1] / "fixtures"))
