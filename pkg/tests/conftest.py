from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k"


@pytest.fixture(scope="session")
def ml100k_dir():
    if not (ML100K / "u.data").exists():
        pytest.skip("MovieLens-100K not found under data/ml-100k (see README)")
    return ML100K
