import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from medaid.corpus import default_catalog

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def fixture_corpus_path() -> Path:
    return DATA_DIR / "mddial_fixture_train.json"


@pytest.fixture(scope="session")
def table5_log_path() -> Path:
    return DATA_DIR / "table5_predictions.jsonl"
