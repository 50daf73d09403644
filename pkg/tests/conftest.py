from pathlib import Path

import pytest

from midsmith.model import Vocabulary, load_dataset
from midsmith.protocol import PromptTemplates
from midsmith.store import ImageStore

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def mini_dataset():
    return load_dataset(FIXTURES / "dialogben_mini.jsonl")


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.load(FIXTURES / "vocab.json")


@pytest.fixture(scope="session")
def templates():
    return PromptTemplates()


@pytest.fixture
def image_store(tmp_path):
    return ImageStore(tmp_path / "images", extra_dirs=(FIXTURES / "assets",))
