from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def corpus() -> list[str]:
    lines = (DATA / "smiles_corpus.txt").read_text().splitlines()
    return [line for line in lines if line.strip()]
