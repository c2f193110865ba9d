import sys
from pathlib import Path

import pytest

import gmodelc
from gmodelc import memmap, partition

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def cg_text() -> str:
    return gmodelc.bundled_model_text()


@pytest.fixture(scope="session")
def cg_model(cg_text):
    model = gmodelc.parse_model(cg_text)
    assert gmodelc.validate_conformance(model) == []
    return model


@pytest.fixture(scope="session")
def cg_maps(cg_model):
    return memmap.build_memory_maps(cg_model)


@pytest.fixture(scope="session")
def cg_schedule_d1(cg_model):
    return partition.build_schedule(cg_model, 1)


@pytest.fixture(scope="session")
def cg_schedule_d4(cg_model):
    return partition.build_schedule(cg_model, 4)


def golden_path(name: str) -> Path:
    return GOLDEN_DIR / name
