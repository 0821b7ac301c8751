from __future__ import annotations

import pathlib
import sys

import pytest

SRC = pathlib.Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from condsym.catalog import Catalog, get_catalog  # noqa: E402


@pytest.fixture(scope="session")
def catalog() -> Catalog:
    """The packaged catalog, loaded and validated once per run."""
    return get_catalog()
