import pytest

from dorag.embed import HashProjectionProvider


@pytest.fixture(scope="session")
def embedder():
    return HashProjectionProvider(dim=64)
