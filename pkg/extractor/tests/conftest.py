import pytest

from helpers import build_tree


@pytest.fixture
def tiny_tree(tmp_path):
    data = tmp_path / "data"
    return build_tree(data)
