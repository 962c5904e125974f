import math

import numpy as np
import pytest

from brwlab.offspring import load_offspring
from brwlab.steps import load_step
from brwlab.trees import Tree


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def binary():
    return load_offspring("binary")


@pytest.fixture(scope="session")
def geometric():
    return load_offspring("geometric:12")


@pytest.fixture(scope="session")
def srw1():
    return load_step("srw:1")


@pytest.fixture(scope="session")
def lazy1():
    return load_step("lazy-srw:1")


class ArenaSpec:
    """Hand-construction helper: a backbone of length `top` plus side nodes."""

    def __init__(self, top):
        self.top = top
        self.parents = list(range(-1, top))
        self.heights = list(range(top + 1))
        self.attach = [-1] * (top + 1)

    def add_node(self, parent, attach_level):
        self.parents.append(parent)
        self.heights.append(self.heights[parent] + 1)
        self.attach.append(attach_level)
        return len(self.parents) - 1

    def add_path(self, level, length):
        """Hang a simple path of `length` nodes below backbone vertex `level`."""
        cur = level
        ids = []
        for _ in range(length):
            cur = self.add_node(cur, level)
            ids.append(cur)
        return ids

    def tree(self, n=None, m=math.inf):
        return Tree(
            parents=np.asarray(self.parents, dtype=np.int64),
            heights=np.asarray(self.heights, dtype=np.int32),
            attach=np.asarray(self.attach, dtype=np.int32),
            backbone=np.arange(self.top + 1),
            n=self.top if n is None else n,
            m=m,
        )


@pytest.fixture(scope="session")
def arena_spec():
    return ArenaSpec
