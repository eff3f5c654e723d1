import pytest
import torch

from ediffsr.schedule import build_schedule


@pytest.fixture
def sched():
    return build_schedule()


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


def rand64(gen, *shape):
    return torch.rand(*shape, generator=gen, dtype=torch.float64)
