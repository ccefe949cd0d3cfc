import pytest
import torch

from rend2real.generators import GeneratorConfig, clone_for_finetune, toy_generator


def tiny_config(resolution=16):
    return GeneratorConfig(resolution=resolution, z_dim=32, w_dim=32, channel_base=256, channel_max=64)


@pytest.fixture
def tiny_g():
    return toy_generator(tiny_config(), seed=0)


@pytest.fixture
def tiny_pair():
    return clone_for_finetune(toy_generator(tiny_config(), seed=0))


@pytest.fixture(autouse=True)
def _deterministic():
    torch.manual_seed(0)
    yield
