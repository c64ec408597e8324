import pytest
import torch

from cdsm.generator import GeneratorConfig, init_weights
from cdsm.layer_swap import swap_layers
from cdsm.toydata import ToyDatasetSpec, generate_dataset, stack_images
from cdsm.training import TrainConfig, finetune


@pytest.fixture(scope="session")
def cfg():
    return GeneratorConfig()


@pytest.fixture(scope="session")
def cfg16():
    return GeneratorConfig(output_resolution=16)


@pytest.fixture(scope="session")
def G(cfg):
    return init_weights(cfg, 0)


@pytest.fixture(scope="session")
def G16(cfg16):
    return init_weights(cfg16, 0)


@pytest.fixture(scope="session")
def cartoon_samples():
    return generate_dataset(ToyDatasetSpec("cartoonish", count=64, seed=0))


@pytest.fixture(scope="session")
def face_samples():
    return generate_dataset(ToyDatasetSpec("faceish", count=8, seed=1))


@pytest.fixture(scope="session")
def source(cfg):
    """Stand-in for the pretrained source-domain generator."""
    return init_weights(cfg, 1)


@pytest.fixture(scope="session")
def finetune_run(cfg, cartoon_samples):
    # independently seeded parent so that every tensor differs from `source`
    return finetune(init_weights(cfg, 2), stack_images(cartoon_samples), TrainConfig(steps=200, seed=0))


@pytest.fixture(scope="session")
def target(finetune_run):
    return finetune_run.weights


@pytest.fixture(scope="session")
def swapped(source, target):
    return swap_layers(source, target, 16)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(0)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
