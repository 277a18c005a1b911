import numpy as np
import pytest

from mscam.model import ModelConfig, init_model


def tiny_config(**kw) -> ModelConfig:
    base = dict(num_blocks=2, layers_per_block=2, growth_rate=4, stem_channels=4, input_size=(16, 16), num_classes=2)
    base.update(kw)
    return ModelConfig(**base)


def jitter(model, seed=0, scale=0.1):
    """Move every parameter (biases included) off its initial value so no ReLU input sits exactly at 0."""
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data += rng.normal(0.0, scale, p.shape)
    return model


class ArraySet:
    def __init__(self, images, labels):
        self.images = np.asarray(images, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64)

    def __len__(self):
        return len(self.images)


@pytest.fixture
def tiny_model():
    return jitter(init_model(tiny_config(), 0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
