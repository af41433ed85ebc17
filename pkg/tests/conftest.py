import numpy as np
import pytest
from hypothesis import settings

from pfnlab.data import Dataset
from pfnlab.model import ModelConfig, init_params
from pfnlab.prior import TaskSpec, make_context_split, sample_task
from pfnlab.task import TaskType

settings.register_profile("pfnlab", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("pfnlab")

TINY = ModelConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32, max_features=8, max_classes=4)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_params():
    return init_params(TINY, 0)


def split3(y, task, seed=0, fracs=(0.5, 0.2)):
    """Deterministic train/val/test split used by the fixtures."""
    n = y.shape[0]
    perm = np.random.default_rng(seed).permutation(n)
    a, b = int(fracs[0] * n), int((fracs[0] + fracs[1]) * n)
    return {"train": np.sort(perm[:a]), "val": np.sort(perm[a:b]), "test": np.sort(perm[b:])}


def synthetic_dataset(task=TaskType.CLASSIFICATION, n=120, m=4, n_classes=3, seed=3, name="toy"):
    spec = TaskSpec(n_samples=n, n_features=m, task_type=task, n_classes=n_classes, max_features=8, max_classes=4)
    t = sample_task(spec, seed)
    return Dataset(name, t.X, t.y, task, split3(t.y, task, seed), t.n_classes)


@pytest.fixture
def cls_dataset():
    return synthetic_dataset(TaskType.CLASSIFICATION)


@pytest.fixture
def reg_dataset():
    return synthetic_dataset(TaskType.REGRESSION, name="toy_reg")


def separable_dataset(n=80, seed=0):
    """Two well-separated Gaussian blobs on the first feature."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 2)) * 0.3
    X[:, 0] += np.where(y == 1, 3.0, -3.0)
    return Dataset("separable", X, y, TaskType.CLASSIFICATION, split3(y, TaskType.CLASSIFICATION, seed), 2)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.LINES):
        terminalreporter.write_line(acceptance_log.LINES[n])
