import numpy as np
import pytest

from udapose.config import Ablation, ExperimentConfig, TrainConfig
from udapose.data import ImageBank
from udapose.model import PoseNetConfig


def random_bank(n=12, size=32, k=3, seed=0, labeled=True):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 3, size, size), dtype=np.uint8)
    if not labeled:
        return ImageBank(images, source_size=(size, size))
    coords = rng.uniform(4, size - 5, size=(n, k, 2))
    visible = rng.random((n, k)) > 0.1
    return ImageBank(images, coords, visible, (size, size), [f"s{i}" for i in range(n)])


def small_config(**train):
    base = dict(epochs=2, iters_per_epoch=2, batch_size=4, base_lr=1e-3, lr_drop_epochs=(1,),
                warmup_supervised_epochs=1, eta=0.9, occlusion_patch=4, tau_occ=0.05, seed=0)
    base.update(train)
    return ExperimentConfig(model=PoseNetConfig(input_size=32, heatmap_size=16, num_keypoints=3, preset="tiny"),
                            train=TrainConfig(**base), ablation=Ablation(True, True, False, True))


@pytest.fixture
def banks():
    return random_bank(seed=0), random_bank(seed=1, labeled=False), random_bank(n=6, seed=2)
