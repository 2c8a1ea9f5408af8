import numpy as np
import pytest

from satbench import Image, TrainConfig, init_classifier, synth_dataset, train
from satbench.rng import substream


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h=4, w=4, c=3):
    return Image(rng.uniform(0.0, 1.0, size=(h, w, c)))


@pytest.fixture
def small_dataset():
    return synth_dataset(seed=3, n=16, side=16, channels=3, num_classes=4)


@pytest.fixture(scope="session")
def quick_setup():
    """A briefly-trained 16x16 model plus held-out data for harness tests."""
    train_ds = synth_dataset(seed=31, n=128, side=16, channels=3, num_classes=4)
    test_ds = synth_dataset(seed=32, n=64, side=16, channels=3, num_classes=4)
    model = init_classifier(16, 16, 3, 4, substream(8, 1))
    train(model, train_ds, TrainConfig(epochs=8, batch_size=16, learning_rate=0.05, seed=8))
    return model, test_ds
