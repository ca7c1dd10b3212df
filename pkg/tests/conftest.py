import numpy as np
import pytest

from datapaths import toydata, train

# Two-stage schedule: the warm rate escapes the near-identity init, the cool
# rate converges without the oscillation a constant rate shows at this depth.
TOY_RECIPE = dict(warm_epochs=20, warm_lr=0.25, cool_epochs=40, cool_lr=0.08)


def train_toy_model():
    data = toydata.texture_dataset(240, seed=1)
    model = toydata.toy_model_init(seed=7)
    model = train.train_toy(model, data, epochs=TOY_RECIPE["warm_epochs"],
                            learning_rate=TOY_RECIPE["warm_lr"], seed=11)
    model = train.train_toy(model, data, epochs=TOY_RECIPE["cool_epochs"],
                            learning_rate=TOY_RECIPE["cool_lr"], seed=31)
    return model


@pytest.fixture(scope="session")
def toy_model():
    return train_toy_model()


@pytest.fixture(scope="session")
def toy_test_set():
    return toydata.texture_dataset(100, seed=2)
