import logging

import numpy as np
import pytest

from jiadf.config import ModelConfig
from jiadf.utils.dataset import DatasetSpec, generate, split_train_val, tag_test_split


def tiny_model_config(**overrides) -> ModelConfig:
    """Small widths for fast forward/backward checks"""
    params = dict(dc=4, dd=4, dm_raw=3, enc_hidden=5, d_img=6, d_meta=6, d_joint=8, heads=2, head_dim=3,
                  gate_hidden=8, n_classes=3)
    params.update(overrides)
    return ModelConfig(**params)


@pytest.fixture(autouse=True)
def reset_package_logger():
    """CLI tests install handlers on the jiadf logger; hand records back to caplog afterwards"""
    yield
    package_logger = logging.getLogger("jiadf")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def tiny_table():
    """90 well-separated samples, tagged test/train/val"""
    spec = DatasetSpec(n_classes=3, counts=[30, 30, 30], dc=4, dd=4, dm_raw=3, snr_c=4.0, snr_d=4.0, snr_m=4.0,
                       seed=3)
    table = tag_test_split(generate(spec), 0.2, seed=3)
    return split_train_val(table, 0.8, seed=3)
