import numpy as np
import pytest

from mmproto.store import gen_synthetic, split_store


@pytest.fixture
def tiny_store():
    """4 classes x 4 videos, L=3, d=8, two templates; base/novel 2+2."""
    store = gen_synthetic(seed=101, n_classes=4, videos_per_class=4, frames=3,
                          dim=8, class_sep=2.0, text_corr=0.8, n_templates=2)
    names = store.manifest.classes
    return split_store(store, names[:2], [], names[2:])


@pytest.fixture(scope="session")
def separable_store():
    """The strongly separable benchmark store: 10 classes x 20 videos,
    L=8, d=64, class_sep=4, text_corr=0.9; base/novel 5+5."""
    store = gen_synthetic(seed=7, n_classes=10, videos_per_class=20, frames=8,
                          dim=64, class_sep=4.0, text_corr=0.9)
    names = store.manifest.classes
    return split_store(store, names[:5], [], names[5:])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
