import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from vpntk import DPNTK, VPNTK, data
from vpntk.exceptions import InvalidArgumentError


@pytest.fixture(scope="module")
def small():
    train, test, _ = data.toy3(0, n_train=300, n_test=90)
    return train, test


def test_params_roundtrip():
    est = VPNTK(kappa=8.0, eta=0.1)
    params = est.get_params()
    assert params["kappa"] == 8.0 and params["eta"] == 0.1 and params["alpha"] == 0.05
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(kappa=2.0)
    assert twin.kappa == 2.0 and est.kappa == 8.0
    assert DPNTK().get_params()["max_steps"] == 500


def test_not_fitted():
    with pytest.raises(NotFittedError):
        VPNTK().sample(2)


def test_fit_sample_transform(small):
    train, test = small
    labels = np.array(["bar-h", "bar-v", "blob"])[train.labels]
    est = VPNTK(max_steps=5, n_per_class=8, private=False).fit(train.images, labels)
    assert est.private_read_count == 1 and est.guard_.sealed
    assert list(est.classes_) == ["bar-h", "bar-v", "blob"]
    x, y = est.sample(4, seed=1)
    assert x.shape == (12, 64) and set(y) == set(est.classes_)
    assert est.transform(test.images).shape == (90, 64)
    flat = est.transform(test.images.reshape(90, -1))
    assert np.array_equal(flat, est.transform(test.images))


def test_fit_accepts_flat_images(small):
    train, _ = small
    a = VPNTK(max_steps=2, n_per_class=4).fit(train.images, train.labels)
    b = VPNTK(max_steps=2, n_per_class=4).fit(train.images.reshape(300, -1), train.labels)
    assert np.array_equal(a.prompts_.prompts.detach().numpy(), b.prompts_.prompts.detach().numpy())


def test_pixel_space(small):
    train, test = small
    est = VPNTK(prompt_space="pixel", max_steps=2, n_per_class=4).fit(train.images, train.labels)
    x, _ = est.sample(3)
    assert x.shape == (9, 256) and x.min() >= 0 and x.max() <= 1
    assert est.transform(test.images).shape == (90, 256)


def test_refits_release_again(small):
    # every fit is its own release with its own guard
    train, _ = small
    est = VPNTK(max_steps=1, n_per_class=2)
    first = est.fit(train.images, train.labels).guard_
    second = est.fit(train.images, train.labels).guard_
    assert first is not second and second.private_read_count == 1


def test_single_class_rejected(small):
    train, _ = small
    with pytest.raises(InvalidArgumentError):
        VPNTK(max_steps=1).fit(train.images, np.zeros(300, dtype=int))


def test_dpntk_fit_sample(small):
    train, test = small
    est = DPNTK(max_steps=3, n_per_class=4).fit(train.images, train.labels)
    assert est.private_read_count == 1 and est.generator_.frozen
    x, y = est.sample(5)
    assert x.shape == (15, 256) and np.bincount(y).tolist() == [5, 5, 5]
    with pytest.raises(InvalidArgumentError):
        DPNTK(max_steps=1).fit(train.images.reshape(300, -1), train.labels)
