import numpy as np
import pytest

from tarstop.corpus import Topic


def make_topic(labels, topic_id="t1"):
    labels = np.asarray(labels, dtype=np.int64)
    ranking = tuple(f"{topic_id}-d{i:05d}" for i in range(1, len(labels) + 1))
    return Topic(topic_id, ranking, labels)


def finite_difference(loss_fn, arrays, h=1e-5):
    """Central-difference gradients of loss_fn() w.r.t. every array element.

    Perturbs in place through multi-indices, so it works for any memory
    layout.
    """
    grads = [np.zeros_like(a) for a in arrays]
    for array, grad in zip(arrays, grads):
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            up = loss_fn()
            array[index] = original - h
            down = loss_fn()
            array[index] = original
            grad[index] = (up - down) / (2.0 * h)
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
