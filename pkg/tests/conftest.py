import numpy as np
import pytest

from pxattack.models import ToyModel


def make_linear_model(weights, biases=None, input_shape=None):
    """Binary-or-more linear softmax model from a (Y, d) weight matrix."""
    weights = np.asarray(weights, dtype=np.float64)
    y, d = weights.shape
    if biases is None:
        biases = np.zeros(y)
    if input_shape is None:
        input_shape = (d, 1, 1)
    return ToyModel("linear", [(weights, biases)], input_shape, y)


class ConstantModel:
    """Returns the same probability vector for every input."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.class_count = len(self.probs)
        self.query_count = 0

    def predict(self, x):
        self.query_count += 1
        return self.probs.copy()


class FailingModel:
    """Delegates to an inner model, raising after a set number of calls."""

    def __init__(self, inner, fail_after):
        self.inner = inner
        self.fail_after = fail_after
        self.calls = 0

    @property
    def class_count(self):
        return self.inner.class_count

    def predict(self, x):
        self.calls += 1
        if self.calls > self.fail_after:
            raise RuntimeError("model went away")
        return self.inner.predict(x)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
