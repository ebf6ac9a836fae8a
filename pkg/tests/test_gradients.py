import numpy as np
import pytest

from mairkit import tensor as T
from mairkit.gradcheck import check_gradients, rel_error
from mairkit.gradsuite import SUITES
from mairkit.tensor import Tensor, record


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("suite", list(SUITES))
def test_suite_within_tolerance(suite, seed):
    results = SUITES[suite](seed)
    assert results
    worst = max(results, key=lambda r: r.max_rel_err)
    assert worst.ok, f"{worst.name}: {worst.max_rel_err:.3e}"


def test_checker_catches_a_wrong_backward():
    # a deliberately broken square: forward x², backward 3x instead of 2x
    def bad_square(x):
        return record(x.data ** 2, [x], lambda g: [3 * x.data * g])

    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    res = check_gradients(lambda: T.tsum(bad_square(x)), {"x": x})
    assert not res[0].ok
    assert res[0].max_rel_err == pytest.approx(1 / 3, rel=1e-6)


def test_rel_error_scale():
    a = np.array([1.0, 2.0])
    assert rel_error(a, a) == 0.0
    assert rel_error(a, a + 0.1) == pytest.approx(0.1 / 2.1)
    assert rel_error(a, a + 0.1, scale=10.0) == pytest.approx(0.01)
    assert rel_error(np.zeros(2), np.zeros(2)) == 0.0


def test_numeric_probe_leaves_inputs_untouched():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    before = x.data.copy()
    check_gradients(lambda: T.tsum(T.exp(x)), {"x": x})
    np.testing.assert_array_equal(x.data, before)
    assert not x.data.flags.writeable
