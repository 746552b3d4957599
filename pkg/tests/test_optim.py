import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshfield.autodiff import Parameter
from meshfield.errors import NonFinite
from meshfield.optim import AdamState, LrSchedule, adam_step, lr_at


def test_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]), "p")
    adam_step([p], AdamState(), 1e-3)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


@settings(max_examples=50, deadline=None)
@given(g=st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-6), lr=st.floats(1e-6, 1.0))
def test_first_step_magnitude(g, lr):
    # bias correction makes the first step -lr * g / (|g| + eps)
    p = Parameter(np.array([0.5]), "p")
    p.grad[:] = g
    adam_step([p], AdamState(), lr)
    np.testing.assert_allclose(p.value[0], 0.5 - lr * g / (abs(g) + 1e-8), rtol=1e-12, atol=1e-15)


def test_second_step_against_hand_oracle():
    p = Parameter(np.array([0.0]), "p")
    st_ = AdamState()
    p.grad[:] = 1.0
    adam_step([p], st_, 0.1)
    p.grad[:] = 3.0
    adam_step([p], st_, 0.1)
    m = (0.9 * 0.1 * 1.0 + 0.1 * 3.0) / (1 - 0.9**2)
    v = (0.99 * 0.01 * 1.0 + 0.01 * 9.0) / (1 - 0.99**2)
    expected = -0.1 * 1.0 / (1 + 1e-8) - 0.1 * m / (np.sqrt(v) + 1e-8)
    np.testing.assert_allclose(p.value[0], expected, rtol=1e-12)


def test_gradients_zeroed_after_step():
    p = Parameter(np.ones(3), "p")
    p.grad[:] = 2.0
    adam_step([p], AdamState(), 0.01)
    assert np.all(p.grad == 0)


def test_deterministic():
    def run():
        p = Parameter(np.linspace(-1, 1, 5), "p")
        s = AdamState()
        for i in range(10):
            p.grad[:] = np.sin(p.value * (i + 1))
            adam_step([p], s, 0.05)
        return p.value

    np.testing.assert_array_equal(run(), run())


def test_non_finite_gradient_aborts_whole_step():
    a, b = Parameter(np.ones(2), "a"), Parameter(np.ones(2), "b")
    a.grad[:] = 1.0
    b.grad[:] = [np.nan, 0.0]
    s = AdamState()
    with pytest.raises(NonFinite) as info:
        adam_step([a, b], s, 0.1)
    assert info.value.name == "b"
    np.testing.assert_array_equal(a.value, [1.0, 1.0])
    assert s.step == 0


@pytest.mark.parametrize("it,lr", [(0, 1e-4), (699, 1e-4), (700, 7e-5), (1400, 4.9e-5), (1999, 4.9e-5)])
def test_schedule_values(it, lr):
    assert lr_at(LrSchedule(), it) == pytest.approx(lr, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=st.integers(0, 10**6), b=st.integers(0, 10**6))
def test_schedule_nonincreasing(a, b):
    s = LrSchedule()
    lo, hi = sorted((a, b))
    assert lr_at(s, hi) <= lr_at(s, lo)
