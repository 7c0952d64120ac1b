import numpy as np
import pytest

from metafn.errors import MetafnError, UsageError
from metafn.nn import Parameter
from metafn.optim import AdamW, lr_at


def test_first_step_matches_hand_computation():
    # fresh state, g=1: m_hat=1, s_hat=1 -> w ~ -lr
    p = Parameter(np.zeros(1), "w")
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.ones(1)
    opt.step()
    np.testing.assert_allclose(p.data, [-0.1 / (1 + 1e-8)], rtol=1e-12)
    np.testing.assert_allclose(p.data, [-0.1], atol=1e-8)


def test_zero_grad_zero_decay_is_identity():
    rng = np.random.default_rng(0)
    p = Parameter(rng.standard_normal(4), "w")
    before = p.data.copy()
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(4)
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_decoupled_decay_factor():
    p = Parameter(np.ones(1), "w")
    opt = AdamW([p], lr=0.1, weight_decay=0.01)
    p.grad = np.zeros(1)
    opt.step()
    # moments stay zero, so only the decay multiplier acts: w * (1 - lr*wd)
    np.testing.assert_allclose(p.data, [0.999], rtol=1e-12)


def test_exempt_parameters_skip_decay():
    w = Parameter(np.ones(1), "w")
    b = Parameter(np.ones(1), "b", weight_decay_exempt=True)
    opt = AdamW([w, b], lr=0.1, weight_decay=0.01)
    w.grad = np.zeros(1)
    b.grad = np.zeros(1)
    opt.step()
    np.testing.assert_allclose(w.data, [0.999], rtol=1e-12)
    np.testing.assert_array_equal(b.data, [1.0])


def test_non_finite_gradient_reports_parameter_name():
    p = Parameter(np.zeros(2), "blocks.0.ffn.weight")
    opt = AdamW([p], lr=0.1)
    p.grad = np.array([1.0, np.nan])
    with pytest.raises(MetafnError, match="blocks.0.ffn.weight"):
        opt.step()


def test_step_counter_shared_across_groups():
    a = Parameter(np.zeros(1), "a")
    b = Parameter(np.zeros(1), "b")
    opt = AdamW([{"params": [a], "lr": 0.1}, {"params": [b], "lr": 0.2}])
    for _ in range(3):
        a.grad = np.ones(1)
        b.grad = np.ones(1)
        opt.step()
    assert opt.t == 3


def test_duplicate_parameter_rejected():
    p = Parameter(np.zeros(1), "p")
    with pytest.raises(UsageError):
        AdamW([{"params": [p]}, {"params": [p]}])


def test_matches_reference_adamw_trajectory():
    # independent reference implementation of the update rule
    rng = np.random.default_rng(1)
    w0 = rng.standard_normal(6)
    grads = [rng.standard_normal(6) for _ in range(20)]
    lr, b1, b2, eps, wd = 1e-2, 0.9, 0.999, 1e-8, 1e-2

    w = w0.copy()
    m = np.zeros(6)
    s = np.zeros(6)
    for t, g in enumerate(grads, start=1):
        w = w * (1 - lr * wd)
        m = b1 * m + (1 - b1) * g
        s = b2 * s + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(s / (1 - b2 ** t)) + eps)

    p = Parameter(w0.copy(), "w")
    opt = AdamW([p], lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    np.testing.assert_allclose(p.data, w, rtol=1e-12)


def test_lr_schedule_examples():
    assert lr_at(10, 100, 1.0) == pytest.approx(0.5)
    assert lr_at(20, 100, 1.0) == pytest.approx(1.0)
    assert lr_at(60, 100, 1.0) == pytest.approx(0.5)
    assert lr_at(100, 100, 1.0) == 0.0
    assert lr_at(0, 100, 1.0) == 0.0


def test_lr_schedule_peak_and_continuity():
    total = 250
    vals = [lr_at(s, total, 2.0) for s in range(total + 1)]
    assert max(vals) == vals[int(0.2 * total)]
    diffs = np.abs(np.diff(vals))
    assert diffs.max() <= 2.0 / (0.2 * total) + 1e-12


def test_lr_schedule_usage_errors():
    with pytest.raises(UsageError):
        lr_at(0, 0, 1.0)
    with pytest.raises(UsageError):
        lr_at(101, 100, 1.0)
