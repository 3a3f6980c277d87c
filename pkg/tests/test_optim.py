"""Optimizer and LR schedule oracles, computed by hand."""

import math

import numpy as np
import pytest

from crysfuse.optim import AdamW, lr_schedule
from crysfuse.tensor import Tensor


def manual_adamw_step(theta, g, m, v, t, lr, b1, b2, eps, wd):
    """One reference AdamW update, written out longhand."""
    theta = theta * (1.0 - lr * wd)
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class TestAdamW:

    def test_two_steps_match_hand_computation(self):
        lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
        p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        opt = AdamW({"w": p}, lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)

        theta = p.data.copy()
        m = np.zeros(3)
        v = np.zeros(3)
        for t in (1, 2):
            g = np.array([0.3, -0.1, 0.7]) * t
            p.grad = g.copy()
            opt.step()
            theta, m, v = manual_adamw_step(theta, g, m, v, t, lr, b1, b2, eps, wd)
            assert np.allclose(p.data, theta, atol=1e-14), f"mismatch at step {t}"

    def test_decay_is_decoupled_pure_shrink_under_zero_grad(self):
        p = Tensor(np.array([4.0]), requires_grad=True)
        opt = AdamW({"w": p}, lr=0.5, weight_decay=0.1)
        p.grad = np.zeros(1)
        opt.step()
        # zero gradient means the adaptive term vanishes; only the shrink acts
        assert np.allclose(p.data, [4.0 * (1 - 0.5 * 0.1)])

    def test_none_grad_param_is_skipped_entirely(self):
        p = Tensor(np.array([4.0]), requires_grad=True)
        q = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW({"p": p, "q": q}, lr=0.5, weight_decay=0.1)
        q.grad = np.ones(1)
        opt.step()
        assert p.data[0] == 4.0  # untouched, not even decayed
        assert q.data[0] != 1.0

    def test_zero_grad_clears(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW({"w": p})
        p.grad = np.ones(1)
        opt.zero_grad()
        assert p.grad is None

    def test_descends_a_quadratic(self):
        p = Tensor(np.array([5.0]), requires_grad=True)
        opt = AdamW({"w": p}, lr=0.2, weight_decay=0.0)
        for _ in range(200):
            opt.zero_grad()
            loss = (p * p).sum()
            loss.backward()
            opt.step()
        assert abs(p.data[0]) < 1e-2


class TestLrSchedule:

    def test_boundary_values(self):
        assert lr_schedule(0, 100, 10, 1.0, 0.1) == 0.0
        assert lr_schedule(10, 100, 10, 1.0, 0.1) == pytest.approx(1.0)
        assert lr_schedule(100, 100, 10, 1.0, 0.1) == pytest.approx(0.1)

    def test_warmup_is_linear(self):
        for s in range(11):
            assert lr_schedule(s, 100, 10, 2.0, 0.0) == pytest.approx(0.2 * s)

    def test_cosine_midpoint(self):
        # halfway through decay the LR is the mean of max and min
        assert lr_schedule(55, 100, 10, 1.0, 0.1) == pytest.approx(0.55)

    def test_cosine_shape(self):
        got = lr_schedule(32, 100, 10, 1.0, 0.0)
        expect = 0.5 * (1 + math.cos(math.pi * (32 - 10) / 90))
        assert got == pytest.approx(expect, abs=1e-15)

    def test_step_out_of_range_raises(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 100, 10, 1.0, 0.1)
        with pytest.raises(ValueError):
            lr_schedule(101, 100, 10, 1.0, 0.1)

    def test_warmup_not_below_total(self):
        with pytest.raises(ValueError):
            lr_schedule(5, 10, 10, 1.0, 0.1)
