import numpy as np
import pytest

from partialnet import cli
from partialnet import tensor as T
from partialnet.gradcheck import CASES, THRESHOLD, grad_check, run_suite
from partialnet.tensor import Rng, Tensor


def test_suite_passes_every_op():
    results = run_suite(probes=10)
    assert set(results) == set(CASES)
    assert max(results.values()) < THRESHOLD


def test_composite_tight():
    fn, inputs = CASES["composite"](Rng(7))
    assert grad_check(fn, inputs) < 1e-5


def test_linear_tight():
    worst = max(grad_check(*CASES["linear"](Rng(i))) for i in range(10))
    assert worst < 1e-6


def test_relu_away_from_kink():
    worst = max(grad_check(*CASES["relu"](Rng(i))) for i in range(10))
    assert worst < 1e-6


def test_requires_float64():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda ins: ins[0].sum(), [x])


def test_non_finite_input():
    x = Tensor(np.array([1.0, np.nan]), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda ins: ins[0].sum(), [x])


def test_detects_wrong_gradient(monkeypatch):
    original = T._BACKWARD["conv2d"]

    def broken(*args):
        dx, dw, db = original(*args)
        return dx, dw * 1.01, db

    monkeypatch.setitem(T._BACKWARD, "conv2d", broken)
    fn, inputs = CASES["conv2d"](Rng(0))
    assert grad_check(fn, inputs) > THRESHOLD


def test_cli_negative_control(monkeypatch, capsys):
    original = T._BACKWARD["conv2d"]
    monkeypatch.setitem(T._BACKWARD, "conv2d", lambda *a: tuple(g * 0.5 for g in original(*a)))
    assert cli.main(["gradcheck", "--probes", "2"]) == 1
    assert "conv2d" in capsys.readouterr().err


def test_cli_clean(capsys):
    assert cli.main(["gradcheck", "--probes", "1"]) == 0
    assert "conv2d" in capsys.readouterr().out
