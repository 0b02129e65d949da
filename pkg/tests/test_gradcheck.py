import numpy as np

from tfn import autodiff as ad
from tfn.gradcheck import COMPONENTS, run_gradcheck


def test_components_cover_required_layers():
    required = {"dense", "lstm_step", "sigmoid", "tanh", "softmax", "outer3", "head_binary_bce",
                "head_five_class_nll", "head_regression_mse", "tfn_end_to_end"}
    assert required <= set(COMPONENTS)


def test_small_run_passes():
    result = run_gradcheck(seed=100, n_seeds=2)
    assert result.passed, result.format()
    lines = result.format().splitlines()[1:]
    assert [l.split()[0] for l in lines] == list(COMPONENTS)


def test_corrupted_backward_is_caught(monkeypatch):
    real = ad.tanh

    def bad_tanh(x):
        out = real(x)
        if out._backward is not None:
            fn = out._backward
            out._backward = lambda g: fn(1.01 * g)
        return out

    monkeypatch.setattr(ad, "tanh", bad_tanh)
    result = run_gradcheck(n_seeds=1)
    assert not result.passed
    assert result.errors["tanh"] > 1e-4
    assert result.errors["dense"] < 1e-4
