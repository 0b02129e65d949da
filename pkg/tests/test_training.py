import numpy as np
import pytest

from tfn import autodiff as ad
from tfn.autodiff import Parameter, Tape
from tfn.fusion import FusionVariant
from tfn.inference import Task
from tfn.model import ModelDataMismatchError, ModelFormatError, TfnModel
from tfn.optim import AdamState, adam_step, apply_dropout, l2_penalty
from tfn.synth import SynthSpec, synth_generate
from tfn.training import (DivergenceError, SplitError, TrainConfig, ablate, cross_validate,
                          evaluate, grid_search, speaker_folds, split_validation, train)


def test_defaults_echo_published_protocol():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.dropout_p, cfg.l2_coeff) == (5e-4, 0.15, 0.01)


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([1.0, -1.0]), name="w")
    p.grad[:] = [0.3, -5.0]
    adam_step({"w": p}, AdamState(), 0.1)
    np.testing.assert_allclose(p.data, [0.9, -0.9], rtol=1e-6)


def test_adam_rejects_nan_gradient():
    p = Parameter(np.array([1.0]), name="w")
    p.grad[:] = np.nan
    with pytest.raises(ArithmeticError):
        adam_step({"w": p}, AdamState(), 0.1)


def test_dropout_is_inverted_and_off_at_eval(rng):
    x = ad.Tensor(np.ones(100000))
    out = apply_dropout(x, 0.25, rng, True).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert out.mean() == pytest.approx(1.0, abs=0.01)
    assert apply_dropout(x, 0.25, rng, False) is x


def test_l2_penalty_value_and_grad():
    w = Parameter(np.array([1.0, 2.0]))
    with Tape() as tape:
        out = l2_penalty([w], 0.01)
    tape.backward(out)
    assert float(out.data) == pytest.approx(0.05)
    np.testing.assert_allclose(w.grad, [0.02, 0.04])


def test_regularized_weights_exclude_biases_and_language(tiny_arch):
    names = {p.name for p in TfnModel(tiny_arch).regularized_weights()}
    assert names and all(n.endswith("weight") for n in names)
    assert not any(n.startswith("language") for n in names)


def test_speaker_folds_partition():
    spk = [f"s{i}" for i in range(13)]
    folds = speaker_folds(spk, 5, seed=3)
    assert len(folds) == 5
    assert sorted(s for f in folds for s in f) == sorted(spk)
    assert folds == speaker_folds(list(reversed(spk)), 5, seed=3)
    with pytest.raises(SplitError):
        speaker_folds(spk[:4], 5, 0)


def test_split_validation_holds_out_last_videos(small_dataset):
    tr, va = split_validation(list(small_dataset), 4)
    assert {u.video for u in va} == {"spk006", "spk007", "spk008", "spk009"}
    assert not {u.video for u in tr} & {u.video for u in va}
    with pytest.raises(SplitError):
        split_validation(list(small_dataset), 10)


def test_zero_learning_rate_keeps_initialisation(small_dataset, tiny_arch):
    cfg = TrainConfig(learning_rate=0.0, epochs=2, seed=5)
    model, hist = train(cfg, list(small_dataset)[:30], list(small_dataset)[30:], tiny_arch)
    from tfn.synth import derive_seed
    init = TfnModel(tiny_arch, seed=derive_seed(5, "init")).state_dict()
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, init[k])
    assert len(hist.train_loss) == 2


def test_training_reduces_loss(small_dataset, tiny_arch):
    cfg = TrainConfig(learning_rate=3e-3, dropout_p=0.0, l2_coeff=0.0, epochs=15, batch_size=8)
    u = list(small_dataset)
    _, hist = train(cfg, u, u, tiny_arch)
    assert hist.train_loss[-1] < 0.95 * hist.train_loss[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(small_dataset, tiny_arch):
    cfg = TrainConfig(learning_rate=1e300, epochs=3)
    with pytest.raises(DivergenceError) as info:
        train(cfg, list(small_dataset), list(small_dataset), tiny_arch)
    assert info.value.epoch is not None


def test_grid_search_returns_best(small_dataset, tiny_arch):
    u = list(small_dataset)
    grid = [TrainConfig(epochs=2, learning_rate=0.0), TrainConfig(epochs=4, learning_rate=3e-3)]
    best, _, scores = grid_search(grid, u[:40], u[40:], tiny_arch)
    assert best is grid[int(np.argmax(scores))]


@pytest.mark.parametrize("task", list(Task))
def test_cross_validate_folds_are_speaker_disjoint(small_dataset, tiny_arch, task):
    rep = cross_validate(small_dataset, TrainConfig(epochs=1, task=task), arch=tiny_arch,
                         n_val_videos=4)
    assert len(rep.folds) == 5
    seen = [s for f in rep.fold_speakers for s in f]
    assert len(seen) == len(set(seen)) == 10


def test_parallel_cv_matches_serial(small_dataset, tiny_arch):
    cfg = TrainConfig(epochs=1)
    a = cross_validate(small_dataset, cfg, arch=tiny_arch, workers=1)
    b = cross_validate(small_dataset, cfg, arch=tiny_arch, workers=2)
    assert a.to_dict() == b.to_dict()


def test_ablate_has_eight_rows_in_table_order(small_dataset, tiny_arch):
    rep = ablate(small_dataset, TrainConfig(epochs=1), arch=tiny_arch)
    assert [n for n, _ in rep.rows] == ["TFN_language", "TFN_visual", "TFN_acoustic", "TFN_bimodal",
                                        "TFN_trimodal", "TFN_notrimodal", "TFN", "TFN_early"]


def test_save_load_round_trip(tmp_path, small_dataset, tiny_arch):
    u = list(small_dataset)
    model, _ = train(TrainConfig(epochs=2, variant="notrimodal", task="five"), u[:40], u[40:],
                     tiny_arch)
    before = evaluate(model, u)
    model.save(tmp_path / "m.npz")
    back = TfnModel.load(tmp_path / "m.npz")
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(back.state_dict()[k], v)
    assert back.variant is FusionVariant.NO_TRIMODAL and back.task is Task.FIVE_CLASS
    assert evaluate(back, u) == before


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "x.npz").write_bytes(b"not a model")
    with pytest.raises(ModelFormatError):
        TfnModel.load(tmp_path / "x.npz")


def test_mismatch_names_both_sides(tiny_arch):
    ds = synth_generate(SynthSpec(n_utterances=5, p=3, q=8))
    with pytest.raises(ModelDataMismatchError, match=r"\(300, 8, 8\).*\(300, 3, 8\)"):
        TfnModel(tiny_arch).check_compatible(ds)
