"""Acceptance criteria 1-8.  Each test prints one PASS/FAIL line (also
collected into the terminal summary) and then asserts."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import ACCEPTANCE_LINES
from tfn import training
from tfn.autodiff import Tensor
from tfn.cli import main
from tfn.embeddings import ModalityEmbeddings
from tfn.fusion import FusedTensor, FusionVariant, Region, _block, extract_subtensor, fuse_for_variant, tensor_fuse
from tfn.inference import Prediction, Task
from tfn.metrics import dumps, metrics, pearson_r
from tfn.model import ArchConfig, TfnModel
from tfn.synth import SynthSpec, synth_generate
from tfn.training import TrainConfig, cross_validate, evaluate, heldout_mae, train

FIXTURES = Path(__file__).parent / "fixtures"


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_fidelity():
    from tfn.gradcheck import run_gradcheck
    t0 = time.perf_counter()
    result = run_gradcheck(seed=0, eps=1e-5, n_seeds=20)
    elapsed = time.perf_counter() - t0
    worst = max(result.errors, key=result.errors.get)
    print(result.format())
    verdict(1, "gradient fidelity", result.passed and elapsed < 60,
            f"max rel err {result.errors[worst]:.2e} ({worst}) over 20 seeds, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2


def _augmented(z):
    return np.append(z, 1.0)


def test_criterion_2_fusion_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    zl, zv, za = rng.normal(size=128), rng.normal(size=32), rng.normal(size=32)
    f = tensor_fuse(ModalityEmbeddings(Tensor(zl), Tensor(zv), Tensor(za)))
    hl, hv, ha = _augmented(zl), _augmented(zv), _augmented(za)
    # (a) rank-1 identity, element by element in the same association order
    rank1 = bool(np.array_equal(f.t.data, (hl[:, None, None] * hv[None, :, None]) * ha[None, None, :]))
    # (b) corner
    corner = f.t.data[128, 32, 32] == 1.0
    # (c) partition of the 129x33x33 cube
    owner = np.zeros((129, 33, 33), dtype=int)
    for region in Region:
        index = _region_index(region)
        owner[index] += 1
    owner[128, 32, 32] += 1
    partition = owner.size == 140481 and bool(np.all(owner == 1))
    # (d) regions equal independent outer products
    expected = {Region.LV: np.outer(zl, zv).ravel(), Region.LA: np.outer(zl, za).ravel(),
                Region.VA: np.outer(zv, za).ravel(),
                Region.LVA: ((zl[:, None, None] * zv[None, :, None]) * za[None, None, :]).ravel()}
    regions = all(np.array_equal(extract_subtensor(f, r).data, e) for r, e in expected.items())
    # (e) Early == UnimodalOnly
    early = True
    for _ in range(100):
        e = ModalityEmbeddings(*(Tensor(rng.normal(size=d)) for d in (128, 32, 32)))
        early &= np.array_equal(fuse_for_variant(e, FusionVariant.EARLY).data,
                                fuse_for_variant(e, FusionVariant.UNIMODAL_ONLY).data)
    elapsed = time.perf_counter() - t0
    ok = rank1 and corner and partition and regions and early and elapsed < 10
    verdict(2, "fusion algebra", ok,
            f"rank1={rank1} corner={corner} partition={partition} regions={regions} "
            f"early==unimodal={early} {elapsed:.2f}s")


def _region_index(region):
    return _block(FusedTensor(Tensor(np.zeros((129, 33, 33)))), region)


# ---------------------------------------------------------------- 3


def test_criterion_3_overfit():
    t0 = time.perf_counter()
    ds = synth_generate(SynthSpec(n_utterances=16, alpha=(0.2, 0.2, 0.2), beta=(0.2, 0.2, 0.2),
                                  gamma=1.0, noise_std=0.1, seed=0))
    u = list(ds)
    arch = ArchConfig(p=ds.header.p, q=ds.header.q)  # published widths, 129x33x33 fusion
    cfg = TrainConfig(learning_rate=1e-3, dropout_p=0.0, l2_coeff=0.0, epochs=60, batch_size=16)
    model, _ = train(cfg, u, u, arch)
    pred = model.predict(u).value
    mse = float(np.mean((pred - ds.labels()) ** 2))
    elapsed = time.perf_counter() - t0
    verdict(3, "overfit sanity", mse < 0.01 and elapsed < 120,
            f"train MSE {mse:.2e} after {cfg.epochs} epochs, {elapsed:.1f}s")


# ---------------------------------------------------------------- 4


def _seed_maes(gamma, beta, variants, seeds=range(5)):
    out = {v: [] for v in variants}
    for seed in seeds:
        ds = synth_generate(SynthSpec(n_utterances=2000, n_speakers=10, alpha=(0.2, 0.2, 0.2),
                                      beta=beta, gamma=gamma, noise_std=0.1, seed=seed))
        for v in variants:
            out[v].append(heldout_mae(ds, v, seed))
    return {v: np.array(m) for v, m in out.items()}


@pytest.mark.slow
def test_criterion_4_ablation_ordering():
    t0 = time.perf_counter()
    inter = _seed_maes(1.0, (0.2, 0.2, 0.2), ["full", "notrimodal", "early"])
    add = _seed_maes(0.0, (0.0, 0.0, 0.0), ["full", "early"])
    elapsed = time.perf_counter() - t0
    mean = {v: m.mean() for v, m in inter.items()}
    sd = {v: m.std(ddof=1) for v, m in inter.items()}
    # margin must exceed the across-seed std of both compared variants
    beats_nt = mean["notrimodal"] - mean["full"] > max(sd["full"], sd["notrimodal"])
    beats_early = mean["early"] - mean["full"] > max(sd["full"], sd["early"])
    gap = abs(add["early"].mean() - add["full"].mean())
    add_sd = max(add["early"].std(ddof=1), add["full"].std(ddof=1))
    additive = gap <= 2 * add_sd
    ok = beats_nt and beats_early and additive and elapsed < 1200
    verdict(4, "ablation ordering", ok,
            f"MAE full {mean['full']:.4f}±{sd['full']:.4f}, notrimodal "
            f"{mean['notrimodal']:.4f}±{sd['notrimodal']:.4f}, early {mean['early']:.4f}±{sd['early']:.4f}; "
            f"additive |early-full| {gap:.4f} vs 2sd {2 * add_sd:.4f}; {elapsed:.0f}s")


# ---------------------------------------------------------------- 5


def _oracle(scores, labels):
    n = len(labels)
    hits = tp = fp = fn = five_hits = 0
    abs_sum = []
    for s, y in zip(scores, labels):
        p, t = s >= 0, y >= 0
        hits += p == t
        tp += p and t
        fp += p and not t
        fn += (not p) and t
        rnd = lambda x: max(-2, min(2, int(math.copysign(math.floor(abs(x) + 0.5), x))))
        five_hits += rnd(min(3.0, max(-3.0, s))) == rnd(y)
        abs_sum.append(abs(s - y))
    mx, my = math.fsum(scores) / n, math.fsum(labels) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(scores, labels))
    sxx = math.fsum((a - mx) ** 2 for a in scores)
    syy = math.fsum((b - my) ** 2 for b in labels)
    return (hits / n, 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0, five_hits / n,
            math.fsum(abs_sum) / n, sxy / math.sqrt(sxx * syy))


def test_criterion_5_metric_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(5):
        labels = rng.uniform(-3, 3, 200)
        scores = np.clip(labels + rng.normal(0, 1.0, 200), -3, 3)
        row = metrics(Prediction(Task.REGRESSION, scores), labels)
        got = (row.binary_acc, row.f1, row.five_class_acc, row.mae, row.pearson_r)
        want = _oracle(list(scores), list(labels))
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
    x = rng.normal(size=50)
    extremes = pearson_r(x, 3 * x - 1) == 1.0 and pearson_r(x, -2 * x) == -1.0
    verdict(5, "metric oracle", worst <= 1e-12 and extremes,
            f"max |metric - oracle| {worst:.1e} over 5x200 pairs, r=+-1 exact: {extremes}")


# ---------------------------------------------------------------- 6


def test_criterion_6_methodology(monkeypatch, tiny_arch, small_dataset):
    seen = []
    real = training.train

    def spy(config, train_set, val_set, arch=None):
        seen.append((list(train_set), list(val_set)))
        return real(config, train_set, val_set, arch)

    monkeypatch.setattr(training, "train", spy)
    cfg = TrainConfig(epochs=1)
    rep = cross_validate(small_dataset, cfg, arch=tiny_arch)
    folds = [set(f) for f in rep.fold_speakers]
    disjoint = len(folds) == 5 and all(not (a & b) for i, a in enumerate(folds) for b in folds[i + 1:])
    cover = set().union(*folds) == set(small_dataset.speakers())
    last4 = True
    for (tr, va), fold in zip(seen, folds):
        videos = sorted({u.video for u in tr + va})
        last4 &= sorted({u.video for u in va}) == videos[-4:]
        last4 &= not ({u.speaker_id for u in tr + va} & fold)
    d = TrainConfig()
    defaults = (d.learning_rate, d.dropout_p, d.l2_coeff) == (5e-4, 0.15, 0.01)
    echoed = rep.config["learning_rate"] == 5e-4 and rep.config["dropout_p"] == 0.15 \
        and rep.config["l2_coeff"] == 0.01
    ok = disjoint and cover and last4 and defaults and echoed and len(seen) == 5
    verdict(6, "methodology", ok,
            f"5 disjoint folds={disjoint and cover}, val=last 4 videos={last4}, "
            f"defaults lr/dropout/L2 = {d.learning_rate}/{d.dropout_p}/{d.l2_coeff}")


# ---------------------------------------------------------------- 7


def test_criterion_7_determinism(tmp_path, tiny_arch, small_dataset):
    cfg = TrainConfig(epochs=2, seed=11)
    a = dumps(cross_validate(small_dataset, cfg, arch=tiny_arch))
    b = dumps(cross_validate(small_dataset, cfg, arch=tiny_arch))
    u = list(small_dataset)
    model, _ = train(TrainConfig(epochs=2, variant="full"), u[:40], u[40:], tiny_arch)
    before = evaluate(model, u)
    model.save(tmp_path / "m.npz")
    back = TfnModel.load(tmp_path / "m.npz")
    weights = all(np.array_equal(back.state_dict()[k], v) for k, v in model.state_dict().items())
    metrics_equal = evaluate(back, u) == before
    verdict(7, "determinism and serialization", a == b and weights and metrics_equal,
            f"reports identical={a == b}, weights exact={weights}, metrics bit-equal={metrics_equal}")


# ---------------------------------------------------------------- 8


def test_criterion_8_compatibility(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train: {epochs: 1}\ncv: {n_val_videos: 4}\n"
                   "arch: {lstm_embed: 8, lstm_hidden: 8, language_dim: 8, visual_dim: 4,"
                   " acoustic_dim: 4, trunk_width: 8}\n")
    runner = CliRunner()
    data = FIXTURES / "ingested.jsonl"
    cv = runner.invoke(main, ["cv", "--data", str(data), "--task", "all", "--config", str(cfg),
                              "--report", str(tmp_path / "cv.json")])
    ab = runner.invoke(main, ["ablate", "--data", str(data), "--task", "all", "--config", str(cfg),
                              "--report", str(tmp_path / "ab.json")])
    header = "Acc(%)      F1  Acc(%)     MAE       r"
    cv_ok = cv.exit_code == 0 and header in cv.output
    ab_rep = json.loads((tmp_path / "ab.json").read_text()) if ab.exit_code == 0 else {}
    names = [r["name"] for r in ab_rep.get("rows", [])]
    ab_ok = (ab.exit_code == 0 and header in ab.output and len(names) == 8
             and ab_rep["columns"] == ["Acc(%)", "F1", "Acc(%)", "MAE", "r"]
             and all(len(r["folds"]) == 5 for r in ab_rep["rows"]))
    verdict(8, "compatibility path", cv_ok and ab_ok,
            f"cv exit {cv.exit_code}, ablate exit {ab.exit_code}, ablation rows {names}")
