"""Acceptance gate: ten independently checkable guarantees covering gradient
correctness, architecture fidelity, trainability, metric identities,
statistics, and harness determinism. One test per guarantee; each line of a
verbose run is one pass/fail verdict."""

import itertools
import math
import time

import numpy as np
import pytest

from vitbench import cli, data, metrics, models, training
from vitbench import tensor as T
from vitbench.data import DatasetManifest, ManifestRecord
from vitbench.models import VisionTransformer, ViTConfig
from vitbench.tensor import Tensor


@pytest.fixture(autouse=True)
def _restore_dtype():
    yield
    T.set_default_dtype(np.float64)


@pytest.fixture(scope="module")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_toy")
    return data.synthesize_toy_dataset(root / "ds", num_classes=2,
                                       per_class=64, resolution=32, seed=0)


@pytest.fixture(scope="module")
def trained_run(toy_dataset, tmp_path_factory):
    """Train the small transformer on the 2-class pattern set; returns the
    run directory and the wall-clock seconds the command took."""
    out = tmp_path_factory.mktemp("accept_run")
    started = time.perf_counter()
    code = cli.main([
        "train", "--out", str(out), "--seed", "0",
        "--dataset.manifest", str(toy_dataset), "--dataset.resolution", "32",
        "--model.patch_size", "8", "--model.hidden_dim", "64",
        "--model.depth", "4", "--model.heads", "4", "--model.mlp_dim", "128",
        "--model.dropout", "0", "--model.name", "trained",
        "--train.epochs", "40", "--train.batch_size", "16",
        "--train.learning_rate", "1e-3", "--train.decay", "0.99",
    ])
    elapsed = time.perf_counter() - started
    assert code == 0
    return out, elapsed


def test_01_full_model_gradients_match_finite_differences():
    # tiny end-to-end model: every parameter's analytic gradient of the full
    # forward + loss agrees with central differences to < 1e-4 at 64-bit
    started = time.perf_counter()
    config = ViTConfig(image_size=(8, 8), patch_size=4, hidden_dim=8, depth=2,
                       heads=2, mlp_dim=16, num_classes=3, dropout=0.0)
    model = VisionTransformer(config, seed=0)
    rng = np.random.default_rng(1)
    images = Tensor(rng.random((2, 8, 8, 3)))
    labels = np.array([0, 2])
    losses = {
        "cross_entropy": lambda lg: training.cross_entropy(lg, labels),
        "focal": lambda lg: training.focal_loss(lg, labels, gamma=2.0),
    }
    # h=1e-4 balances truncation against roundoff: some attention weights
    # carry gradients near 5e-8, where a smaller step leaves the numeric
    # difference roundoff-dominated
    for loss_name, loss in losses.items():
        worst = 0.0
        for param in model.params.values():
            err = T.finite_difference_check(
                lambda _: loss(model.forward(images)), param, h=1e-4)
            worst = max(worst, err)
        assert worst < 1e-4, \
            f"{loss_name}: max relative gradient error {worst:.3e}"
    assert time.perf_counter() - started < 60.0


def test_02_preset_parameter_counts():
    base = models.param_count(models.preset("ViT-B/16", 224, 1000))
    large = models.param_count(models.preset("ViT-L/16", 224, 1000))
    assert base == 86_567_656
    assert abs(base - 86_000_000) / 86_000_000 < 0.01
    assert large == 304_326_632
    assert abs(large - 307_000_000) / 307_000_000 < 0.01


def test_03_zeroed_sublayers_give_bit_exact_identity():
    config = ViTConfig(image_size=(16, 16), patch_size=8, hidden_dim=16,
                       depth=2, heads=2, mlp_dim=32, num_classes=2,
                       dropout=0.0)
    model = VisionTransformer(config, seed=1)
    for i in range(config.depth):
        for key in ("attn_wo", "attn_bo", "mlp_w2", "mlp_b2"):
            model.params[f"block{i}_{key}"].data[...] = 0.0
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.standard_normal((3, config.num_tokens, config.hidden_dim))
        out = model.encoder_block(Tensor(x), 0)
        out = model.encoder_block(out, 1)
        assert np.array_equal(out.data, x)  # residual path is exact


def test_04_toy_training_reaches_95_percent_heldout(trained_run):
    run_dir, elapsed = trained_run
    rows = (run_dir / "train_log.csv").read_text().splitlines()[1:]
    assert len(rows) <= 100
    best = max(float(row.split(",")[4]) for row in rows)
    assert best >= 0.95, f"best held-out accuracy {best:.3f}"
    assert elapsed < 600.0


def _binary_mcc_closed_form(tn, fp, fn, tp):
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def _pair_count_auc(scores, positive):
    pos = scores[positive]
    neg = scores[~positive]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_05_metric_identities_hold():
    # multiclass MCC == binary closed form, exhaustively for total <= 12
    checked = 0
    for tn, fp, fn, tp in itertools.product(range(13), repeat=4):
        if not 0 < tn + fp + fn + tp <= 12:
            continue
        cm = metrics.ConfusionMatrix(np.array([[tn, fp], [fn, tp]]), ["n", "p"])
        assert metrics.mcc(cm) == pytest.approx(
            _binary_mcc_closed_form(tn, fp, fn, tp), abs=1e-12)
        checked += 1
    assert checked == 1819  # every nonempty binary matrix with total <= 12

    # support-weighted recall is the accuracy, on 1000 random matrices
    rng = np.random.default_rng(5)
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        counts = rng.integers(0, 40, size=(k, k))
        if counts.sum() == 0:
            counts[0, 0] = 1
        prf = metrics.weighted_prf(
            metrics.ConfusionMatrix(counts, [f"c{i}" for i in range(k)]))
        assert prf.recall == pytest.approx(prf.accuracy, abs=1e-12)

    # trapezoid AUC == O(n^2) Mann-Whitney pair counting, 200 score sets
    compared = 0
    for trial in range(200):
        n = int(rng.integers(2, 51))
        k = int(rng.integers(2, 5))
        raw = rng.integers(1, 5, size=(n, k)).astype(np.float64)  # many ties
        if trial % 2:
            raw += rng.random((n, k))  # and many tie-free sets
        scores = raw / raw.sum(axis=1, keepdims=True)
        labels = rng.integers(0, k, size=n)
        roc = metrics.roc_auc(scores, labels, [f"c{i}" for i in range(k)])
        for idx, curve in enumerate(roc.curves):
            oracle = _pair_count_auc(scores[:, idx], labels == idx)
            if oracle is None:
                assert curve.auc is None
                continue
            assert curve.auc == pytest.approx(oracle, abs=1e-12)
            compared += 1
    assert compared > 200  # many defined (class, set) pairs actually checked


def test_06_focal_loss_reduces_to_cross_entropy():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(2, 6))
        logits = Tensor(3.0 * rng.standard_normal((n, k)))
        labels = rng.integers(0, k, size=n)
        ce = training.cross_entropy(logits, labels)
        focal0 = training.focal_loss(logits, labels, gamma=0.0,
                                     alpha=np.ones(k))
        assert focal0.item() == ce.item()  # bit for bit

    # closed form at p_true = 0.9, gamma = 2: (1-p)^2 * (-ln p) = 0.0010536
    logits = Tensor(np.log(np.array([[0.9, 0.1]])))
    value = training.focal_loss(logits, np.array([0]), gamma=2.0)
    assert abs(value.item() - 0.0010536) < 1e-6


def test_07_statistics_match_independent_oracle():
    from scipy import stats

    rng = np.random.default_rng(7)
    for df in range(2, 51):
        a = rng.standard_normal(df + 1)
        b = a + 0.3 * rng.standard_normal(df + 1) + 0.1
        result = metrics.paired_t_test(a, b)
        assert result.df == df
        oracle = 2.0 * stats.t.sf(abs(result.t), df)
        assert abs(result.p - oracle) < 1e-6

    same = rng.standard_normal(12)
    assert metrics.paired_t_test(same, same.copy()).p == 1.0

    # one seed -> the identical resample pairing for every model compared
    first = metrics.bootstrap_indices(37, 250, seed=3)
    second = metrics.bootstrap_indices(37, 250, seed=3)
    assert np.array_equal(first, second)


def test_08_compare_ranks_trained_over_untrained(trained_run, toy_dataset,
                                                 tmp_path, capsys):
    run_dir, _ = trained_run
    trained_ckpt = run_dir / "checkpoint"
    model, classes = models.load_checkpoint(trained_ckpt)
    fresh = VisionTransformer(model.config, seed=99, name="untrained")
    untrained_ckpt = tmp_path / "untrained"
    models.save_checkpoint(untrained_ckpt, fresh, classes=classes)

    code = cli.main(["compare", "--checkpoints", str(trained_ckpt),
                     str(untrained_ckpt), "--manifest", str(toy_dataset),
                     "--split", "test", "--resamples", "500", "--seed", "0"])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    trained_row = next(l for l in lines if l.startswith("trained | "))
    untrained_row = next(l for l in lines if l.startswith("untrained | "))
    assert any(l.startswith("best: trained") for l in lines)
    assert trained_row.split(" | ")[6] == "-"
    p_value = float(untrained_row.split(" | ")[6])
    assert p_value < 0.05


def test_09_pipeline_rerun_is_byte_identical(tmp_path):
    manifest = data.synthesize_toy_dataset(tmp_path / "ds", num_classes=2,
                                           per_class=8, resolution=16, seed=5)
    artifacts = []
    for run in ("one", "two"):
        run_dir = tmp_path / run
        assert cli.main([
            "train", "--out", str(run_dir), "--seed", "3",
            "--dataset.manifest", str(manifest), "--dataset.resolution", "16",
            "--model.patch_size", "8", "--model.hidden_dim", "16",
            "--model.depth", "1", "--model.heads", "2", "--model.mlp_dim",
            "32", "--model.dropout", "0.1",
            "--train.epochs", "2", "--train.batch_size", "8",
            "--train.learning_rate", "1e-3"]) == 0
        eval_dir = tmp_path / f"{run}_eval"
        assert cli.main(["evaluate", "--checkpoint",
                         str(run_dir / "checkpoint"), "--manifest",
                         str(manifest), "--split", "test",
                         "--out", str(eval_dir)]) == 0
        artifacts.append({
            name: (eval_dir / name).read_bytes()
            for name in ("preds.csv", "report.txt", "roc.csv", "confusion.csv")
        })
    assert artifacts[0] == artifacts[1]


def _manifest_with_counts(counts: dict) -> DatasetManifest:
    records = []
    for split, count in counts.items():
        records.extend(ManifestRecord(f"{split}_{i}.ppm", 0, split)
                       for i in range(count))
    from pathlib import Path
    return DatasetManifest(["a", "b"], records, Path("."))


def test_10_count_presets_reject_all_deviations(tmp_path):
    splits = ("train", "valid", "test")
    for expected in data.MANIFEST_COUNT_PRESETS.values():
        exact = dict(zip(splits, expected))
        assert data.check_counts(_manifest_with_counts(exact), expected) == []
        for split in splits:
            for delta in (-1, +1):
                perturbed = dict(exact)
                perturbed[split] += delta
                diffs = data.check_counts(_manifest_with_counts(perturbed),
                                          expected)
                assert len(diffs) == 1 and diffs[0].startswith(split)

    # and end to end through the harness with the named preset
    lines = ["# classes: a,b", "path,class,split"]
    i = 0
    for split, count in zip(splits, data.MANIFEST_COUNT_PRESETS["kvasir"]):
        for _ in range(count):
            lines.append(f"img{i}.ppm,a,{split}")
            i += 1
    path = tmp_path / "kvasir.csv"
    path.write_text("\n".join(lines) + "\n")
    assert cli.main(["validate-manifest", "--manifest", str(path),
                     "--expect", "kvasir"]) == 0
    path.write_text("\n".join(lines[:-1]) + "\n")  # one test record short
    assert cli.main(["validate-manifest", "--manifest", str(path),
                     "--expect", "kvasir"]) == 2
