import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acoustic_contact.classify import (
    ConfusionMatrix,
    LabeledDataset,
    TrainConfig,
    decide,
    evaluate,
    order_class_names,
    predict,
    rejection_sweep,
    scan_corpus,
    stratified_split,
    train,
)
from acoustic_contact.errors import ClassTooSmall, EmptyDataset
from acoustic_contact.features import MelSpectrogram
from acoustic_contact.nn import LinearLayer, Model, ModelSpec, encode_checkpoint

SMALL = ModelSpec(n_classes=2, channels=(4, 8, 8))


def toy_dataset(n_per_class=20, seed=0, shape=(8, 8)):
    """Blank = low constant-ish energy, 'knock' = bright top half."""
    rng = np.random.default_rng(seed)
    items = []
    for label in (0, 1):
        for _ in range(n_per_class):
            x = rng.normal(scale=0.3, size=shape) - 4.0
            if label:
                x[: shape[0] // 2] += 4.0
            items.append((MelSpectrogram(x, "d" * 16), label))
    return LabeledDataset(items, ["blank", "knock"])


def test_order_class_names():
    assert order_class_names(["glass", "blank", "a_cup"]) == ["blank", "a_cup", "glass"]
    with pytest.raises(ValueError):
        order_class_names(["glass"])


@pytest.mark.parametrize("n,expected", [(2, 1), (5, 4), (10, 8), (40, 32), (3, 2)])
def test_split_counts(n, expected):
    ds = toy_dataset(n)
    tr, va = stratified_split(ds, 0.8, seed=1)
    assert list(tr.class_counts()) == [expected, expected]
    assert list(va.class_counts()) == [n - expected, n - expected]


def test_split_deterministic_and_disjoint():
    ds = toy_dataset(15)
    a = stratified_split(ds, 0.8, 3)
    b = stratified_split(ds, 0.8, 3)
    ids = lambda d: [id(s) for s, _ in d.items]
    assert ids(a[0]) == ids(b[0]) and ids(a[1]) == ids(b[1])
    assert not set(ids(a[0])) & set(ids(a[1]))
    assert len(a[0]) + len(a[1]) == len(ds)
    c = stratified_split(ds, 0.8, 4)
    assert ids(a[0]) != ids(c[0])


def test_split_rejects_singleton_class():
    ds = toy_dataset(3)
    ds = ds.subset([0, 1, 2, 3])
    with pytest.raises(ClassTooSmall):
        stratified_split(ds, 0.8, 0)


def test_features_empty():
    with pytest.raises(EmptyDataset):
        LabeledDataset([], ["blank"]).features()


def test_train_separable_reaches_perfect_accuracy():
    ds = toy_dataset(20)
    model = Model.init(SMALL, seed=0)
    result = train(ds, model, TrainConfig(lr=1e-2, batch_size=8, epochs=50, seed=0))
    assert result.best_val_accuracy == 1.0
    acc, cm = evaluate(result.checkpoint.model, ds)
    assert acc == 1.0
    assert result.checkpoint.class_names == ["blank", "knock"]
    assert result.checkpoint.featurization_digest == "d" * 16
    assert len(result.history) == 50
    assert 1 <= result.best_epoch <= 50


def test_train_is_deterministic():
    cfg = TrainConfig(lr=1e-2, batch_size=8, epochs=5, seed=7)
    runs = [train(toy_dataset(10), Model.init(SMALL, seed=7), cfg) for _ in range(2)]
    assert encode_checkpoint(runs[0].checkpoint) == encode_checkpoint(runs[1].checkpoint)
    assert [r.train_loss for r in runs[0].history] == [r.train_loss for r in runs[1].history]


def test_best_epoch_is_earliest_maximum():
    ds = toy_dataset(10)
    result = train(ds, Model.init(SMALL, seed=0), TrainConfig(lr=1e-2, batch_size=8, epochs=20))
    accs = [r.val_accuracy for r in result.history]
    assert result.best_epoch == accs.index(max(accs)) + 1


def _linear_model(weight, bias):
    """Model whose logits are fully determined by the fc layer (zero conv weights)."""
    K = len(bias)
    model = Model.init(ModelSpec(n_classes=K, channels=(2, 2, 2)), seed=0, dtype=np.float64)
    for conv in model.convs:
        conv.weight[:] = 0
    model.fc = LinearLayer(np.asarray(weight, float), np.asarray(bias, float))
    return model


def test_evaluate_known_matrix():
    cm = ConfusionMatrix.from_predictions([0, 0, 1, 1, 2], [0, 1, 1, 1, 0], 3)
    assert cm.counts.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 0]]
    assert cm.accuracy == pytest.approx(0.6)
    assert np.allclose(cm.normalized()[0], [0.5, 0.5, 0])
    assert "blank" in cm.render(["blank", "a", "b"])


def test_predict_blank_heavy_logits():
    spec = np.zeros((8, 8))
    model = _linear_model(np.zeros((3, 2)), [5.0, 0.0, 0.0])
    p = predict(model, spec, blank_id=0, tau=0.5, class_names=["blank", "a", "b"])
    assert p.class_id == 0 and p.class_name == "blank" and not p.is_contact
    assert p.probs.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("tau,contact", [(0.0, True), (0.5, True), (0.7, False)])
def test_predict_threshold(tau, contact):
    # probs ~ [0.33, 0.53, 0.14]; contact mass 0.67
    model = _linear_model(np.zeros((3, 2)), [np.log(0.33), np.log(0.53), np.log(0.14)])
    p = predict(model, np.zeros((8, 8)), blank_id=0, tau=tau)
    assert p.class_id == 1
    assert p.is_contact is contact


@given(
    probs=st.lists(st.floats(0.001, 1.0), min_size=2, max_size=10),
    shift=st.floats(-50, 50),
)
@settings(max_examples=100, deadline=None)
def test_argmax_invariant_to_logit_shift(probs, shift):
    logits = np.log(np.array(probs))
    model_a = _linear_model(np.zeros((len(probs), 2)), logits)
    model_b = _linear_model(np.zeros((len(probs), 2)), logits + shift)
    a = predict(model_a, np.zeros((4, 4)), tau=0.0)
    b = predict(model_b, np.zeros((4, 4)), tau=0.0)
    assert a.class_id == b.class_id
    assert a.is_contact == b.is_contact == (a.class_id != 0)


@given(p=st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), tau=st.floats(0, 1))
def test_decide_rule(p, tau):
    probs = np.array(p) + 1e-9
    probs /= probs.sum()
    cid, contact = decide(probs, 0, tau)
    assert cid == int(np.argmax(probs))
    assert contact == (cid != 0 and 1 - probs[0] >= tau)


def test_rejection_sweep_monotone():
    ds = toy_dataset(20, seed=5)
    result = train(ds, Model.init(SMALL, seed=0), TrainConfig(lr=1e-2, batch_size=8, epochs=3))
    taus = np.linspace(0, 1, 21)
    sweep = rejection_sweep(result.checkpoint.model, ds, taus)
    recalls = [r for _, r, _ in sweep]
    false_rates = [f for _, _, f in sweep]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))
    assert all(a >= b for a, b in zip(false_rates, false_rates[1:]))


def test_scan_corpus_layout(tmp_path):
    for cls in ("blank", "glass"):
        (tmp_path / cls).mkdir()
        (tmp_path / cls / "x.wav").write_bytes(b"")
    assert [(p.parent.name, c) for p, c in scan_corpus(tmp_path)] == [("blank", "blank"), ("glass", "glass")]
    (tmp_path / "manifest.csv").write_text("path,class\nglass/x.wav,blank\n")
    assert [c for _, c in scan_corpus(tmp_path)] == ["blank"]


def test_constant_predictor_on_balanced_set():
    y = np.repeat(np.arange(10), 7)
    cm = ConfusionMatrix.from_predictions(y, np.zeros_like(y), 10)
    assert cm.accuracy == pytest.approx(0.10)
    assert np.count_nonzero(cm.counts.sum(axis=0)) == 1
    assert np.allclose(cm.normalized().sum(axis=1), 1)


def test_perfect_predictor_identity():
    y = np.array([0, 1, 2, 2, 1, 0, 3])
    cm = ConfusionMatrix.from_predictions(y, y, 4)
    assert np.array_equal(cm.normalized(), np.eye(4))


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
def test_accuracy_is_trace_over_sum(pairs):
    t, p = map(np.array, zip(*pairs))
    cm = ConfusionMatrix.from_predictions(t, p, 5)
    assert cm.counts.sum() == len(pairs)
    assert cm.accuracy == pytest.approx(np.mean(t == p))
    rows = cm.counts.sum(axis=1) > 0
    assert np.allclose(cm.normalized()[rows].sum(axis=1), 1)
