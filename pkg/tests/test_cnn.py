import json
import math
import struct

import numpy as np
import pytest

import emoguard.cnn as cnn
from emoguard.cnn import (
    LABELS,
    AdamState,
    Architecture,
    TrainConfig,
    adam_step,
    forward,
    init_model,
    load_model,
    loss_and_grad,
    model_bytes,
    parse_model,
    predict,
    predict_batch,
    save_model,
    train,
)
from emoguard.errors import (
    LabelError,
    ModelFormatError,
    ModelTruncatedError,
    ShapeMismatchError,
)
from emoguard.features import FeatureMatrix, MfccConfig, mfcc
from oracles import gradient_check
from synth import two_tone_set

SMALL = Architecture((4, 4, 4), (5, 5, 3), 8)
FOUR = ("neutral", "happy", "sad", "angry")


def small_model(seed=0, dtype=np.float32, labels=FOUR):
    return init_model(seed, labels, (8, 16), "fp", architecture=SMALL, dtype=dtype)


def test_init_is_deterministic_with_zero_biases():
    a, b = init_model(7, LABELS, feature_fingerprint="x"), init_model(7, LABELS, feature_fingerprint="x")
    assert a.checksum() == b.checksum()
    assert init_model(8, LABELS).checksum() != a.checksum()
    for name, t in a.tensors.items():
        if name.endswith(".b"):
            assert not t.any()
    bound = math.sqrt(6 / (40 * 5))
    assert abs(bound - 0.1732) < 1e-4
    w = a.tensors["conv1.w"]
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound


def test_label_validation():
    with pytest.raises(LabelError):
        init_model(0, ["neutral"])
    with pytest.raises(LabelError):
        init_model(0, ["neutral", "bored"])
    with pytest.raises(LabelError):
        init_model(0, ["sad", "sad"])


def test_zero_input_gives_equal_logits_at_init():
    p = init_model(0, LABELS)
    logits, _ = forward(p, np.zeros((40, 256)))
    assert np.allclose(logits, logits[0])
    v = predict(p, np.zeros((40, 256)))
    assert v.label == LABELS[0]
    assert v.confidence == pytest.approx(1 / 8)


def test_eval_mode_is_deterministic(rng):
    p = init_model(1, LABELS)
    x = rng.normal(size=(40, 256))
    a, _ = forward(p, x)
    b, _ = forward(p, x)
    assert a.tobytes() == b.tobytes()


def test_pool_arithmetic_and_shape_rejection(rng):
    p = init_model(0, LABELS)
    _, cache = forward(p, rng.normal(size=(2, 40, 256)))
    assert cache["z1"].shape == (2, 64, 256)
    assert cache["z2"].shape == (2, 128, 128)
    assert cache["z3"].shape == (2, 128, 64)
    for bad in [(40, 255), (39, 256), (40, 512)]:
        with pytest.raises(ShapeMismatchError):
            forward(p, np.zeros(bad))


def test_fingerprint_mismatch_rejected():
    p = init_model(0, LABELS, feature_fingerprint=MfccConfig().fingerprint())
    other = FeatureMatrix(np.zeros((40, 256)), MfccConfig(fmin_hz=50).fingerprint())
    with pytest.raises(ShapeMismatchError):
        predict(p, other)


def test_uniform_logits_loss_is_ln8():
    p = init_model(0, LABELS)
    p = p.with_tensors({k: np.zeros_like(t) for k, t in p.tensors.items()})
    loss, _ = loss_and_grad(p, [(np.zeros((40, 256)), "sad")], train_mode=False)
    assert loss == pytest.approx(math.log(8), abs=1e-6)
    assert abs(math.log(8) - 2.0794) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    worst, _ = gradient_check(seed)
    assert worst <= 1e-4


def test_gradient_oracle_catches_a_broken_backward(monkeypatch):
    def wrong_pool_backward(dout, pick, T):
        B, C, t2 = dout.shape
        dx = np.zeros((B, C, T), dtype=dout.dtype)
        dx[:, :, 0: 2 * t2: 2] = dout  # always routes to the first element
        return dx

    monkeypatch.setattr(cnn, "_pool_backward", wrong_pool_backward)
    worst, _ = gradient_check(0)
    assert worst > 1e-2


def test_duplicated_batch_is_invariant(rng):
    p = small_model(dtype=np.float64)
    x = rng.normal(size=(3, 8, 16))
    y = np.array([0, 2, 3])
    l1, g1 = loss_and_grad(p, (x, y), train_mode=False)
    l2, g2 = loss_and_grad(p, (np.concatenate([x, x]), np.concatenate([y, y])), train_mode=False)
    assert l1 == pytest.approx(l2, rel=1e-12)
    for k in g1:
        assert np.allclose(g1[k], g2[k], rtol=1e-10, atol=1e-14)


def test_unknown_label_in_batch():
    p = small_model()
    with pytest.raises(LabelError):
        loss_and_grad(p, [(np.zeros((8, 16)), "calm")])


def test_adam_zero_gradient_is_noop():
    p = small_model()
    zeros = {k: np.zeros_like(t) for k, t in p.tensors.items()}
    q, _ = adam_step(p, zeros, AdamState.zeros_like(p), 1, TrainConfig())
    assert q.checksum() == p.checksum()


def test_adam_first_step_is_lr_times_sign(rng):
    p = small_model(dtype=np.float64)
    g = {k: rng.normal(size=t.shape) for k, t in p.tensors.items()}
    cfg = TrainConfig(learning_rate=1e-3)
    q, state = adam_step(p, g, AdamState.zeros_like(p), 1, cfg)
    for k in g:
        step = p.tensors[k] - q.tensors[k]
        assert np.allclose(step, 1e-3 * np.sign(g[k]), atol=1e-8)
    # original moments untouched
    assert not any(m.any() for m in AdamState.zeros_like(p).m.values())
    assert any(m.any() for m in state.m.values())


def test_adam_is_deterministic(rng):
    p0 = small_model()
    gs = [{k: rng.normal(size=t.shape).astype(np.float32) for k, t in p0.tensors.items()}
          for _ in range(10)]

    def run():
        p, s = p0, AdamState.zeros_like(p0)
        for t, g in enumerate(gs, 1):
            p, s = adam_step(p, g, s, t, TrainConfig())
        return p.checksum()

    assert run() == run()


@pytest.fixture(scope="module")
def toy_features():
    clips = two_tone_set(20, seed=3)
    cfg = MfccConfig()
    feats = [(mfcc(c, cfg), lab) for c, lab in clips]
    return feats[:32], feats[32:], cfg


def test_toy_set_reaches_full_accuracy(toy_features):
    tr, va, mcfg = toy_features
    params, hist = train(tr, va, TrainConfig(seed=0, epochs=30, batch_size=8),
                         feature_fingerprint=mcfg.fingerprint())
    assert max(s.val_accuracy for s in hist) == 1.0
    assert max(s.train_accuracy for s in hist) == 1.0
    assert params.label_list == ("calm", "angry")
    assert all(predict(params, x).label == lab for x, lab in va)


def test_training_is_bit_reproducible_and_keeps_best(toy_features):
    tr, va, _ = toy_features
    cfg = TrainConfig(seed=5, epochs=4, batch_size=8)
    a, ha = train(tr, va, cfg)
    b, hb = train(tr, va, cfg)
    assert a.checksum() == b.checksum()
    assert [vars(s) for s in ha] == [vars(s) for s in hb]
    best_epoch = max(ha, key=lambda s: s.val_accuracy)
    x = np.stack([f.values for f, _ in va])
    y = np.array([a.label_list.index(l) for _, l in va])
    _, acc = cnn.evaluate(a, x.astype(np.float32), y)
    assert acc == best_epoch.val_accuracy


def test_softmax_normalisation(rng):
    p = init_model(2, LABELS)
    xs = [rng.normal(size=(40, 256)) * s for s in (0.1, 1, 10)]
    for v in predict_batch(p, xs):
        assert abs(sum(v.probabilities) - 1) <= 1e-9
        assert min(v.probabilities) >= 0
        assert v.confidence == max(v.probabilities)


def test_batch_and_single_predictions_agree(rng):
    p = init_model(2, LABELS)
    xs = [rng.normal(size=(40, 256)) for _ in range(3)]
    singles = [predict(p, x) for x in xs]
    assert [v.label for v in predict_batch(p, xs)] == [v.label for v in singles]


def test_dropout_expectation_matches_eval(rng):
    p = small_model(seed=4, dtype=np.float64)
    x = rng.normal(size=(8, 16))
    eval_logits, _ = forward(p, x)
    n = 10_000
    samples = np.stack([forward(p, x, train_mode=True, dropout_seed=s)[0] for s in range(n)])
    mean, sem = samples.mean(0), samples.std(0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(mean - eval_logits) <= 3 * sem + 1e-12)


def test_save_load_roundtrip(tmp_path):
    cfg = MfccConfig()
    p = init_model(3, ("sad", "angry", "happy"), feature_fingerprint=cfg.fingerprint(),
                   feature_config=cfg.to_dict())
    path = tmp_path / "m.emoc"
    save_model(p, path)
    q = load_model(path)
    assert q.checksum() == p.checksum()
    assert q.label_list == p.label_list
    assert q.feature_config == cfg.to_dict()
    assert path.read_bytes()[:6] == b"EMOC1\0"


def test_corrupt_and_truncated_files():
    p = init_model(3, ("sad", "angry"), feature_fingerprint="abc")
    data = model_bytes(p)
    with pytest.raises(ModelFormatError):
        parse_model(b"XXXXX\0" + data[6:])
    for cut in (8, 40, len(data) - 1):
        with pytest.raises(ModelTruncatedError):
            parse_model(data[:cut])


def test_missing_fingerprint_rejected():
    p = init_model(3, ("sad", "angry"))
    with pytest.raises(ModelFormatError):
        model_bytes(p)
    data = model_bytes(init_model(3, ("sad", "angry"), feature_fingerprint="Z"))
    _, hlen = struct.unpack_from("<HI", data, 6)
    header = json.loads(data[12:12 + hlen])
    header["feature_fingerprint"] = ""
    hb = json.dumps(header).encode()
    hacked = data[:6] + struct.pack("<HI", 1, len(hb)) + hb + data[12 + hlen:]
    with pytest.raises(ModelFormatError, match="fingerprint"):
        parse_model(hacked)
