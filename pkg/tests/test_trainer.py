import io

import numpy as np
import pytest

from flowids import container
from flowids import model as M
from flowids.baselines import cnn_only_config
from flowids.errors import (ChecksumMismatch, EmptyData, InvalidConfig, LabelOutOfRange,
                            NonFiniteLoss, Truncated, UnknownVersion)
from flowids.flow_ingest import LabelSpace
from flowids.preprocess import fit_minmax, fit_pca, MinMaxParams
from flowids.tensor import Tape
from flowids.trainer import (Checkpoint, History, EpochRecord, TrainConfig, batch_gradients,
                             checkpoint_bytes, inverse_frequency_weights, load_checkpoint,
                             save_checkpoint, train)


def separable_toy(n=100, length=8, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, length))
    y = (x[:, :4].sum(axis=1) > x[:, 4:].sum(axis=1)).astype(np.int64)
    return x, y


def test_overfits_separable_toy():
    x, y = separable_toy()
    p = M.build(M.tiny_config(), seed=0)
    cfg = TrainConfig(batch_size=20, epochs=200, learning_rate=0.01, seed=0, early_stop_patience=0)
    best, hist = train(p, x, y, config=cfg)
    assert max(r.val_accuracy for r in hist.records) == 1.0
    assert np.mean(M.predict(best, x) == y) == 1.0


def test_training_is_deterministic():
    x, y = separable_toy(60)
    cfg = TrainConfig(batch_size=16, epochs=3, seed=5)
    runs = [train(M.build(M.tiny_config(dropout_rate=0.2), seed=1), x, y, config=cfg) for _ in range(2)]
    assert runs[0][0].equals(runs[1][0])
    assert runs[0][1].to_csv() == runs[1][1].to_csv()


@pytest.mark.parametrize("optimizer", ["adam", "sgd_momentum"])
def test_zero_learning_rate_keeps_params(optimizer):
    x, y = separable_toy(30)
    p = M.build(M.tiny_config(), seed=2)
    best, _ = train(p, x, y, config=TrainConfig(batch_size=8, epochs=3, learning_rate=0.0,
                                                 optimizer=optimizer))
    assert best.equals(p)


def test_input_params_not_mutated():
    x, y = separable_toy(30)
    p = M.build(M.tiny_config(), seed=2)
    before = p.copy()
    train(p, x, y, config=TrainConfig(batch_size=8, epochs=2, learning_rate=0.1))
    assert p.equals(before)


def test_full_batch_sgd_step_matches_manual_gradient():
    x, y = separable_toy(4)
    p = M.build(M.tiny_config(), seed=3)
    with Tape() as tape:
        value = M.loss(p, x, y, train_mode=True)
        manual = tape.gradients(value, p.values())
    lr = 0.05
    cfg = TrainConfig(batch_size=4, epochs=1, learning_rate=lr, optimizer="sgd_momentum",
                      momentum=0.9, shuffle=False)
    trained, hist = train(p, x, y, config=cfg)
    assert hist.best_epoch == 1  # one epoch on one batch is a single step
    for name, g in zip(p.names, manual):
        np.testing.assert_allclose(trained[name].data, p[name].data - lr * g, rtol=0, atol=1e-15)


def test_sharded_gradients_sum_to_whole_batch():
    x, y = separable_toy(12)
    p = M.build(M.tiny_config(), seed=4)
    whole_v, whole_g = batch_gradients(p, x, y, seed=0, shards=1)
    parts_v, parts_g = batch_gradients(p, x, y, seed=0, shards=3)
    assert parts_v == pytest.approx(whole_v, rel=1e-12)
    for a, b in zip(whole_g, parts_g):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_weighted_shards_sum_to_whole_batch():
    x, y = separable_toy(12)
    p = M.build(M.tiny_config(head="softmax_xent"), seed=4)
    w = inverse_frequency_weights(y, 2)[y]
    whole_v, whole_g = batch_gradients(p, x, y, seed=0, weights=w, shards=1)
    parts_v, parts_g = batch_gradients(p, x, y, seed=0, weights=w, shards=4)
    assert parts_v == pytest.approx(whole_v, rel=1e-12)
    for a, b in zip(whole_g, parts_g):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_parallel_equals_single_threaded():
    x, y = separable_toy(40)
    cfg = TrainConfig(batch_size=16, epochs=2, seed=1, grad_shards=3)
    p = M.build(M.tiny_config(dropout_rate=0.3), seed=0)
    a, _ = train(p, x, y, config=cfg)
    b, _ = train(p, x, y, config=TrainConfig(**{**cfg.to_dict(), "workers": 3}))
    assert a.equals(b)


def test_early_stopping_returns_best_epoch():
    x, y = separable_toy(40)
    vx, vy = separable_toy(40, seed=9)
    cfg = TrainConfig(batch_size=8, epochs=30, learning_rate=0.05, early_stop_patience=2, seed=0)
    best, hist = train(M.build(M.tiny_config(), seed=0), x, y, vx, vy, config=cfg)
    accs = [r.val_accuracy for r in hist.records]
    assert len(hist) <= 30
    assert hist.best_val_accuracy == max(accs)
    assert np.mean(M.predict(best, vx) == vy) == max(accs)
    if hist.stopped_early:
        assert len(hist) - hist.best_epoch == 2
    else:
        assert len(hist) == 30


def test_history_full_length_without_early_stop():
    x, y = separable_toy(20)
    _, hist = train(M.build(M.tiny_config(), 0), x, y, config=TrainConfig(batch_size=10, epochs=4))
    assert len(hist) == 4 and not hist.stopped_early
    lines = hist.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_accuracy" and len(lines) == 5


def test_non_finite_loss_aborts():
    x, y = separable_toy(20)
    x[13, 2] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        train(M.build(M.tiny_config(), 0), x, y, config=TrainConfig(batch_size=10, epochs=2, shuffle=False))
    assert (info.value.epoch, info.value.batch) == (1, 2)


def test_train_input_errors():
    p = M.build(M.tiny_config(), 0)
    with pytest.raises(EmptyData):
        train(p, np.zeros((0, 8)), np.zeros(0, int))
    with pytest.raises(LabelOutOfRange):
        train(p, np.zeros((2, 8)), [0, 2])
    with pytest.raises(InvalidConfig):
        train(p, np.zeros((2, 8)), [0, 1], config=TrainConfig(batch_size=0))
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"batch_size": 4, "bogus": 1})


# checkpoints


def sample_checkpoint(config=None):
    config = config or M.tiny_config(n_classes=3)
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(50, 10))
    from flowids.flow_ingest import FlowTable
    table = FlowTable(tuple(f"f{i}" for i in range(10)), raw, np.zeros(50, np.int64), ("BENIGN",))
    hist = History([EpochRecord(1, 0.5, 0.25), EpochRecord(2, 0.1 + 0.2, 1 / 3)], 2, False)
    return Checkpoint("proposed", LabelSpace(("BENIGN", "DDoS", "PortScan"), 0), config,
                      M.build(config, seed=7), fit_minmax(table), fit_pca(table, 8), hist,
                      table.feature_names, meta={"seed": 3})


def test_checkpoint_round_trip_bitwise():
    ckpt = sample_checkpoint()
    blob = checkpoint_bytes(ckpt)
    back = load_checkpoint(blob)
    assert checkpoint_bytes(back) == blob
    assert back.params.equals(ckpt.params)
    assert back.pca.components.tobytes() == ckpt.pca.components.tobytes()
    assert back.history.records == ckpt.history.records
    assert back.label_space == ckpt.label_space
    assert back.meta == {"seed": 3}


def test_checkpoint_file_round_trip(tmp_path):
    path = tmp_path / "model.ckpt"
    blob = save_checkpoint(sample_checkpoint(), path)
    assert path.read_bytes() == blob
    buf = io.BytesIO()
    save_checkpoint(load_checkpoint(path), buf)
    assert buf.getvalue() == blob


def test_flipped_byte_detected():
    blob = bytearray(checkpoint_bytes(sample_checkpoint()))
    blob[-100] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        load_checkpoint(bytes(blob))


def test_every_flipped_payload_byte_fails_cleanly():
    blob = checkpoint_bytes(sample_checkpoint(M.tiny_config(n_classes=2, lstm_hidden=1)))
    for pos in range(0, len(blob), 97):
        bad = bytearray(blob)
        bad[pos] ^= 0x20
        with pytest.raises((ChecksumMismatch, Truncated, UnknownVersion)):
            load_checkpoint(bytes(bad))


def test_truncated_and_unknown_version():
    blob = checkpoint_bytes(sample_checkpoint())
    for cut in (5, 40, len(blob) // 2, len(blob) - 1):
        with pytest.raises(Truncated):
            load_checkpoint(blob[:cut])
    newer = blob.replace(b"version 1\n", b"version 9\n", 1)
    with pytest.raises(UnknownVersion):
        load_checkpoint(newer)
    with pytest.raises(UnknownVersion):
        load_checkpoint(b"PK\x03\x04 not ours")


def test_cnn_only_checkpoint_predicts():
    cfg = cnn_only_config(3, input_length=8, base=M.tiny_config(n_classes=3))
    ckpt = Checkpoint("cnn", LabelSpace(("a", "b", "c")), cfg, M.build(cfg, seed=1))
    back = load_checkpoint(checkpoint_bytes(ckpt))
    assert not any(n.startswith("lstm") for n in back.params.names)
    x = np.random.default_rng(0).uniform(size=(5, 8))
    np.testing.assert_array_equal(M.predict(back.params, x), M.predict(ckpt.params, x))


def test_container_preserves_int_arrays_and_kind():
    blob = container.pack("thing", {"a": [1, 2]}, {"i": np.arange(5), "f": np.eye(2)})
    kind, meta, arrays = container.unpack(blob)
    assert kind == "thing" and meta == {"a": [1, 2]}
    assert arrays["i"].dtype == np.int64 and arrays["i"].tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(UnknownVersion):
        container.unpack(blob, expected_kind="checkpoint")


def test_minmax_only_checkpoint():
    ckpt = Checkpoint("knn", LabelSpace(("a", "b")), minmax=MinMaxParams(np.zeros(2), np.ones(2)),
                      arrays={"knn.features": np.eye(2), "knn.labels": np.array([0, 1])}, meta={"k": 1})
    back = load_checkpoint(checkpoint_bytes(ckpt))
    assert back.params is None and back.pca is None
    assert back.arrays["knn.labels"].tolist() == [0, 1]
