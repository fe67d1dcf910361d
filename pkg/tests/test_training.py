import numpy as np
import pytest

from mmfs.checkpoint import (
    MAGIC,
    decode_tensors,
    encode_tensors,
    load_checkpoint,
    read_sidecar,
    save_checkpoint,
    sidecar_path,
)
from mmfs.config import TrainConfig
from mmfs.data import split_dataset
from mmfs.exceptions import (
    BadMagicError,
    EmptySplitError,
    NonFiniteLossError,
    TensorCountMismatchError,
    VersionMismatchError,
)
from mmfs.fusion import TABLE_ORDER, FusionConfig, FusionKind
from mmfs.image import ImageEncoderConfig
from mmfs.text import TextEncoderConfig, build_vocab
from mmfs.training import ModelBundle, evaluate, predict, train, trim_padding


def small_bundle(kind, vocab, seed=0):
    return ModelBundle(kind, vocab,
                       TextEncoderConfig(vocab_size=len(vocab), embed_dim=16, num_heads=2, num_layers=1,
                                         max_seq_len=16),
                       ImageEncoderConfig(image_size=32, stem_channels=4, stages=[(1, 4, 2), (1, 8, 2)]),
                       FusionConfig(d_model=16, num_heads=2), seed=seed)


@pytest.fixture(scope="module")
def small_split(synth_samples):
    return split_dataset(synth_samples, (80, 20, 20), seed=0)


@pytest.fixture(scope="module")
def vocab(small_split):
    return build_vocab([s.text for s in small_split.train])


def params_of(bundle):
    return {k: v.copy() for k, v in bundle.state_dict().items()}


def tcfg(**kw):
    return TrainConfig(**{"epochs": 2, "batch_size": 16, "learning_rate": 1e-3, "max_seq_len": 16, **kw})


def test_trim_padding_drops_all_pad_columns():
    ids = np.array([[2, 7, 3, 0, 0], [2, 3, 0, 0, 0]])
    mask = ids != 0
    t_ids, t_mask = trim_padding(ids, mask)
    np.testing.assert_array_equal(t_ids, ids[:, :3])
    np.testing.assert_array_equal(t_mask, mask[:, :3])


def test_trim_padding_leaves_outputs_unchanged(small_split, vocab):
    from mmfs.data import make_batches
    bundle = small_bundle(FusionKind.CMAC, vocab)
    batch = next(iter(make_batches(small_split.val, vocab, 8, 16)))
    narrow_ids, narrow_mask = trim_padding(batch.ids, batch.mask)
    assert narrow_ids.shape[1] < batch.ids.shape[1]
    out = bundle.forward(batch.ids, batch.mask, batch.images)
    ref = bundle.fusion(bundle.text_encoder(batch.ids, batch.mask), bundle.image_encoder(batch.images))
    assert np.abs(out.p.data - ref.p.data).max() <= 1e-12


def test_unused_encoders_are_not_built(vocab):
    assert small_bundle(FusionKind.TextOnly, vocab).image_encoder is None
    assert small_bundle(FusionKind.ImageOnly, vocab).text_encoder is None
    b = small_bundle(FusionKind.OTE, vocab)
    assert b.text_encoder is not None and b.image_encoder is not None


def test_training_is_deterministic(small_split, vocab):
    runs = []
    for _ in range(2):
        bundle = small_bundle(FusionKind.NativeCat, vocab, seed=5)
        _, hist = train(bundle, small_split, tcfg(seed=5))
        runs.append((hist.step_losses, params_of(bundle)))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])


def test_zero_learning_rate_leaves_parameters_unchanged(small_split, vocab):
    bundle = small_bundle(FusionKind.HSTEC, vocab)
    before = {k: p.data.copy() for k, p in bundle.named_parameters().items()}
    train(bundle, small_split, tcfg(learning_rate=0.0, epochs=1))
    for k, p in bundle.named_parameters().items():
        np.testing.assert_array_equal(p.data, before[k], err_msg=k)


def test_best_epoch_is_earliest_maximum(small_split, vocab):
    bundle = small_bundle(FusionKind.NativeCombine, vocab)
    best_state, hist = train(bundle, small_split, tcfg(epochs=3))
    acc = hist.val_accuracy
    assert hist.best_epoch == int(np.argmax(acc))
    assert len(hist.epoch_losses) == 3 and len(hist.step_losses) == 3 * 5
    for k, v in bundle.state_dict().items():
        np.testing.assert_array_equal(v, best_state[k])
    assert evaluate(bundle, small_split.val).accuracy == acc[hist.best_epoch]


def test_max_steps_stops_early(small_split, vocab):
    bundle = small_bundle(FusionKind.TextOnly, vocab)
    _, hist = train(bundle, small_split, tcfg(epochs=5, max_steps=7))
    assert len(hist.step_losses) == 7 and len(hist.epoch_losses) == 2


def test_frozen_encoders_stay_fixed(small_split, vocab):
    bundle = small_bundle(FusionKind.CMAC, vocab)
    enc_before = [p.data.copy() for p in bundle.encoder_parameters()]
    head_before = [p.data.copy() for p in bundle.fusion.parameters()]
    train(bundle, small_split, tcfg(epochs=1, freeze_encoders=True))
    assert all(np.array_equal(a, p.data) for a, p in zip(enc_before, bundle.encoder_parameters()))
    assert any(not np.array_equal(a, p.data) for a, p in zip(head_before, bundle.fusion.parameters()))


def test_evaluate_is_pure_and_order_invariant(small_split, vocab):
    bundle = small_bundle(FusionKind.OTE, vocab)
    state = params_of(bundle)
    first = evaluate(bundle, small_split.test)
    again = evaluate(bundle, small_split.test, batch_size=3)
    shuffled = evaluate(bundle, small_split.test[::-1])
    for r in (again, shuffled):
        np.testing.assert_array_equal(r.confusion.counts, first.confusion.counts)
    for k, v in bundle.state_dict().items():
        np.testing.assert_array_equal(v, state[k])
    p, y = predict(bundle, small_split.test)
    assert p.shape == (20, 3) and (y == p.argmax(axis=1)).all()


def test_training_errors(small_split, vocab):
    bundle = small_bundle(FusionKind.NativeCat, vocab)
    empty_val = split_dataset(small_split.train, (80, 0, 0), seed=0)
    with pytest.raises(EmptySplitError):
        train(bundle, empty_val, tcfg())
    with pytest.raises(EmptySplitError):
        evaluate(bundle, [])
    bundle.fusion.classifier.fc2.w.data[:] = np.nan
    with pytest.raises(NonFiniteLossError) as exc:
        train(bundle, small_split, tcfg())
    assert exc.value.step == 0


# ----------------------------------------------------------------------------
# checkpoints


@pytest.mark.parametrize("kind", TABLE_ORDER, ids=lambda k: k.value)
def test_checkpoint_round_trip(kind, small_split, vocab, tmp_path):
    bundle = small_bundle(kind, vocab, seed=2)
    train(bundle, small_split, tcfg(epochs=1, max_steps=2))
    path = tmp_path / "m.ckpt"
    save_checkpoint(bundle, path, extra={"split": [80, 20, 20]})
    loaded = load_checkpoint(path)
    assert loaded.kind is kind and loaded.vocab.words == vocab.words
    assert read_sidecar(path)["extra"] == {"split": [80, 20, 20]}
    # float32 storage: the loaded model is the saved one rounded to single precision
    for k, v in bundle.state_dict().items():
        np.testing.assert_array_equal(loaded.state_dict()[k], v.astype(np.float32).astype(np.float64))
    save_checkpoint(loaded, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    first = evaluate(loaded, small_split.test)
    second = evaluate(load_checkpoint(path), small_split.test)
    assert first.to_dict() == second.to_dict()


def test_tensor_container_layout():
    from collections import OrderedDict
    state = OrderedDict([("a", np.arange(6.0).reshape(2, 3)), ("b", np.array(1.5))])
    raw = encode_tensors(state)
    assert raw[:4] == MAGIC
    # header + name/rank/dims/values per tensor
    assert len(raw) == 12 + (4 + 1 + 4 + 16 + 24) + (4 + 1 + 4 + 0 + 4)
    back = decode_tensors(raw)
    assert list(back) == ["a", "b"] and back["b"].shape == ()
    np.testing.assert_array_equal(back["a"], state["a"])


def test_checkpoint_corruption(small_split, vocab, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_bundle(FusionKind.NativeCat, vocab), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TensorCountMismatchError):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(path)
    path.write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)
    path.write_bytes(raw)
    meta = sidecar_path(path).read_text().replace('"kind": "NativeCat"', '"kind": "NativeCombine"')
    sidecar_path(path).write_text(meta)
    with pytest.raises(TensorCountMismatchError):
        load_checkpoint(path)
