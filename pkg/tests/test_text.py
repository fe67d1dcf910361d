import re

import numpy as np
import pytest

from mmfs.autodiff import GradTape, Tensor, adam_step, backward, concat, cross_entropy_loss, linear, softmax
from mmfs.autodiff.nn import Linear
from mmfs.exceptions import EmptyCorpusError, IndexOutOfRangeError, NoMaskableTokensError, ShapeMismatchError
from mmfs.text import (
    CLS,
    MASK,
    PAD,
    SEP,
    UNK,
    TextEncoder,
    TextEncoderConfig,
    Vocab,
    build_vocab,
    encode_text,
    mlm_logits,
    mlm_mask,
    nsp_probability,
    tokenize,
)


def small_encoder(vocab_size=20, seed=0, **kw):
    cfg = TextEncoderConfig(vocab_size=vocab_size, **{"embed_dim": 32, "num_heads": 4, "num_layers": 2,
                                                      "max_seq_len": 8, "dropout": 0.0, **kw})
    return TextEncoder(cfg, np.random.default_rng(seed))


def random_batch(rng, B=2, S=8, V=20, lengths=(5, 3)):
    ids = rng.integers(5, V, size=(B, S))
    mask = np.zeros((B, S), dtype=bool)
    for b, n in enumerate(lengths):
        mask[b, :n] = True
    ids[:, 0] = CLS
    ids[~mask] = PAD
    return ids, mask


# ----------------------------------------------------------------------------
# vocabulary and tokenizer


def test_build_vocab_frequency_order_and_reserved_ids():
    v = build_vocab(["a b", "a"])
    assert v.itos[:5] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    assert v.id("a") == 5 and v.id("b") == 6
    assert (PAD, UNK, CLS, SEP, MASK) == (0, 1, 2, 3, 4)


def test_build_vocab_ties_lexicographic_and_limits():
    v = build_vocab(["zeta alpha beta", "beta"])
    assert v.words == ["beta", "alpha", "zeta"]
    assert build_vocab(["a a b c"], min_count=2).words == ["a"]
    assert len(build_vocab(["a b c d"], max_size=7)) == 7
    with pytest.raises(EmptyCorpusError):
        build_vocab([])


def test_unseen_token_maps_to_unk():
    assert build_vocab(["a b"]).encode("a zebra") == [5, UNK]


def test_round_trip_on_synthetic_vocab(synth_samples):
    texts = [s.text for s in synth_samples]
    v = build_vocab(texts)
    for t in texts:
        normalized = " ".join(re.findall(r"[^\W_]+", t.lower()))
        assert v.decode(v.encode(t.upper() + "!")) == normalized


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["b a a c"])
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()
    for n, tok in enumerate(lines):
        assert v.id(tok) == n + 5
    assert Vocab.load(tmp_path / "vocab.txt").itos == v.itos


def test_tokenize_examples(synth_samples):
    v = build_vocab(["hello world"])
    ids, mask = tokenize("", v, 6)
    assert ids.tolist() == [CLS, PAD, PAD, PAD, PAD, PAD]
    assert mask.tolist() == [True, False, False, False, False, False]
    ids, mask = tokenize("hello world " * 10, v, 6)
    assert len(ids) == 6 and mask.all()
    synth_vocab = build_vocab([s.text for s in synth_samples])
    ids, mask = tokenize("how i feel today", synth_vocab, 32)
    assert int(mask.sum()) == 5 and ids[0] == CLS
    with pytest.raises(ValueError):
        tokenize("x", v, 1)


# ----------------------------------------------------------------------------
# encoder


def test_encode_shapes_and_cls_pooling(rng):
    enc = small_encoder(max_seq_len=8)
    ids, mask = random_batch(rng)
    out = encode_text(ids, mask, enc)
    assert out.H.shape == (2, 8, 32) and out.F.shape == (2, 32)
    pooled = np.tanh(out.H.data[:, 0] @ enc.pooler.w.data + enc.pooler.b.data)
    np.testing.assert_array_equal(out.F.data, pooled)


def test_mean_pooling_switch(rng):
    enc = small_encoder(pooling="mean")
    ids, mask = random_batch(rng)
    out = encode_text(ids, mask, enc)
    m = mask[..., None]
    mean = (out.H.data * m).sum(axis=1) / m.sum(axis=1)
    np.testing.assert_allclose(out.F.data, np.tanh(mean @ enc.pooler.w.data + enc.pooler.b.data), atol=1e-14)


def test_pad_positions_get_zero_attention(rng):
    enc = small_encoder()
    ids, mask = random_batch(rng)
    x = enc.token_embedding(ids).data + enc.position_embedding(np.arange(8)).data
    for layer in enc.layers:
        x, w = layer(Tensor(x), mask=mask, return_weights=True)
        x = x.data
        pad = ~mask[:, None, None, :]
        assert (np.broadcast_to(pad, w.shape) <= (w.data == 0)).all()


def test_masking_soundness(rng):
    enc = small_encoder()
    ids, mask = random_batch(rng)
    base = encode_text(ids, mask, enc).H.data
    other = ids.copy()
    other[~mask] = rng.integers(5, 20, size=int((~mask).sum()))
    changed = encode_text(other, mask, enc).H.data
    assert np.abs(base[mask] - changed[mask]).max() <= 1e-12


def test_batch_equivariance(rng):
    enc = small_encoder()
    ids, mask = random_batch(rng, B=4, lengths=(5, 3, 8, 2))
    perm = np.array([2, 0, 3, 1])
    a = encode_text(ids, mask, enc)
    b = encode_text(ids[perm], mask[perm], enc)
    np.testing.assert_allclose(b.H.data, a.H.data[perm], atol=1e-12)
    np.testing.assert_allclose(b.F.data, a.F.data[perm], atol=1e-12)


def test_encode_errors(rng):
    enc = small_encoder()
    with pytest.raises(ShapeMismatchError):
        encode_text(np.zeros((2, 9), dtype=int), np.ones((2, 9), dtype=bool), enc)
    with pytest.raises(IndexOutOfRangeError):
        encode_text(np.full((1, 3), 99), np.ones((1, 3), dtype=bool), enc)
    with pytest.raises(ValueError):
        TextEncoderConfig(vocab_size=20, embed_dim=30, num_heads=4)


def test_gradient_reaches_every_encoder_parameter_on_the_path(rng):
    enc = small_encoder(dropout=0.1)
    head = Linear(32, 3, rng)
    ids, mask = random_batch(rng, B=3, lengths=(5, 3, 8))
    with GradTape() as tape:
        out = encode_text(ids, mask, enc, training=True, rng=rng)
        loss = cross_entropy_loss(head(out.F), np.array([0, 1, 2]))
    backward(loss, tape)
    off_path = ("mlm_head", "nsp_head", "segment_embedding")
    for name, p in enc.named_parameters().items():
        if not name.startswith(off_path):
            assert np.linalg.norm(p.grad) > 0, name


def test_parameter_names_unique_and_layer_count():
    enc = small_encoder(num_layers=3)
    names = list(enc.named_parameters())
    assert len(names) == len(set(names))
    assert len(enc.layers) == 3


# ----------------------------------------------------------------------------
# pretraining heads


def test_mlm_mask_boundary_and_eligibility(rng):
    ids = np.array([[CLS, 7, 8, SEP, 9, PAD, PAD]])
    mask = ids != PAD
    for _ in range(50):
        corrupted, pos, targets = mlm_mask(ids, mask, rng, vocab_size=12, mask_rate=0.0)
        assert len(pos) == 1
        s = pos[0, 1]
        assert ids[0, s] not in (CLS, SEP, PAD)
        assert targets[0] == ids[0, s]
    for _ in range(200):
        _, pos, _ = mlm_mask(ids, mask, rng, vocab_size=12, mask_rate=0.9)
        assert set(pos[:, 1]) <= {1, 2, 4}
    with pytest.raises(NoMaskableTokensError):
        mlm_mask(np.array([[CLS, SEP, PAD]]), np.array([[True, True, False]]), rng, 12)


def test_mlm_selection_rate_and_replacement_mix():
    rng = np.random.default_rng(0)
    ids = np.concatenate([[CLS], np.arange(5, 45)])[None]
    mask = np.ones_like(ids, dtype=bool)
    selected = 0
    kinds = np.zeros(3)
    trials = 10_000
    for _ in range(trials):
        corrupted, pos, targets = mlm_mask(ids, mask, rng, vocab_size=50)
        selected += len(pos)
        new = corrupted[pos[:, 0], pos[:, 1]]
        kinds += [(new == MASK).sum(), ((new != MASK) & (new != targets)).sum(), (new == targets).sum()]
    assert abs(selected / (trials * 40) - 0.15) < 0.01
    frac = kinds / kinds.sum()
    # "unchanged" also catches random draws that happen to hit the original token
    assert abs(frac[0] - 0.8) < 0.01 and abs(frac[1] - 0.1 * 44 / 45) < 0.01 and abs(frac[2] - 0.1 - 0.1 / 45) < 0.01


def test_mlm_logits_shape_and_normalization(rng):
    enc = small_encoder(vocab_size=20)
    ids, mask = random_batch(rng)
    H = encode_text(ids, mask, enc).H
    for pos in (np.array([[0, 1]]), np.array([[0, 1], [1, 2], [0, 4]])):
        logits = mlm_logits(H, pos, enc)
        assert logits.shape == (len(pos), 20)
        assert np.abs(softmax(logits, -1).data.sum(axis=1) - 1).max() < 1e-9
    with pytest.raises(IndexOutOfRangeError):
        mlm_logits(H, np.array([[5, 0]]), enc)


def test_mlm_overfits_one_sentence():
    vocab = build_vocab(["the quick brown fox jumps over lazy dogs"])
    ids, mask = tokenize("the quick brown fox jumps over lazy dogs", vocab, 10)
    ids, mask = ids[None], mask[None]
    enc = small_encoder(vocab_size=len(vocab), max_seq_len=10, seed=1)
    rng = np.random.default_rng(2)
    params = enc.parameters()
    for _ in range(300):
        corrupted, pos, targets = mlm_mask(ids, mask, rng, len(vocab))
        with GradTape() as tape:
            out = encode_text(corrupted, mask, enc)
            loss = cross_entropy_loss(mlm_logits(out.H, pos, enc), targets)
        backward(loss, tape)
        adam_step(params, 3e-3)
    real = np.argwhere(mask & (ids >= 5))
    corrupted = ids.copy()
    corrupted[mask & (ids >= 5)] = MASK
    H = encode_text(corrupted, mask, enc).H
    pred = mlm_logits(H, real, enc).data.argmax(axis=1)
    np.testing.assert_array_equal(pred, ids[mask & (ids >= 5)])


def test_nsp_examples(rng):
    enc = small_encoder()
    enc.nsp_head.w.data[...] = 0.0
    enc.nsp_head.b.data[...] = 0.0
    F = Tensor(rng.normal(size=(3, 32)))
    np.testing.assert_array_equal(nsp_probability(F, F, enc).data, [0.5, 0.5, 0.5])
    enc = small_encoder()
    big = Tensor(rng.normal(scale=100, size=(50, 32)))
    p = nsp_probability(big, Tensor(-big.data), enc).data
    assert p.shape == (50,) and np.isfinite(p).all()
    p = nsp_probability(Tensor(rng.normal(size=(50, 32))), Tensor(rng.normal(size=(50, 32))), enc).data
    assert ((p > 0) & (p < 1)).all()
    with pytest.raises(ShapeMismatchError):
        nsp_probability(F, Tensor(np.ones((2, 32))), enc)


def _sentence_pairs(n, rng):
    """Consecutive pairs continue the same topic; shuffled pairs switch topic."""
    topics = [["rain", "cloud", "storm", "wet"], ["goal", "match", "score", "team"],
              ["bread", "oven", "flour", "bake"], ["train", "track", "station", "ticket"]]
    pairs, labels = [], []
    for i in range(n):
        t = int(rng.integers(4))
        nxt = i % 2 == 0
        u = t if nxt else int((t + rng.integers(1, 4)) % 4)
        a = " ".join(rng.choice(topics[t], size=3))
        b = " ".join(rng.choice(topics[u], size=3))
        pairs.append((a, b))
        labels.append(1.0 if nxt else 0.0)
    return pairs, np.array(labels)


def test_nsp_learns_synthetic_pairs():
    rng = np.random.default_rng(0)
    pairs, labels = _sentence_pairs(200, rng)
    vocab = build_vocab([p for pair in pairs for p in pair])
    tok = lambda texts: [np.stack(v) for v in zip(*(tokenize(t, vocab, 6) for t in texts))]  # noqa: E731
    ids_a, mask_a = tok([a for a, _ in pairs])
    ids_b, mask_b = tok([b for _, b in pairs])
    enc = small_encoder(vocab_size=len(vocab), max_seq_len=6)
    params = enc.parameters()
    y = labels.astype(np.int64)
    for _ in range(60):
        with GradTape() as tape:
            F_a, F_b = enc(ids_a, mask_a).F, enc(ids_b, mask_b).F
            z = linear(concat([F_a, F_b], dim=1), enc.nsp_head.w, enc.nsp_head.b)
            # softmax over [0, z] is sigmoid(z), so this is binary cross-entropy
            loss = cross_entropy_loss(concat([Tensor(np.zeros((200, 1))), z], dim=1), y)
        backward(loss, tape)
        adam_step(params, 3e-3)
    p = nsp_probability(enc(ids_a, mask_a).F, enc(ids_b, mask_b).F, enc).data
    assert ((p > 0.5) == (labels > 0.5)).mean() >= 0.9
