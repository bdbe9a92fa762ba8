import pytest
import torch

from paradiff.codec import (
    BOS,
    EOS,
    MASK,
    PAD,
    UNK,
    CodecConfig,
    CodecModel,
    NormStats,
    Vocab,
    canonicalize_tokens,
    denormalize,
    fit_norm_stats,
    load_codec,
    normalize,
    roundtrip_accuracy,
    save_codec,
    train_codec,
)
from paradiff.errors import ValidationError


@pytest.fixture
def vocab():
    return Vocab(["how", "can", "i", "cook", "rice", "black", "money", "is", "gone"])


def test_tokenize_example(vocab):
    toks = vocab.tokenize("how can i", L=6)
    how, can, i = (vocab.token_to_id[w] for w in ["how", "can", "i"])
    assert toks.tolist() == [BOS, how, can, i, EOS, PAD]


def test_tokenize_detokenize_roundtrip(vocab):
    for s in ["how can i cook rice", "black money is gone", "rice"]:
        assert vocab.detokenize(vocab.tokenize(s, L=12)) == s


def test_out_of_vocab_maps_to_unk(vocab):
    toks = vocab.tokenize("how zzz i", L=6)
    assert toks[2] == UNK


def test_tokenize_truncates_to_length(vocab):
    toks = vocab.tokenize("how can i cook rice black money", L=6)
    assert toks.shape == (6,)
    assert toks[-1] == EOS


def test_tokenize_rejects_empty(vocab):
    with pytest.raises(ValidationError):
        vocab.tokenize("   ", L=6)


def test_empty_vocab_rejected():
    with pytest.raises(ValidationError):
        Vocab([])


def test_mask_token_present(vocab):
    assert vocab.token_to_id["<M>"] == MASK


def test_canonicalize_truncates_after_eos():
    row = torch.tensor([BOS, 7, 8, EOS, 9, 5])
    out = canonicalize_tokens(row)
    assert out.tolist() == [BOS, 7, 8, EOS, PAD, PAD]


def test_canonicalize_forces_eos():
    row = torch.tensor([BOS, 7, 8, 9, 5, 6])
    assert canonicalize_tokens(row)[-1] == EOS


@pytest.fixture
def small_model(vocab):
    torch.manual_seed(0)
    return CodecModel(CodecConfig(d=16, L=8, n_layers=1, n_heads=2), vocab)


def test_encode_deterministic(small_model, vocab):
    toks = vocab.tokenize("how can i", L=8)
    assert torch.equal(small_model.encode(toks), small_model.encode(toks))


def test_pad_tail_identical_across_sentences(small_model, vocab):
    # same pad length, different content: pad sub-blocks must match exactly
    a = small_model.encode(vocab.tokenize("how can i", L=8))
    b = small_model.encode(vocab.tokenize("cook rice gone", L=8))
    assert torch.equal(a[5:], b[5:])
    assert not torch.equal(a[:5], b[:5])


def test_decode_total_on_zero_latent(small_model):
    toks = small_model.decode(torch.zeros(8, 16))
    assert toks.shape == (8,)
    assert (toks == EOS).sum() == 1


def test_encode_rejects_bad_ids(small_model):
    bad = torch.full((8,), 999, dtype=torch.long)
    with pytest.raises(ValidationError):
        small_model.encode(bad)
    with pytest.raises(ValidationError):
        small_model.decode_logits(torch.zeros(4, 16))


def test_norm_roundtrip_and_identity():
    stats = NormStats(torch.randn(16), torch.rand(16) + 0.5)
    z = torch.randn(3, 8, 16)
    assert torch.allclose(denormalize(normalize(z, stats), stats), z, atol=1e-6)
    ident = NormStats(torch.zeros(16), torch.ones(16))
    assert torch.equal(normalize(z, ident), z)


def test_norm_std_floor_clamped():
    stats = NormStats(torch.zeros(4), torch.tensor([1.0, 0.0, 1e-9, 2.0]))
    assert torch.all(stats.std >= NormStats.STD_FLOOR)


def test_single_sentence_memorization():
    model, hist = train_codec(
        ["how can i cook rice"],
        CodecConfig(d=16, L=8, n_layers=1, n_heads=2, steps=300, eval_every=300),
        seed=0,
    )
    assert roundtrip_accuracy(model, ["how can i cook rice"]) == 1.0


def test_codec_training_seeded_determinism():
    sentences = [f"how can i cook rice {w}" for w in "a b c d e f g h".split()]
    cfg = CodecConfig(d=16, L=10, n_layers=1, n_heads=2, steps=60, eval_every=60)
    m1, _ = train_codec(sentences, cfg, seed=5)
    m2, _ = train_codec(sentences, cfg, seed=5)
    for (n1, p1), (n2, p2) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2), n1


def test_frozen_codec_rejects_grad():
    model, _ = train_codec(
        ["how can i"], CodecConfig(d=16, L=8, n_layers=1, n_heads=2, steps=20, eval_every=20)
    )
    assert model.frozen
    assert all(not p.requires_grad for p in model.parameters())


def test_codec_checkpoint_roundtrip(tmp_path, small_model, vocab):
    stats = NormStats(torch.randn(16), torch.rand(16) + 0.5)
    save_codec(tmp_path / "ck", small_model, stats)
    loaded, lstats = load_codec(tmp_path / "ck")
    toks = vocab.tokenize("how can i", L=8)
    assert torch.equal(loaded.encode(toks), small_model.encode(toks))
    assert torch.allclose(lstats.mean, stats.mean)
    assert loaded.vocab.id_to_token == vocab.id_to_token


def test_fit_norm_stats_moments():
    # after normalizing the fitting corpus, per-dimension moments are ~(0, 1)
    torch.manual_seed(1)
    vocab = Vocab(list("abcdefghij"))
    model = CodecModel(CodecConfig(d=16, L=8, n_layers=1, n_heads=2), vocab)
    sentences = ["a b c", "d e f g", "h i j", "a c e g", "b d f h", "j a b c d"]
    stats = fit_norm_stats(sentences, model)
    rows = []
    with torch.no_grad():
        for s in sentences:
            toks = vocab.tokenize(s, 8)
            z = normalize(model.encode(toks), stats)
            rows.append(z[toks != PAD])
    flat = torch.cat(rows)
    assert float(flat.mean(dim=0).abs().max()) < 0.05
    assert torch.all((flat.std(dim=0) > 0.9) & (flat.std(dim=0) < 1.1))
