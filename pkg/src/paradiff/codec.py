"""Frozen sequence autoencoder bridging token sequences and latent grids.

The encoder maps a token sequence to an L x d latent grid; the decoder is a
non-autoregressive position-wise classifier back to tokens, truncated at the
first EOS. PAD positions bypass the encoder and receive a dedicated learned
pad latent, so the pad tail of a latent never depends on sentence content.
Once trained the codec is frozen; diffusion and controller training only read
from it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_manifest, load_params, save_checkpoint
from .errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK, MASK = 0, 1, 2, 3, 4
MASK_TOKEN = "<M>"
_SPECIALS = ["<pad>", "<s>", "</s>", "<unk>", MASK_TOKEN]


class Vocab:
    """Closed whitespace-token vocabulary with PAD/BOS/EOS/UNK/<M> specials."""

    def __init__(self, words: list[str]):
        if not words:
            raise ValidationError("empty vocabulary")
        self.id_to_token = _SPECIALS + [w for w in words if w not in _SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @staticmethod
    def from_sentences(sentences: list[str]) -> "Vocab":
        words = sorted({w for s in sentences for w in s.split()})
        return Vocab(words)

    def tokenize(self, text: str, L: int) -> torch.Tensor:
        """Whitespace-split, map to ids (unknown -> UNK), add BOS/EOS, pad to L."""
        if not text.strip():
            raise ValidationError("cannot tokenize empty text")
        ids = [self.token_to_id.get(w, UNK) for w in text.split()][: L - 2]
        ids = [BOS] + ids + [EOS]
        ids += [PAD] * (L - len(ids))
        return torch.tensor(ids, dtype=torch.long)

    def detokenize(self, tokens: torch.Tensor) -> str:
        """Words between BOS and the first EOS, joined by spaces."""
        words = []
        for tid in tokens.tolist():
            if tid == EOS:
                break
            if tid in (PAD, BOS):
                continue
            words.append(self.id_to_token[tid])
        return " ".join(words)


def canonicalize_tokens(tokens: torch.Tensor) -> torch.Tensor:
    """Enforce the token-sequence invariant: one EOS, PAD-only tail after it."""
    out = tokens.clone()
    flat = out.view(-1, out.shape[-1])
    for row in flat:
        eos = (row == EOS).nonzero()
        if eos.numel() == 0:
            row[-1] = EOS
        else:
            row[int(eos[0]) + 1 :] = PAD
    return out


@dataclass
class CodecConfig:
    d: int = 64
    L: int = 24
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    steps: int = 4000
    batch_size: int = 128
    lr: float = 1e-3
    mask_augment_p: float = 0.2
    eval_every: int = 500

    def to_dict(self) -> dict:
        return asdict(self)


class _Attention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)

    def forward(self, x, key_padding_mask=None):
        B, L, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_padding_mask is not None:
            logits = logits.masked_fill(
                key_padding_mask[:, None, None, :], float("-inf")
            )
        out = (logits.softmax(dim=-1) @ v).transpose(1, 2).reshape(B, L, d)
        return self.proj(out)


class _Block(nn.Module):
    """Pre-layer-norm transformer block; explicit ops so outputs are identical
    across train/eval and grad/no-grad contexts (no fused fast paths)."""

    def __init__(self, d: int, n_heads: int, ffn_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = _Attention(d, n_heads)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, ffn_mult * d), nn.GELU(), nn.Linear(ffn_mult * d, d)
        )

    def forward(self, x, key_padding_mask=None):
        x = x + self.attn(self.norm1(x), key_padding_mask)
        return x + self.ffn(self.norm2(x))


class CodecModel(nn.Module):
    """Encoder/decoder pair over a fixed L x d latent grid."""

    def __init__(self, config: CodecConfig, vocab: Vocab):
        super().__init__()
        self.config = config
        self.vocab = vocab
        d = config.d
        self.embed = nn.Embedding(len(vocab), d)
        self.pos = nn.Parameter(torch.zeros(config.L, d))
        nn.init.normal_(self.pos, std=0.02)
        layer = lambda: _Block(d, config.n_heads, config.ffn_mult)
        self.encoder = nn.ModuleList(layer() for _ in range(config.n_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.pad_latent = nn.Parameter(torch.zeros(d))
        nn.init.normal_(self.pad_latent, std=0.02)
        self.dec_in = nn.Linear(d, d)
        self.decoder = nn.ModuleList(layer() for _ in range(config.n_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, len(vocab))
        self.frozen = False

    def freeze(self) -> "CodecModel":
        self.frozen = True
        self.requires_grad_(False)
        self.eval()
        return self

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, L) token ids -> (B, L, d) latents; deterministic."""
        if tokens.dim() == 1:
            return self.encode(tokens.unsqueeze(0)).squeeze(0)
        if tokens.shape[1] != self.config.L:
            raise ValidationError(
                f"expected length {self.config.L}, got {tokens.shape[1]}"
            )
        if int(tokens.max()) >= len(self.vocab) or int(tokens.min()) < 0:
            raise ValidationError("token id out of vocabulary range")
        pad_mask = tokens == PAD
        h = self.embed(tokens) + self.pos
        for blk in self.encoder:
            h = blk(h, key_padding_mask=pad_mask)
        h = self.enc_norm(h)
        # pad positions take a shared learned latent, independent of content
        h = torch.where(pad_mask.unsqueeze(-1), self.pad_latent.expand_as(h), h)
        return h

    def decode_logits(self, latents: torch.Tensor) -> torch.Tensor:
        if latents.dim() == 2:
            return self.decode_logits(latents.unsqueeze(0)).squeeze(0)
        if latents.shape[1:] != (self.config.L, self.config.d):
            raise ValidationError(
                f"expected latents (*, {self.config.L}, {self.config.d}), "
                f"got {tuple(latents.shape)}"
            )
        h = self.dec_in(latents) + self.pos
        for blk in self.decoder:
            h = blk(h)
        return self.out_proj(self.dec_norm(h))

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """Latents -> canonical token ids (argmax per position, EOS-truncated)."""
        if not torch.isfinite(latents).all():
            raise NumericalError("non-finite latents passed to decode")
        return canonicalize_tokens(self.decode_logits(latents).argmax(dim=-1))


@dataclass
class NormStats:
    """Per-dimension latent mean/std fitted over content (non-PAD) positions."""

    mean: torch.Tensor
    std: torch.Tensor

    STD_FLOOR = 1e-6

    def __post_init__(self):
        if torch.any(self.std < self.STD_FLOOR):
            logger.warning("norm std below %.0e floor; clamping", self.STD_FLOOR)
            self.std = torch.clamp(self.std, min=self.STD_FLOOR)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(obj: dict) -> "NormStats":
        return NormStats(torch.tensor(obj["mean"]), torch.tensor(obj["std"]))


def normalize(latents: torch.Tensor, stats: NormStats) -> torch.Tensor:
    return (latents - stats.mean) / stats.std


def denormalize(latents: torch.Tensor, stats: NormStats) -> torch.Tensor:
    return latents * stats.std + stats.mean


def fit_norm_stats(sentences: list[str], model: CodecModel) -> NormStats:
    """Moments of encoder outputs over non-PAD positions of the fitting corpus."""
    rows = []
    with torch.no_grad():
        for i in range(0, len(sentences), 256):
            toks = torch.stack(
                [model.vocab.tokenize(s, model.config.L) for s in sentences[i : i + 256]]
            )
            z = model.encode(toks)
            rows.append(z[toks != PAD])
    flat = torch.cat(rows)
    return NormStats(flat.mean(dim=0), flat.std(dim=0))


def _apply_mask_augment(
    tokens: torch.Tensor, p: float, gen: torch.Generator
) -> torch.Tensor:
    """Replace random content words with <M> so the encoder learns masked input."""
    out = tokens.clone()
    content = (out != PAD) & (out != BOS) & (out != EOS)
    coin = torch.rand(out.shape, generator=gen) < p
    out[content & coin] = MASK
    return out


def train_codec(
    sentences: list[str],
    config: CodecConfig,
    seed: int = 0,
    vocab: Vocab | None = None,
    holdout_fraction: float = 0.1,
) -> tuple[CodecModel, dict]:
    """Train the autoencoder to exact reconstruction; returns it frozen.

    History carries the loss curve and held-out round-trip accuracy samples.
    """
    if len(sentences) < 2:
        sentences = sentences * 2  # memorization case: train == holdout
    if vocab is None:
        vocab = Vocab.from_sentences(sentences)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)

    model = CodecModel(config, vocab)
    n_hold = max(1, int(len(sentences) * holdout_fraction))
    perm = torch.randperm(len(sentences), generator=gen).tolist()
    holdout = [sentences[i] for i in perm[:n_hold]]
    train = [sentences[i] for i in perm[n_hold:]] or holdout

    tokens = torch.stack([vocab.tokenize(s, config.L) for s in train])
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    history = {"loss": [], "holdout_accuracy": []}

    for step in range(config.steps):
        idx = torch.randint(len(train), (min(config.batch_size, len(train)),), generator=gen)
        batch = tokens[idx]
        inputs = batch
        if config.mask_augment_p > 0:
            half = len(batch) // 2
            if half:
                inputs = batch.clone()
                inputs[:half] = _apply_mask_augment(batch[:half], config.mask_augment_p, gen)
        logits = model.decode_logits(model.encode(inputs))
        loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), inputs.reshape(-1))
        if not torch.isfinite(loss):
            raise NumericalError(f"codec training diverged at step {step}: loss={loss}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["loss"].append(float(loss.detach()))
        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            acc = roundtrip_accuracy(model, holdout)
            history["holdout_accuracy"].append((step + 1, acc))
            logger.info("codec step %d loss %.4f holdout acc %.4f", step + 1, loss, acc)

    return model.freeze(), history


def roundtrip_accuracy(model: CodecModel, sentences: list[str]) -> float:
    """Fraction of sentences with exact decode(encode(tokenize(s))) recovery."""
    model_was_training = model.training
    model.eval()
    hits = 0
    with torch.no_grad():
        for i in range(0, len(sentences), 256):
            chunk = sentences[i : i + 256]
            toks = torch.stack([model.vocab.tokenize(s, model.config.L) for s in chunk])
            rec = model.decode(model.encode(toks))
            hits += int((rec == toks).all(dim=-1).sum())
    if model_was_training:
        model.train()
    return hits / len(sentences)


def save_codec(path, model: CodecModel, stats: NormStats | None = None) -> None:
    manifest = {
        "kind": "codec",
        "config": model.config.to_dict(),
        "vocab": model.vocab.id_to_token,
    }
    if stats is not None:
        manifest["norm_stats"] = stats.to_dict()
    save_checkpoint(path, dict(model.state_dict()), manifest)


def load_codec(path) -> tuple[CodecModel, NormStats | None]:
    manifest = load_manifest(path)
    if manifest.get("kind") != "codec":
        raise ValidationError(f"{path} is not a codec checkpoint")
    vocab = Vocab(manifest["vocab"][len(_SPECIALS):])
    model = CodecModel(CodecConfig(**manifest["config"]), vocab)
    model.load_state_dict(load_params(path, manifest))
    model.freeze()
    stats = None
    if "norm_stats" in manifest:
        stats = NormStats.from_dict(manifest["norm_stats"])
    return model, stats
