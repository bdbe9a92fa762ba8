"""Glue between corpora and the trainers: precompute latent pairs once."""

from __future__ import annotations

import torch

from .codec import CodecModel, NormStats, PAD, normalize
from .data import ParaphraseRecord
from .denoiser import (
    DenoiserConfig,
    DenoiserModel,
    DiffusionTrainConfig,
    train_diffusion,
)
from .schedule import NoiseSchedule


def encode_pairs(
    records: list[ParaphraseRecord], codec: CodecModel, stats: NormStats
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(target latent z0, source encoding c, source content mask) for all pairs."""
    L = codec.config.L
    src = torch.stack([codec.vocab.tokenize(r.source, L) for r in records])
    tgt = torch.stack([codec.vocab.tokenize(r.target, L) for r in records])
    with torch.no_grad():
        z0 = normalize(codec.encode(tgt), stats)
        c = normalize(codec.encode(src), stats)
    return z0, c, src != PAD


def train_diffusion_from_corpus(
    records: list[ParaphraseRecord],
    codec: CodecModel,
    stats: NormStats,
    model_config: DenoiserConfig,
    train_config: DiffusionTrainConfig,
    schedule: NoiseSchedule,
    seed: int = 0,
    loss_log_path=None,
) -> tuple[DenoiserModel, list[tuple[int, float, float]]]:
    z0, c, c_mask = encode_pairs(records, codec, stats)
    return train_diffusion(
        z0, c, c_mask, model_config, train_config, schedule, seed, loss_log_path
    )
