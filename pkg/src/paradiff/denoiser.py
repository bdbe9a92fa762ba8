"""Reconstruction network predicting the clean latent from a noised one.

Each block applies pre-layer-norm residual sublayers in order: self-attention
over the noised latent (with bucketed relative position bias), cross-attention
over the source encoding, and a GeGLU feedforward whose layer norm scale and
shift are regressed from the time embedding plus the mean-pooled sublayer
input (AdaLN). Training regresses the clean latent with MSE, with
sentence-level condition dropout to a trainable null embedding.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_manifest, load_params, save_checkpoint
from .errors import NumericalError, ValidationError
from .schedule import NoiseSchedule, forward_noise_batch

logger = logging.getLogger(__name__)


@dataclass
class DenoiserConfig:
    n_layers: int = 4
    n_heads: int = 4
    d: int = 64
    L: int = 24
    cond_dropout_p: float = 0.1
    rel_pos_buckets: int = 16
    rel_pos_max_distance: int = 32
    ffn_mult: int = 4
    use_rel_pos_bias: bool = True

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValidationError("d must be divisible by n_heads")
        if not (0.0 <= self.cond_dropout_p < 1.0):
            raise ValidationError("cond_dropout_p must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_embedding(t: torch.Tensor, d: int, max_period: float = 10000.0) -> torch.Tensor:
    """Deterministic sin/cos embedding of step indices; shape (..., d)."""
    half = d // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    )
    args = t.double().unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if d % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _relative_position_bucket(
    relative_position: torch.Tensor, num_buckets: int, max_distance: int
) -> torch.Tensor:
    """Bidirectional log-spaced distance buckets (T5 scheme)."""
    num_buckets //= 2
    ret = (relative_position > 0).long() * num_buckets
    n = relative_position.abs()
    max_exact = num_buckets // 2
    is_small = n < max_exact
    val_if_large = max_exact + (
        torch.log(n.float() / max_exact)
        / math.log(max_distance / max_exact)
        * (num_buckets - max_exact)
    ).long()
    val_if_large = torch.min(val_if_large, torch.full_like(val_if_large, num_buckets - 1))
    return ret + torch.where(is_small, n, val_if_large)


class SelfAttention(nn.Module):
    """Multi-head self-attention with optional per-head relative position bias."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d // config.n_heads
        self.qkv = nn.Linear(config.d, 3 * config.d)
        self.proj = nn.Linear(config.d, config.d)
        self.use_bias = config.use_rel_pos_bias
        if self.use_bias:
            self.rel_bias = nn.Embedding(config.rel_pos_buckets, config.n_heads)
            pos = torch.arange(config.L)
            rel = pos[None, :] - pos[:, None]
            self.register_buffer(
                "rel_index",
                _relative_position_bucket(
                    rel, config.rel_pos_buckets, config.rel_pos_max_distance
                ),
                persistent=False,
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if self.use_bias:
            bias = self.rel_bias(self.rel_index[:L, :L]).permute(2, 0, 1)
            logits = logits + bias.to(logits.dtype)
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, L, d)
        return self.proj(out)


class CrossAttention(nn.Module):
    """Multi-head attention from the latent onto the source encoding.

    Carries its own relative position bias between latent and source grid
    positions (both live on the same L-position grid), so the source rows
    are read positionally rather than as a bag.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d // config.n_heads
        self.q = nn.Linear(config.d, config.d)
        self.kv = nn.Linear(config.d, 2 * config.d)
        self.proj = nn.Linear(config.d, config.d)
        self.use_bias = config.use_rel_pos_bias
        if self.use_bias:
            self.rel_bias = nn.Embedding(config.rel_pos_buckets, config.n_heads)
            pos = torch.arange(config.L)
            rel = pos[None, :] - pos[:, None]
            self.register_buffer(
                "rel_index",
                _relative_position_bucket(
                    rel, config.rel_pos_buckets, config.rel_pos_max_distance
                ),
                persistent=False,
            )

    def forward(
        self, x: torch.Tensor, c: torch.Tensor, c_mask: torch.Tensor | None
    ) -> torch.Tensor:
        B, L, d = x.shape
        q = self.q(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        k, v = self.kv(c).chunk(2, dim=-1)
        k = k.view(B, -1, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, -1, self.n_heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if self.use_bias:
            S = c.shape[1]
            bias = self.rel_bias(self.rel_index[:L, :S]).permute(2, 0, 1)
            logits = logits + bias.to(logits.dtype)
        if c_mask is not None:
            logits = logits.masked_fill(~c_mask[:, None, None, :], float("-inf"))
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, L, d)
        return self.proj(out)


class GatedFeedForward(nn.Module):
    """GeGLU feedforward: (gelu(x W_g) * x W_v) W_o."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        hidden = config.ffn_mult * config.d
        self.gate = nn.Linear(config.d, hidden)
        self.value = nn.Linear(config.d, hidden)
        self.out = nn.Linear(hidden, config.d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(F.gelu(self.gate(x)) * self.value(x))


class DenoiserBlock(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        d = config.d
        self.norm_self = nn.LayerNorm(d)
        self.self_attn = SelfAttention(config)
        self.norm_cross = nn.LayerNorm(d)
        self.cross_attn = CrossAttention(config)
        # AdaLN: no learned affine on the norm itself; scale/shift are regressed
        self.norm_ffn = nn.LayerNorm(d, elementwise_affine=False)
        self.adaln = nn.Linear(d, 2 * d)
        nn.init.zeros_(self.adaln.weight)
        nn.init.zeros_(self.adaln.bias)
        self.ffn = GatedFeedForward(config)

    def forward(
        self,
        x: torch.Tensor,
        c: torch.Tensor,
        c_mask: torch.Tensor | None,
        t_emb: torch.Tensor,
    ) -> torch.Tensor:
        x = x + self.self_attn(self.norm_self(x))
        x = x + self.cross_attn(self.norm_cross(x), c, c_mask)
        cond = t_emb + x.mean(dim=1)
        scale, shift = self.adaln(F.silu(cond)).chunk(2, dim=-1)
        h = self.norm_ffn(x) * (1.0 + scale[:, None, :]) + shift[:, None, :]
        return x + self.ffn(h)


class DenoiserModel(nn.Module):
    """Predicts the clean latent grid from (noised latent, source encoding, step)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        d = config.d
        self.in_proj = nn.Linear(d, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.null_cond = nn.Parameter(torch.zeros(d))
        nn.init.normal_(self.null_cond, std=0.02)
        self.blocks = nn.ModuleList(DenoiserBlock(config) for _ in range(config.n_layers))
        self.out_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, d)

    def time_embed(self, t: torch.Tensor) -> torch.Tensor:
        """Sinusoidal step embedding projected through the trainable MLP."""
        base = sinusoidal_embedding(t, self.config.d).to(self.in_proj.weight.dtype)
        return self.time_mlp(base)

    def forward(
        self,
        z_t: torch.Tensor,
        c: torch.Tensor | None,
        t: torch.Tensor,
        c_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Clean-latent prediction; ``c=None`` selects the null (unconditional) path."""
        squeeze = z_t.dim() == 2
        if squeeze:
            z_t = z_t.unsqueeze(0)
            if c is not None and c.dim() == 2:
                c = c.unsqueeze(0)
            if c_mask is not None and c_mask.dim() == 1:
                c_mask = c_mask.unsqueeze(0)
            if t.dim() == 0:
                t = t.unsqueeze(0)
        B, L, d = z_t.shape
        if (L, d) != (self.config.L, self.config.d):
            raise ValidationError(
                f"expected (*, {self.config.L}, {self.config.d}), got {tuple(z_t.shape)}"
            )
        if c is None:
            c = self.null_cond.to(z_t.dtype).expand(B, L, d)
            c_mask = None
        elif c.shape != z_t.shape:
            raise ValidationError("source encoding shape must match the latent grid")
        t_emb = self.time_embed(t)
        x = self.in_proj(z_t)
        for blk in self.blocks:
            x = blk(x, c, c_mask, t_emb)
        out = self.out_proj(self.out_norm(x))
        if not torch.isfinite(out).all():
            raise NumericalError("non-finite activations in denoiser forward")
        return out.squeeze(0) if squeeze else out


def apply_condition_dropout(
    c: torch.Tensor,
    c_mask: torch.Tensor | None,
    null_cond: torch.Tensor,
    p: float,
    gen: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor]:
    """Replace whole source encodings with the broadcast null embedding, prob ``p``."""
    B, L, d = c.shape
    drop = torch.rand(B, generator=gen) < p
    null = null_cond.to(c.dtype).expand(L, d)
    c = torch.where(drop[:, None, None], null, c)
    if c_mask is not None:
        c_mask = c_mask | drop[:, None]  # null positions are all attendable
    return c, c_mask, drop


def training_step(
    batch: dict,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    gen: torch.Generator,
    grad_clip: float = 1.0,
) -> float:
    """One MSE regression step of the clean latent; returns the loss value.

    ``batch`` needs ``z0`` (B, L, d) and ``c`` (B, L, d); optional ``c_mask``.
    """
    z0, c = batch["z0"], batch["c"]
    c_mask = batch.get("c_mask")
    B = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (B,), generator=gen)
    eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
    z_t = forward_noise_batch(z0, t, eps, schedule)
    c, c_mask, _ = apply_condition_dropout(
        c, c_mask, model.null_cond, model.config.cond_dropout_p, gen
    )
    pred = model(z_t, c, t, c_mask)
    loss = F.mse_loss(pred, z0)
    if not torch.isfinite(loss):
        raise NumericalError(f"diffusion loss is non-finite: {loss}")
    optimizer.zero_grad()
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


@dataclass
class DiffusionTrainConfig:
    steps: int = 30000
    batch_size: int = 64
    lr: float = 1e-4
    warmup_steps: int = 1000
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    log_every: int = 100

    def to_dict(self) -> dict:
        return asdict(self)


def train_diffusion(
    z0: torch.Tensor,
    c: torch.Tensor,
    c_mask: torch.Tensor,
    model_config: DenoiserConfig,
    train_config: DiffusionTrainConfig,
    schedule: NoiseSchedule,
    seed: int = 0,
    loss_log_path: str | Path | None = None,
) -> tuple[DenoiserModel, list[tuple[int, float, float]]]:
    """Full training loop over precomputed (target latent, source encoding) pairs.

    Returns the trained model and a (step, loss, lr) log; the log is also
    written as CSV when ``loss_log_path`` is given.
    """
    if z0.shape != c.shape:
        raise ValidationError("z0 and c must be shape-identical")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = DenoiserModel(model_config)
    opt = torch.optim.AdamW(
        model.parameters(), lr=train_config.lr, weight_decay=train_config.weight_decay
    )
    n = z0.shape[0]
    log: list[tuple[int, float, float]] = []
    for step in range(train_config.steps):
        lr = train_config.lr * min(1.0, (step + 1) / max(1, train_config.warmup_steps))
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.randint(n, (min(train_config.batch_size, n),), generator=gen)
        batch = {"z0": z0[idx], "c": c[idx], "c_mask": c_mask[idx]}
        try:
            loss = training_step(batch, model, schedule, opt, gen, train_config.grad_clip)
        except NumericalError:
            logger.error("divergence at step %d; last logged: %s", step, log[-5:])
            raise
        if step % train_config.log_every == 0 or step == train_config.steps - 1:
            log.append((step, loss, lr))
    if loss_log_path is not None:
        with Path(loss_log_path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr"])
            writer.writerows(log)
    return model, log


def save_denoiser(path, model: DenoiserModel, schedule: NoiseSchedule, extra: dict | None = None):
    manifest = {
        "kind": "denoiser",
        "config": model.config.to_dict(),
        "schedule": schedule.spec(),
    }
    if extra:
        manifest.update(extra)
    save_checkpoint(path, dict(model.state_dict()), manifest)


def load_denoiser(path) -> tuple[DenoiserModel, NoiseSchedule, dict]:
    manifest = load_manifest(path)
    if manifest.get("kind") != "denoiser":
        raise ValidationError(f"{path} is not a denoiser checkpoint")
    model = DenoiserModel(DenoiserConfig(**manifest["config"]))
    model.load_state_dict(load_params(path, manifest))
    model.eval()
    schedule = NoiseSchedule.from_spec(manifest["schedule"])
    return model, schedule, manifest
