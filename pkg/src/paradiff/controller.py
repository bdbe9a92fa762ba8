"""Zero-initialized control adaptor steering generation from keyword segments.

A trainable copy of the frozen base denoiser reads the encoded keyword
segment through a position-wise linear map initialized to zero weight and
bias; its output enters the base prediction through a second zero-initialized
map. At initialization the fused prediction therefore equals the base
prediction exactly, and the control branch only departs from a no-op as
fine-tuning moves the projections.
"""

from __future__ import annotations

import copy as _copy
import logging
import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_manifest, load_params, params_hash, save_checkpoint
from .codec import BOS, EOS, MASK, PAD, CodecModel, NormStats, normalize
from .data import ParaphraseRecord
from .denoiser import DenoiserModel, apply_condition_dropout
from .errors import NumericalError, ValidationError
from .schedule import NoiseSchedule, forward_noise_batch

logger = logging.getLogger(__name__)

KEYWORD_RATIO = 0.15
SAMPLED_POOL_RATIO = 0.30


def extract_keyword_segment(
    tokens: torch.Tensor,
    vocab,
    ratio: float = KEYWORD_RATIO,
    mode: str = "deterministic",
    gen: torch.Generator | None = None,
) -> tuple[torch.Tensor, list[int]]:
    """Keep the longest content tokens in place, mask the rest with <M>.

    Content tokens are ranked by character length with earliest-position
    tie-break; k = max(1, ceil(ratio * content_length)) are kept.
    ``deterministic`` keeps the top k; ``sampled`` draws k uniformly from the
    top-30%-by-length pool for training-time variety. BOS/EOS/PAD stay put.
    """
    if mode not in ("deterministic", "sampled"):
        raise ValidationError(f"mode must be deterministic or sampled, got {mode!r}")
    ids = tokens.tolist()
    content = [i for i, tid in enumerate(ids) if tid not in (PAD, BOS, EOS)]
    if not content:
        raise ValidationError("no content tokens to extract keywords from")
    ranked = sorted(content, key=lambda i: (-len(vocab.id_to_token[ids[i]]), i))
    k = max(1, math.ceil(ratio * len(content)))
    k = min(k, len(content))
    if mode == "deterministic":
        keep = ranked[:k]
    else:
        pool = ranked[: max(k, math.ceil(SAMPLED_POOL_RATIO * len(content)))]
        if gen is None:
            raise ValidationError("sampled mode needs a generator")
        perm = torch.randperm(len(pool), generator=gen)[:k].tolist()
        keep = [pool[i] for i in perm]
    keep_set = set(keep)
    masked = tokens.clone()
    for i in content:
        if i not in keep_set:
            masked[i] = MASK
    return masked, sorted(keep)


class ControllerModel(nn.Module):
    """Frozen base denoiser + trainable copy + two zero-initialized projections."""

    def __init__(self, base: DenoiserModel):
        super().__init__()
        base.requires_grad_(False)
        base.eval()
        self.base = base
        self.copy = _copy.deepcopy(base)
        self.copy.requires_grad_(True)
        d = base.config.d
        self.in_zero = nn.Linear(d, d)
        self.out_zero = nn.Linear(d, d)
        for proj in (self.in_zero, self.out_zero):
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def trainable_parameters(self):
        yield from self.copy.parameters()
        yield from self.in_zero.parameters()
        yield from self.out_zero.parameters()

    def fused_denoise(
        self,
        z_t: torch.Tensor,
        c: torch.Tensor | None,
        c_kw: torch.Tensor,
        t: torch.Tensor,
        c_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """base(z_t, c, t) + out_zero(copy(z_t + in_zero(c_kw), c, t))."""
        if c_kw.shape != z_t.shape:
            raise ValidationError("keyword encoding shape must match the latent grid")
        with torch.no_grad():
            base_out = self.base(z_t, c, t, c_mask)
        branch = self.copy(z_t + self.in_zero(c_kw), c, t, c_mask)
        return base_out + self.out_zero(branch)


def keyword_encoding(
    text: str,
    codec: CodecModel,
    stats: NormStats,
    ratio: float = KEYWORD_RATIO,
    mode: str = "deterministic",
    gen: torch.Generator | None = None,
) -> torch.Tensor:
    """Tokenize, mask to a keyword segment, encode with the frozen codec, normalize."""
    tokens = codec.vocab.tokenize(text, codec.config.L)
    masked, _ = extract_keyword_segment(tokens, codec.vocab, ratio, mode, gen)
    with torch.no_grad():
        return normalize(codec.encode(masked), stats)


def make_fused_predict(controller: ControllerModel, c_kw: torch.Tensor):
    """Adapter for ``generate(..., fused_predict=...)``; broadcasts c_kw over the batch."""

    def predict(z, c_tuple, t):
        c, c_mask = c_tuple
        kw = c_kw.expand_as(z) if c_kw.dim() == 2 else c_kw
        return controller.fused_denoise(z, c, kw, t, c_mask)

    return predict


@dataclass
class ControllerTrainConfig:
    steps: int = 8000
    batch_size: int = 64
    lr: float = 1e-5
    grad_clip: float = 1.0
    keyword_mode: str = "sampled"
    keyword_ratio: float = KEYWORD_RATIO
    log_every: int = 100

    def to_dict(self) -> dict:
        return asdict(self)


def finetune_controller(
    records: list[ParaphraseRecord],
    base: DenoiserModel,
    codec: CodecModel,
    stats: NormStats,
    schedule: NoiseSchedule,
    config: ControllerTrainConfig | None = None,
    seed: int = 0,
) -> tuple[ControllerModel, list[tuple[int, float]]]:
    """Fine-tune the control branch; keyword segments come from the references.

    The base denoiser and the codec stay frozen; only the copy and the two
    zero projections receive gradients.
    """
    config = config or ControllerTrainConfig()
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    controller = ControllerModel(base)
    opt = torch.optim.AdamW(controller.trainable_parameters(), lr=config.lr)

    L = codec.config.L
    src_tokens = torch.stack([codec.vocab.tokenize(r.source, L) for r in records])
    tgt_tokens = torch.stack([codec.vocab.tokenize(r.target, L) for r in records])
    with torch.no_grad():
        z0 = normalize(codec.encode(tgt_tokens), stats)
        c = normalize(codec.encode(src_tokens), stats)
    c_mask = src_tokens != PAD

    log: list[tuple[int, float]] = []
    for step in range(config.steps):
        idx = torch.randint(len(records), (min(config.batch_size, len(records)),), generator=gen)
        kw_tokens = torch.stack(
            [
                extract_keyword_segment(
                    tgt_tokens[i], codec.vocab, config.keyword_ratio,
                    config.keyword_mode, gen,
                )[0]
                for i in idx.tolist()
            ]
        )
        with torch.no_grad():
            c_kw = normalize(codec.encode(kw_tokens), stats)
        bz0, bc, bmask = z0[idx], c[idx], c_mask[idx]
        t = torch.randint(1, schedule.T + 1, (len(idx),), generator=gen)
        eps = torch.randn(bz0.shape, generator=gen, dtype=bz0.dtype)
        z_t = forward_noise_batch(bz0, t, eps, schedule)
        bc, bmask, _ = apply_condition_dropout(
            bc, bmask, base.null_cond, base.config.cond_dropout_p, gen
        )
        pred = controller.fused_denoise(z_t, bc, c_kw, t, bmask)
        loss = F.mse_loss(pred, bz0)
        if not torch.isfinite(loss):
            raise NumericalError(f"controller fine-tuning diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(controller.trainable_parameters(), config.grad_clip)
        opt.step()
        if step % config.log_every == 0 or step == config.steps - 1:
            log.append((step, float(loss.detach())))
    return controller, log


def adapt_domain(
    new_domain_records: list[ParaphraseRecord],
    base: DenoiserModel,
    codec: CodecModel,
    stats: NormStats,
    schedule: NoiseSchedule,
    config: ControllerTrainConfig | None = None,
    seed: int = 0,
) -> tuple[ControllerModel, list[tuple[int, float]]]:
    """Domain adaptation is controller fine-tuning on the new-domain pairs;
    detaching the controller recovers original-domain behavior bit-exactly."""
    return finetune_controller(
        new_domain_records, base, codec, stats, schedule, config, seed
    )


def save_controller(path, controller: ControllerModel, extra: dict | None = None) -> None:
    """Store only the copy and the projections, plus the base parameter hash."""
    state = {}
    for name, tensor in controller.state_dict().items():
        if not name.startswith("base."):
            state[name] = tensor
    manifest = {
        "kind": "controller",
        "config": controller.base.config.to_dict(),
        "base_params_sha256": params_hash(dict(controller.base.state_dict())),
    }
    if extra:
        manifest.update(extra)
    save_checkpoint(path, state, manifest)


def load_controller(path, base: DenoiserModel) -> ControllerModel:
    manifest = load_manifest(path)
    if manifest.get("kind") != "controller":
        raise ValidationError(f"{path} is not a controller checkpoint")
    expected = manifest["base_params_sha256"]
    actual = params_hash(dict(base.state_dict()))
    if expected != actual:
        raise ValidationError(
            "controller checkpoint was trained against a different base model"
        )
    controller = ControllerModel(base)
    state = load_params(path, manifest)
    missing = controller.load_state_dict(state, strict=False)
    unexpected = [k for k in missing.missing_keys if not k.startswith("base.")]
    if unexpected or missing.unexpected_keys:
        raise ValidationError(f"controller checkpoint mismatch: {unexpected}")
    return controller
