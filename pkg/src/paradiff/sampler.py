"""Iterative generation: morph Gaussian noise into a source-conditioned latent.

Three interchangeable samplers consume the same clean-latent prediction
function: stochastic ancestral sampling over all T steps, skip-step DDIM
(deterministic at eta = 0), and the second-order multistep DPM-Solver++ in
the data-prediction parameterization. All of them return the final clean
latent estimate; none mutates model or codec state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from .codec import CodecModel, NormStats, PAD, denormalize, normalize
from .denoiser import DenoiserModel
from .errors import NumericalError, ValidationError
from .schedule import NoiseSchedule

PredictFn = Callable[[torch.Tensor, int], torch.Tensor]
RecordFn = Callable[[int, torch.Tensor, torch.Tensor], None]


@dataclass
class SamplerConfig:
    kind: str = "dpm_solver_pp"
    steps: int = 25
    eta: float = 0.0
    guidance_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ancestral", "ddim", "dpm_solver_pp"):
            raise ValidationError(f"unknown sampler kind {self.kind!r}")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if not (0.0 <= self.eta <= 1.0):
            raise ValidationError("eta must lie in [0, 1]")
        if self.guidance_scale < 0:
            raise ValidationError("guidance_scale must be >= 0")


@dataclass
class TrajectoryStep:
    t: int
    z0_hat: torch.Tensor
    decoded: str | None = None
    bleu: float | None = None
    length: int | None = None


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)


def make_predict_fn(
    model: DenoiserModel,
    c: torch.Tensor,
    c_mask: torch.Tensor | None,
    guidance_scale: float = 1.0,
) -> PredictFn:
    """Classifier-free-guided prediction: uncond + scale * (cond - uncond).

    At scale 1 this is exactly the conditional prediction (single model call);
    at scale 0 the source encoding is ignored entirely.
    """

    def predict(z: torch.Tensor, t: int) -> torch.Tensor:
        tt = torch.full((z.shape[0],), t, dtype=torch.long)
        with torch.no_grad():
            if guidance_scale == 1.0:
                return model(z, c, tt, c_mask)
            uncond = model(z, None, tt)
            if guidance_scale == 0.0:
                return uncond
            cond = model(z, c, tt, c_mask)
            return uncond + guidance_scale * (cond - uncond)

    return predict


def _check_state(z: torch.Tensor, t: int) -> None:
    if not torch.isfinite(z).all():
        raise NumericalError(f"non-finite sampler state at step t={t}")


def _per_item_noise(shape: torch.Size, gens: Sequence[torch.Generator], dtype) -> torch.Tensor:
    """One substream per batch item, so sample i never depends on batch size."""
    return torch.stack(
        [torch.randn(shape[1:], generator=g, dtype=dtype) for g in gens]
    )


def sample_ancestral(
    predict_fn: PredictFn,
    schedule: NoiseSchedule,
    z_T: torch.Tensor,
    gens: Sequence[torch.Generator],
    record: RecordFn | None = None,
) -> torch.Tensor:
    """Stochastic reverse diffusion over all T steps, drawing from the Gaussian
    posterior q(z_{t-1} | z_t, z0_hat) at each step; returns z0_hat at t = 0."""
    z = z_T
    abar = schedule.alpha_bars.to(z.dtype)
    for t in range(schedule.T, 0, -1):
        z0_hat = predict_fn(z, t)
        if record is not None:
            record(t, z, z0_hat)
        if t == 1:
            z = z0_hat
            break
        beta = schedule.betas[t - 1].to(z.dtype)
        alpha = 1.0 - beta
        coef_z0 = torch.sqrt(abar[t - 1]) * beta / (1.0 - abar[t])
        coef_zt = torch.sqrt(alpha) * (1.0 - abar[t - 1]) / (1.0 - abar[t])
        var = (1.0 - abar[t - 1]) / (1.0 - abar[t]) * beta
        noise = _per_item_noise(z.shape, gens, z.dtype)
        z = coef_z0 * z0_hat + coef_zt * z + torch.sqrt(var) * noise
        _check_state(z, t - 1)
    return z


def _ddim_times(T: int, steps: int) -> list[int]:
    """Skip-step grid uniform in t from T down to 1."""
    ts = torch.linspace(T, 1, min(steps, T)).round().long().tolist()
    out = []
    for t in ts:
        if not out or t < out[-1]:
            out.append(int(t))
    return out


def sample_ddim(
    predict_fn: PredictFn,
    schedule: NoiseSchedule,
    z_T: torch.Tensor,
    steps: int,
    eta: float = 0.0,
    gens: Sequence[torch.Generator] | None = None,
    record: RecordFn | None = None,
) -> torch.Tensor:
    """Skip-step update; deterministic when eta = 0, partially stochastic otherwise."""
    if steps > schedule.T:
        raise ValidationError("steps must be <= T")
    if eta > 0 and gens is None:
        raise ValidationError("eta > 0 needs per-sample generators")
    times = _ddim_times(schedule.T, steps) + [0]
    abar = schedule.alpha_bars.to(z_T.dtype)
    z = z_T
    for t_cur, t_next in zip(times[:-1], times[1:]):
        z0_hat = predict_fn(z, t_cur)
        if record is not None:
            record(t_cur, z, z0_hat)
        a_cur, a_next = abar[t_cur], abar[t_next]
        eps_hat = (z - torch.sqrt(a_cur) * z0_hat) / torch.sqrt(1.0 - a_cur)
        if eta > 0 and t_next > 0:
            sigma = (
                eta
                * torch.sqrt((1.0 - a_next) / (1.0 - a_cur))
                * torch.sqrt(1.0 - a_cur / a_next)
            )
        else:
            sigma = torch.zeros((), dtype=z.dtype)
        z = (
            torch.sqrt(a_next) * z0_hat
            + torch.sqrt(torch.clamp(1.0 - a_next - sigma**2, min=0.0)) * eps_hat
        )
        if eta > 0 and t_next > 0:
            z = z + sigma * _per_item_noise(z.shape, gens, z.dtype)
        _check_state(z, t_next)
    return z


def _logsnr_times(schedule: NoiseSchedule, steps: int) -> list[int]:
    """Model-eval times from T down to 1, uniform in log-SNR."""
    abar = schedule.alpha_bars.double()
    lam = 0.5 * torch.log(abar[1:] / (1.0 - abar[1:]))  # lambda at t = 1..T
    targets = torch.linspace(float(lam[schedule.T - 1]), float(lam[0]), steps)
    out = []
    for tgt in targets:
        t = int(torch.argmin((lam - tgt).abs())) + 1
        if not out or t < out[-1]:
            out.append(t)
    return out


def sample_dpm_solver_pp(
    predict_fn: PredictFn,
    schedule: NoiseSchedule,
    z_T: torch.Tensor,
    steps: int = 25,
    record: RecordFn | None = None,
) -> torch.Tensor:
    """Second-order multistep data-prediction solver over log-SNR time.

    Deterministic; exact for a constant clean-latent predictor. The final
    step jumps to t = 0, where the update collapses to the data prediction.
    """
    if steps < 2:
        raise ValidationError("dpm_solver_pp needs steps >= 2")
    times = _logsnr_times(schedule, steps) + [0]
    abar = schedule.alpha_bars.double()
    alphas = torch.sqrt(abar)
    sigmas = torch.sqrt(1.0 - abar)

    def lam(t: int) -> float:
        return float(0.5 * torch.log(abar[t] / (1.0 - abar[t]))) if t > 0 else math.inf

    z = z_T
    m_prev = predict_fn(z, times[0])
    if record is not None:
        record(times[0], z, m_prev)
    m_prev_prev = None
    h_prev = None
    for i in range(1, len(times)):
        t_prev, t_cur = times[i - 1], times[i]
        h = lam(t_cur) - lam(t_prev)
        if m_prev_prev is None or not math.isfinite(h):
            D = m_prev
        else:
            r = h_prev / h
            D = m_prev + (m_prev - m_prev_prev) / (2.0 * r)
        if t_cur == 0:
            z = D
            _check_state(z, 0)
            break
        ratio = float(sigmas[t_cur] / sigmas[t_prev])
        coef = float(alphas[t_cur] * (math.exp(-h) - 1.0))
        z = ratio * z - coef * D
        _check_state(z, t_cur)
        m_prev_prev, h_prev = m_prev, h
        m_prev = predict_fn(z, t_cur)
        if record is not None:
            record(t_cur, z, m_prev)
    return z


def run_sampler(
    predict_fn: PredictFn,
    schedule: NoiseSchedule,
    z_T: torch.Tensor,
    config: SamplerConfig,
    gens: Sequence[torch.Generator],
    record: RecordFn | None = None,
) -> torch.Tensor:
    if config.kind == "ancestral":
        return sample_ancestral(predict_fn, schedule, z_T, gens, record)
    if config.kind == "ddim":
        return sample_ddim(
            predict_fn, schedule, z_T, config.steps, config.eta, gens, record
        )
    return sample_dpm_solver_pp(predict_fn, schedule, z_T, config.steps, record)


def _sample_generators(seed: int, n: int) -> list[torch.Generator]:
    # substream per (seed, sample index)
    return [torch.Generator().manual_seed(seed * 1_000_003 + k) for k in range(n)]


def source_encoding(
    text: str, codec: CodecModel, stats: NormStats
) -> tuple[torch.Tensor, torch.Tensor]:
    """Encode + normalize a source sentence; returns (c, content mask)."""
    tokens = codec.vocab.tokenize(text, codec.config.L)
    with torch.no_grad():
        c = normalize(codec.encode(tokens), stats)
    return c, tokens != PAD


def generate(
    source_text: str,
    codec: CodecModel,
    stats: NormStats,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    n_samples: int = 5,
    fused_predict: Callable[[torch.Tensor, torch.Tensor | None, torch.Tensor], torch.Tensor] | None = None,
) -> list[str]:
    """Sample ``n_samples`` paraphrases of a source sentence, one RNG substream each.

    ``fused_predict(z, c_tuple, t)`` overrides the base model call (used for
    controller-guided generation).
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    c, c_mask = source_encoding(source_text, codec, stats)
    B = n_samples
    cb = c.expand(B, -1, -1)
    mb = c_mask.expand(B, -1)
    if fused_predict is None:
        predict = make_predict_fn(model, cb, mb, config.guidance_scale)
    else:
        def predict(z, t):
            tt = torch.full((z.shape[0],), t, dtype=torch.long)
            with torch.no_grad():
                return fused_predict(z, (cb, mb), tt)
    gens = _sample_generators(config.seed, B)
    z_T = _per_item_noise((B, codec.config.L, codec.config.d), gens, torch.float32)
    z0 = run_sampler(predict, schedule, z_T, config, gens)
    with torch.no_grad():
        tokens = codec.decode(denormalize(z0, stats))
    return [codec.vocab.detokenize(row) for row in tokens]


def trace(
    source_text: str,
    codec: CodecModel,
    stats: NormStats,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    reference: str | None = None,
) -> Trajectory:
    """Force-decode and score the trajectory states at every model evaluation.

    Each recorded step decodes the (still noisy) sampler state at time t, so
    the trajectory shows the raw iterate sharpening into a sentence; the
    model's clean-latent prediction at that step is kept in ``z0_hat``. A
    final t = 0 entry holds the finished sample.
    """
    from .metrics import bleu  # local import to avoid a cycle

    c, c_mask = source_encoding(source_text, codec, stats)
    predict = make_predict_fn(
        model, c.unsqueeze(0), c_mask.unsqueeze(0), config.guidance_scale
    )
    traj = Trajectory()

    def _decode(z: torch.Tensor) -> str:
        with torch.no_grad():
            tokens = codec.decode(denormalize(z, stats))[0]
        return codec.vocab.detokenize(tokens)

    def _append(t: int, z: torch.Tensor, z0_hat: torch.Tensor) -> None:
        decoded = _decode(z)
        step = TrajectoryStep(
            t=t, z0_hat=z0_hat[0].clone(), decoded=decoded, length=len(decoded.split())
        )
        if reference is not None:
            step.bleu = bleu([decoded], [reference])
        traj.steps.append(step)

    gens = _sample_generators(config.seed, 1)
    z_T = _per_item_noise((1, codec.config.L, codec.config.d), gens, torch.float32)
    z0 = run_sampler(predict, schedule, z_T, config, gens, _append)
    _append(0, z0, z0)
    return traj
