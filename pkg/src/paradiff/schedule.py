"""Discrete noise schedules and the closed-form forward (noising) process.

A schedule fixes the per-step noise scales beta_t for t in 1..T together with
the cumulative signal-retention factors alpha_bar_t = prod_{i<=t} (1 - beta_i).
Tables are precomputed in double precision once; samplers and training code
only ever read them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

__all__ = [
    "NoiseSchedule",
    "build_cosine_schedule",
    "build_linear_schedule",
    "forward_noise",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta / alpha-bar / sigma tables over T discrete steps.

    ``alpha_bars`` has T+1 entries with ``alpha_bars[0] == 1`` so that t = 0
    denotes clean data; ``betas[t-1]`` and ``sigmas[t-1]`` belong to step t.
    Immutable after construction and safe for concurrent reads.
    """

    kind: str
    T: int
    betas: torch.Tensor
    alpha_bars: torch.Tensor
    sigmas: torch.Tensor
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"step count must be >= 1, got {self.T}")
        if self.betas.shape != (self.T,):
            raise ValueError("betas must have shape (T,)")
        if self.alpha_bars.shape != (self.T + 1,):
            raise ValueError("alpha_bars must have shape (T+1,)")
        if not torch.all((self.betas > 0) & (self.betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")

    def alpha_bar(self, t: int) -> float:
        """Signal retention fraction at step t (t = 0 means clean data)."""
        return float(self.alpha_bars[t])

    def spec(self) -> dict:
        """Serializable description; tables are rebuilt from it, never stored."""
        return {"kind": self.kind, "T": self.T, **self.params}

    @staticmethod
    def from_spec(spec: dict) -> "NoiseSchedule":
        kind = spec["kind"]
        if kind == "cosine":
            return build_cosine_schedule(
                spec["T"], s=spec.get("s", 0.008), max_beta=spec.get("max_beta", 0.999)
            )
        if kind == "linear":
            return build_linear_schedule(spec["T"], spec["beta_start"], spec["beta_end"])
        raise ValueError(f"unknown schedule kind {kind!r}")


def _finalize(kind: str, betas: torch.Tensor, params: dict) -> NoiseSchedule:
    T = betas.shape[0]
    alpha_bars = torch.cat(
        [torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - betas, dim=0)]
    )
    return NoiseSchedule(
        kind=kind,
        T=T,
        betas=betas,
        alpha_bars=alpha_bars,
        sigmas=torch.sqrt(betas),
        params=params,
    )


def build_cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Squared-cosine alpha-bar profile with offset ``s`` and beta clipped at ``max_beta``.

    betas[t-1] = 1 - f(t)/f(t-1) with f(t) = cos((t/T + s)/(1 + s) * pi/2)^2.
    """
    if T < 1:
        raise ValueError(f"step count must be >= 1, got {T}")
    if not (0.0 < max_beta <= 1.0):
        raise ValueError(f"max_beta must lie in (0, 1], got {max_beta}")
    if s <= 0:
        raise ValueError(f"offset s must be positive, got {s}")

    t = torch.arange(T + 1, dtype=torch.float64)
    f = torch.cos((t / T + s) / (1.0 + s) * torch.pi / 2.0) ** 2
    betas = torch.clamp(1.0 - f[1:] / f[:-1], max=max_beta)
    return _finalize("cosine", betas, {"s": s, "max_beta": max_beta})


def build_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Betas linearly interpolated from ``beta_start`` to ``beta_end`` over T steps."""
    if T < 1:
        raise ValueError(f"step count must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    return _finalize("linear", betas, {"beta_start": beta_start, "beta_end": beta_end})


def forward_noise(
    z0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Closed-form noising: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.

    Pure given an explicit noise draw ``eps`` (same shape as ``z0``).
    """
    if not (1 <= t <= schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}], got {t}")
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    abar = schedule.alpha_bars[t].to(z0.dtype)
    return torch.sqrt(abar) * z0 + torch.sqrt(1.0 - abar) * eps


def forward_noise_batch(
    z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Batched closed-form noising; ``t`` holds one step index per batch item."""
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    if torch.any(t < 1) or torch.any(t > schedule.T):
        raise ValueError(f"every t must lie in [1, {schedule.T}]")
    abar = schedule.alpha_bars.to(z0.dtype)[t]
    while abar.dim() < z0.dim():
        abar = abar.unsqueeze(-1)
    return torch.sqrt(abar) * z0 + torch.sqrt(1.0 - abar) * eps
