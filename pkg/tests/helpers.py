"""Shared test utilities: finite-difference gradient oracle."""

import torch


def finite_difference_check(
    model: torch.nn.Module,
    loss_fn,
    coords_per_tensor: int = 4,
    eps: float = 1e-6,
    seed: int = 0,
):
    """Compare autograd parameter gradients against central finite differences.

    ``loss_fn()`` must evaluate a scalar loss from the model's current
    parameters. Returns {param_name: worst relative error} over sampled
    coordinates. Run the model in double precision.
    """
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    gen = torch.Generator().manual_seed(seed)
    worst = {}
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        grad = param.grad
        assert grad is not None, f"no gradient for {name}"
        flat = param.data.view(-1)
        n = flat.numel()
        idxs = torch.randperm(n, generator=gen)[: min(coords_per_tensor, n)]
        err = 0.0
        for i in idxs.tolist():
            orig = float(flat[i])
            flat[i] = orig + eps
            with torch.no_grad():
                lp = float(loss_fn())
            flat[i] = orig - eps
            with torch.no_grad():
                lm = float(loss_fn())
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            ag = float(grad.view(-1)[i])
            denom = max(abs(fd), abs(ag), 1e-8)
            err = max(err, abs(fd - ag) / denom)
        worst[name] = err
    return worst
