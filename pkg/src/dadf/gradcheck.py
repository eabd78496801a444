"""Central finite-difference gradient checks in double precision."""

from __future__ import annotations

from typing import Callable, Iterable

import torch
from torch import Tensor


def numeric_grad(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-5) -> Tensor:
    """Central differences of scalar ``fn()`` w.r.t. every element of ``tensor``.

    ``tensor`` is perturbed in place and restored afterwards.
    """
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    out = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = fn().item()
            flat[i] = orig - eps
            minus = fn().item()
            flat[i] = orig
            out[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))
    return ((analytic - numeric).abs() / denom).max().item() if analytic.numel() else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Iterable[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between autograd and central differences of ``fn``
    over all ``tensors`` (which must require grad and be float64)."""
    tensors = list(tensors)
    for t in tensors:
        if t.dtype != torch.float64:
            raise TypeError("gradient checks require float64 tensors")
        t.grad = None
    fn().backward()
    analytic = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t) for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, relative_error(a, numeric_grad(fn, t, eps), floor))
    return worst
