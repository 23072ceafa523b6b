"""Conditional intensity head and point-process negative log-likelihood."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


def softplus(x):
    """``log(1 + exp(x))`` without overflow, for tensors or arrays."""
    if isinstance(x, torch.Tensor):
        # above 40 the correction log1p(exp(-x)) is below 5e-18
        return F.softplus(x, beta=1.0, threshold=40.0)
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def inverse_softplus(y: float) -> float:
    """``x`` with ``softplus(x) == y`` for ``y > 0``."""
    if y <= 0:
        raise ValueError("softplus range is (0, inf)")
    return float(y + np.log(-np.expm1(-y)))


class IntensityHead(nn.Module):
    """Affine map of the latent state followed by softplus."""

    def __init__(self, hidden: int, dtype=torch.float64):
        super().__init__()
        self.linear = nn.Linear(hidden, 1, dtype=dtype)

    def preactivation(self, h: torch.Tensor) -> torch.Tensor:
        return self.linear(h)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return softplus(self.linear(h))


def intensity(h: torch.Tensor, head: IntensityHead) -> torch.Tensor:
    return head(h)


def nll(event_intensities, compensator):
    """``-(sum_i log lambda(t_i) - Lambda)`` over the horizon.

    Works for Python sequences, arrays and tensors. Any non-positive
    intensity raises, since softplus outputs are strictly positive.
    """
    if isinstance(event_intensities, torch.Tensor) or isinstance(compensator, torch.Tensor):
        lam = torch.as_tensor(event_intensities, dtype=torch.float64)
        if lam.numel() and not bool((lam > 0).all()):
            raise ValueError("event intensities must be strictly positive")
        return compensator - torch.log(lam).sum()
    lam = np.asarray(event_intensities, dtype=float)
    if lam.size and not np.all(lam > 0):
        raise ValueError("event intensities must be strictly positive")
    return float(compensator - np.log(lam).sum())
