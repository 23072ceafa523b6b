"""Latent flow between events, gated jumps at events, and the co-integrated compensator."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoder import JumpSequence
from .solvers import SolverSpec, ode_solve
from .tpp import IntensityHead, softplus


class VectorField(nn.Module):
    """``dh/dt = f1(t, h)``: a fully connected net on ``[h, t]``."""

    def __init__(self, hidden: int, layers: int = 2, activation: str = "tanh", dtype=torch.float64):
        super().__init__()
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        widths = [hidden + 1] + [hidden] * layers
        self.hidden_layers = nn.ModuleList(
            nn.Linear(a, b, dtype=dtype) for a, b in zip(widths[:-1], widths[1:]))
        self.out = nn.Linear(hidden, hidden, dtype=dtype)

    def forward(self, t: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        x = torch.cat([h, t.expand(h.shape[0], 1)], dim=-1)
        for layer in self.hidden_layers:
            x = layer(x)
            if self.activation == "tanh":
                x = torch.tanh(x)
        return self.out(x)


class GRUJump(nn.Module):
    """Gated update ``h <- g(h, s)`` applied when an event arrives."""

    def __init__(self, cond_dim: int, hidden: int, dtype=torch.float64):
        super().__init__()
        self.reset = nn.Linear(cond_dim + hidden, hidden, dtype=dtype)
        self.update = nn.Linear(cond_dim + hidden, hidden, dtype=dtype)
        self.candidate = nn.Linear(cond_dim + hidden, hidden, dtype=dtype)

    def forward(self, h: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        sh = torch.cat([s, h], dim=-1)
        r = torch.sigmoid(self.reset(sh))
        u = torch.sigmoid(self.update(sh))
        c = torch.tanh(self.candidate(torch.cat([s, r * h], dim=-1)))
        return (1 - u) * c + u * h


def gru_jump(h_pre: torch.Tensor, s: torch.Tensor, params: GRUJump) -> torch.Tensor:
    return params(h_pre, s)


def augmented_field(field: VectorField, head: IntensityHead):
    """Vector field on ``[h, Lambda]`` with ``dLambda/dt = softplus(f2(h))``."""
    def f(t, y):
        h = y[:, :-1]
        return torch.cat([field(t, h), softplus(head.preactivation(h))], dim=-1)
    return f


@dataclass
class LatentTrajectory:
    states_at_events: list  # post-jump h per event index, each (B, H)
    aligned_h: torch.Tensor  # (B, H) at t_s
    aligned_compensator: torch.Tensor  # (B,)
    last_h: torch.Tensor  # post-jump h at the last event
    last_compensator: torch.Tensor
    event_intensities: torch.Tensor  # (B, L); pre-jump intensity at each event
    event_mask: torch.Tensor  # (B, L) bool, which entries are modelled arrivals


def evolve_batch(jumps: torch.Tensor, times: torch.Tensor, lengths: torch.Tensor,
                 t_s: torch.Tensor, field: VectorField, jump: GRUJump, head: IntensityHead,
                 spec: SolverSpec, include_root: bool = False) -> LatentTrajectory:
    """Evolve a padded batch.

    ``jumps`` is ``(B, L, S)``, ``times`` ``(B, L)`` with the root at index 0.
    Past a row's length, times must repeat its last event time so that the
    padded segments have zero span (they are identity flows). Jumps there are
    masked out.
    """
    b, n_events, _ = jumps.shape
    hidden = jump.update.out_features
    times = times.detach()
    pos = torch.arange(n_events)
    valid = pos[None, :] < lengths[:, None]
    arrivals = valid & (pos[None, :] > 0) if not include_root else valid.clone()

    fld = augmented_field(field, head)
    y = torch.zeros(b, hidden + 1, dtype=jumps.dtype)
    intensities = [head(y[:, :-1]).squeeze(-1)]
    y = torch.cat([jump(y[:, :-1], jumps[:, 0]), y[:, -1:]], dim=-1)
    states = [y[:, :-1]]
    for i in range(1, n_events):
        y = ode_solve(fld, y, times[:, i - 1], times[:, i], spec)
        h = y[:, :-1]
        intensities.append(head(h).squeeze(-1))
        h = torch.where(valid[:, i:i + 1], jump(h, jumps[:, i]), h)
        y = torch.cat([h, y[:, -1:]], dim=-1)
        states.append(h)
    last = y
    t_last = times[:, -1]
    y = ode_solve(fld, y, t_last, t_s, spec)
    return LatentTrajectory(
        states_at_events=states,
        aligned_h=y[:, :-1],
        aligned_compensator=y[:, -1],
        last_h=last[:, :-1],
        last_compensator=last[:, -1],
        event_intensities=torch.stack(intensities, dim=1),
        event_mask=arrivals,
    )


def evolve_cascade(jumps: JumpSequence, t_s: float, field: VectorField, jump: GRUJump,
                   head: IntensityHead, spec: SolverSpec, include_root: bool = False) -> LatentTrajectory:
    """Single-cascade form of :func:`evolve_batch`."""
    times = jumps.times
    if times.numel() and float(times[-1]) > t_s:
        raise ValueError("events after the observation time")
    return evolve_batch(jumps.jumps.unsqueeze(0), times.unsqueeze(0),
                        torch.tensor([times.numel()]), torch.tensor([float(t_s)], dtype=torch.float64),
                        field, jump, head, spec, include_root=include_root)
