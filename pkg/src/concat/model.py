"""Full popularity model: jump conditions, latent flow, intensity and prediction head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dynamics import GRUJump, LatentTrajectory, VectorField, evolve_batch
from .encoder import PrefixAttention, event_inputs
from .solvers import SolverSpec
from .tpp import IntensityHead, nll, softplus

LOG2 = math.log(2.0)


@dataclass
class ModelConfig:
    cascade_dim: int = 100
    global_dim: int = 64
    attn_width: int = 32
    hidden: int = 64
    f1_layers: int = 2
    f1_activation: str = "tanh"
    head_hidden: int = 64
    no_tpp: bool = False
    no_align: bool = False
    include_root_intensity: bool = False

    def __post_init__(self):
        if self.cascade_dim % 2:
            raise ValueError("cascade_dim doubles as the temporal encoding width and must be even")
        for name in ("cascade_dim", "global_dim", "attn_width", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def widths(self) -> dict:
        keys = ("cascade_dim", "global_dim", "attn_width", "hidden", "f1_layers", "head_hidden")
        out = {k: v for k, v in asdict(self).items() if k in keys}
        out["head_input"] = self.hidden + (0 if self.no_tpp else 1)
        return out


@dataclass
class Example:
    """One cascade ready for the network."""
    cascade_id: str
    cascade_embeds: np.ndarray  # (N+1, cascade_dim), root first
    global_embeds: np.ndarray  # (N+1, global_dim)
    times: np.ndarray  # (N+1,), times[0] == 0
    observation_time: float
    label: int = 0


@dataclass
class Batch:
    ids: list
    cascade_embeds: torch.Tensor
    global_embeds: torch.Tensor
    times: torch.Tensor
    lengths: torch.Tensor
    observation_time: torch.Tensor
    labels: torch.Tensor


def collate(examples: Sequence[Example]) -> Batch:
    """Pad to the longest cascade; padded times repeat each row's last time."""
    b = len(examples)
    n = max(len(e.times) for e in examples)
    dc = examples[0].cascade_embeds.shape[1]
    dg = examples[0].global_embeds.shape[1]
    ec = np.zeros((b, n, dc))
    eg = np.zeros((b, n, dg))
    times = np.zeros((b, n))
    for i, e in enumerate(examples):
        k = len(e.times)
        ec[i, :k] = e.cascade_embeds
        eg[i, :k] = e.global_embeds
        times[i, :k] = e.times
        times[i, k:] = e.times[-1]
    return Batch(
        ids=[e.cascade_id for e in examples],
        cascade_embeds=torch.from_numpy(ec),
        global_embeds=torch.from_numpy(eg),
        times=torch.from_numpy(times),
        lengths=torch.tensor([len(e.times) for e in examples]),
        observation_time=torch.tensor([e.observation_time for e in examples], dtype=torch.float64),
        labels=torch.tensor([e.label for e in examples], dtype=torch.float64),
    )


class PredictionHead(nn.Module):
    """MLP on ``[Lambda, h]`` (or ``h`` alone without the point process) + softplus."""

    def __init__(self, in_dim: int, hidden: int, dtype=torch.float64):
        super().__init__()
        # fixed divisor for the compensator input; an affine reparametrization of
        # the first layer that keeps tanh units out of saturation as Lambda grows
        self.register_buffer("compensator_scale", torch.ones((), dtype=dtype))
        if hidden > 0:
            self.net = nn.Sequential(nn.Linear(in_dim, hidden, dtype=dtype), nn.Tanh(),
                                     nn.Linear(hidden, 1, dtype=dtype))
        else:
            self.net = nn.Sequential(nn.Linear(in_dim, 1, dtype=dtype))

    @property
    def output_layer(self) -> nn.Linear:
        return self.net[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return softplus(self.net(x)).squeeze(-1)


class ConCat(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.attn_c = PrefixAttention(cfg.cascade_dim, cfg.attn_width)
        self.attn_g = PrefixAttention(cfg.global_dim, cfg.attn_width)
        self.field = VectorField(cfg.hidden, cfg.f1_layers, cfg.f1_activation)
        self.jump = GRUJump(2 * cfg.attn_width, cfg.hidden)
        self.intensity = IntensityHead(cfg.hidden)
        head_in = cfg.hidden if cfg.no_tpp else cfg.hidden + 1
        self.head = PredictionHead(head_in, cfg.head_hidden)

    def jump_conditions(self, batch: Batch) -> torch.Tensor:
        sc = self.attn_c(event_inputs(batch.cascade_embeds, batch.times))
        sg = self.attn_g(batch.global_embeds)
        return torch.cat([sc, sg], dim=-1)

    def evolve(self, batch: Batch, spec: SolverSpec) -> LatentTrajectory:
        return evolve_batch(self.jump_conditions(batch), batch.times, batch.lengths,
                            batch.observation_time, self.field, self.jump, self.intensity, spec,
                            include_root=self.cfg.include_root_intensity)

    def forward(self, batch: Batch, spec: SolverSpec, no_align: bool | None = None):
        traj = self.evolve(batch, spec)
        return predict_popularity(traj, self.head, self.cfg, no_align=no_align), traj


def predict_popularity(traj: LatentTrajectory, head: PredictionHead, flags: ModelConfig,
                       no_align: bool | None = None) -> torch.Tensor:
    """Predicted increment from the state at ``t_s``.

    Without alignment the latent state is taken at the last event instead;
    the compensator input is ``Lambda(t_s)`` either way, so the two modes
    differ only through the flow of ``h`` after the last event.
    """
    no_align = flags.no_align if no_align is None else no_align
    h = traj.last_h if no_align else traj.aligned_h
    lam = traj.aligned_compensator
    if flags.no_tpp:
        return head(h)
    return head(torch.cat([(lam / head.compensator_scale).unsqueeze(-1), h], dim=-1))


def squared_log_error(p, p_hat):
    return (torch.log1p(p) / LOG2 - torch.log1p(p_hat) / LOG2) ** 2


def cascade_losses(labels: torch.Tensor, preds: torch.Tensor, traj: LatentTrajectory,
                   flags: ModelConfig) -> torch.Tensor:
    """Per-cascade objective: squared log2 error plus the point-process NLL."""
    reg = squared_log_error(labels, preds)
    if flags.no_tpp:
        return reg
    log_lam = torch.where(traj.event_mask, torch.log(traj.event_intensities),
                          torch.zeros_like(traj.event_intensities))
    return reg + traj.aligned_compensator - log_lam.sum(dim=1)


def loss(P, P_hat, event_intensities, compensator, flags: ModelConfig):
    """Single-cascade objective from its parts."""
    reg = (math.log2(P + 1) - math.log2(float(P_hat) + 1)) ** 2
    if flags.no_tpp:
        return reg
    return reg + nll(event_intensities, compensator)
