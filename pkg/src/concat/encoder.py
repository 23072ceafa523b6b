"""Temporal encoding and prefix self-attention producing per-event jump conditions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .embed import EmbeddingTable


def temporal_encode(t, dim: int) -> torch.Tensor:
    """Trigonometric encoding of timestamps.

    1-indexed entry ``j`` is ``cos(t / 10000**((j-1)/dim))`` for odd ``j`` and
    ``sin(t / 10000**(j/dim))`` for even ``j``. ``t`` may be a scalar or a
    tensor; the encoding is appended as a trailing axis.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"encoding dimension must be even and >= 2, got {dim}")
    t = torch.as_tensor(t, dtype=torch.float64)
    j = torch.arange(1, dim + 1, dtype=torch.float64)
    odd = (j % 2) == 1
    exponent = torch.where(odd, (j - 1) / dim, j / dim)
    arg = t.unsqueeze(-1) / torch.pow(torch.tensor(10000.0, dtype=torch.float64), exponent)
    return torch.where(odd, torch.cos(arg), torch.sin(arg))


class PrefixAttention(nn.Module):
    """Single-head scaled dot-product attention over every prefix of a sequence.

    Output position ``i`` is the feed-forward transform of the attention
    read-out for query ``i`` over keys ``0..i``, so it summarizes exactly the
    prefix ending at event ``i``.
    """

    def __init__(self, in_dim: int, width: int, dtype=torch.float64):
        super().__init__()
        self.width = width
        self.query = nn.Linear(in_dim, width, bias=False, dtype=dtype)
        self.key = nn.Linear(in_dim, width, bias=False, dtype=dtype)
        self.value = nn.Linear(in_dim, width, bias=False, dtype=dtype)
        self.ffn = nn.Linear(width, width, dtype=dtype)

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        """Causal attention weights, ``(..., L, L)``; rows sum to one."""
        q, k = self.query(x), self.key(x)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.width)
        n = x.shape[-2]
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        logits = logits.masked_fill(~causal, float("-inf"))
        return torch.softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.scores(x) @ self.value(x)
        return torch.tanh(self.ffn(s))


def self_attention(inputs, params: PrefixAttention) -> torch.Tensor:
    """Summary of a whole sequence: the output at its final position."""
    x = torch.as_tensor(inputs, dtype=torch.float64)
    if x.dim() != 2 or x.shape[0] == 0:
        raise ValueError("self_attention expects a nonempty (L, d) sequence")
    return params(x)[-1]


@dataclass
class JumpSequence:
    jumps: torch.Tensor  # (L, dim_c + dim_g)
    times: torch.Tensor  # (L,)


def event_inputs(cascade_embeds: torch.Tensor, times: torch.Tensor) -> torch.Tensor:
    """Event embeddings: temporal encoding plus cascade-graph embedding."""
    return temporal_encode(times, cascade_embeds.shape[-1]) + cascade_embeds


def encode_jump_conditions(cascade_embeds: EmbeddingTable, global_embeds: EmbeddingTable,
                           event_nodes, users, times, params_c: PrefixAttention,
                           params_g: PrefixAttention) -> JumpSequence:
    """Jump conditions for one cascade.

    ``event_nodes`` index ``cascade_embeds`` and ``users`` index
    ``global_embeds``; both are in event order starting at the root.
    """
    times = torch.as_tensor(times, dtype=torch.float64)
    if times.numel() > 1 and not bool((times[1:] >= times[:-1]).all()):
        raise ValueError("event times must be sorted")
    ec = torch.from_numpy(cascade_embeds.matrix(event_nodes))
    eg = torch.from_numpy(global_embeds.matrix(users))
    sc = params_c(event_inputs(ec, times))
    sg = params_g(eg)
    return JumpSequence(torch.cat([sc, sg], dim=-1), times)
