"""Continuous time encoding and temporal path-count encoding."""

from __future__ import annotations

import math

import torch
from torch import nn

from .nn_utils import DTYPE, MLP, as_tensor

__all__ = ["TimeEncoder", "PathCountEncoder", "encode_time", "encode_path_count"]


class TimeEncoder(nn.Module):
    """Random-Fourier style map ``t -> sqrt(1/d_T) [cos w_i t, sin w_i t]_i``.

    Frequencies start on the geometric ladder ``10^(-4 i / d_T)`` and are
    trained with the rest of the model.  Output width is ``2 * d_T`` with
    cosine and sine interleaved per frequency.
    """

    def __init__(self, d_T: int):
        super().__init__()
        if d_T < 1:
            raise ValueError("d_T must be positive")
        self.d_T = d_T
        ladder = 1.0 / 10 ** (4 * torch.arange(d_T, dtype=DTYPE) / d_T)
        self.omega = nn.Parameter(ladder)

    @property
    def out_dim(self) -> int:
        return 2 * self.d_T

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        phase = t.unsqueeze(-1) * self.omega
        pairs = torch.stack((torch.cos(phase), torch.sin(phase)), dim=-1)
        return pairs.flatten(-2) * math.sqrt(1.0 / self.d_T)


class PathCountEncoder(nn.Module):
    """``p -> MLP(log(1 + p))`` with one hidden ReLU layer of width ``d_P``."""

    def __init__(self, d_P: int):
        super().__init__()
        self.d_P = d_P
        self.mlp = MLP([1, d_P, d_P])

    @property
    def out_dim(self) -> int:
        return self.d_P

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        return self.mlp(torch.log1p(p).unsqueeze(-1))


def encode_time(params: TimeEncoder, t) -> torch.Tensor:
    return params(as_tensor(t))


def encode_path_count(params: PathCountEncoder, p) -> torch.Tensor:
    p = as_tensor(p)
    if torch.any(p < 0):
        raise ValueError("path counts are non-negative")
    return params(p)
