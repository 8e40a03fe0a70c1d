"""Small torch building blocks shared by the encoders and the model.

All ReLUs route through :func:`relu` so that :func:`record_kinks` can
collect pre-activations; the gradient checker uses them to reject probes
that straddle an activation kink.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64

_recorders: list[list[np.ndarray]] = []


@contextmanager
def record_kinks():
    """Collect every non-smooth point input evaluated inside the block."""
    buf: list[np.ndarray] = []
    _recorders.append(buf)
    try:
        yield buf
    finally:
        _recorders.pop()


def record(x: torch.Tensor) -> None:
    if _recorders:
        _recorders[-1].append(x.detach().cpu().numpy().ravel().copy())


def relu(x: torch.Tensor) -> torch.Tensor:
    record(x)
    return torch.relu(x)


class MLP(nn.Module):
    """Affine layers with ReLU in between (none after the last)."""

    def __init__(self, sizes):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(sizes[:-1], sizes[1:])
        )

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)
