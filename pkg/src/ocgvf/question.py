"""Question networks: meta-parameterised maps from inputs to bounded cumulants."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call


class SlotQuestionNet(nn.Module):
    """One MLP shared across slots; cumulant k depends on slot k only."""

    def __init__(self, slot_dim: int = 64, hidden: int = 32):
        super().__init__()
        self.fc1 = nn.Linear(slot_dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, slots: torch.Tensor) -> torch.Tensor:
        # slots: [B, K, D] -> [B, K]
        return torch.tanh(self.fc2(F.relu(self.fc1(slots)))).squeeze(-1)


class ConvQuestionNet(nn.Module):
    """Cumulants straight from pixels, using the main encoder's conv topology."""

    def __init__(self, resolution: int, num_cumulants: int, hidden: int = 32):
        super().__init__()
        from ocgvf.agent import MainEncoder

        self.encoder = MainEncoder(resolution)
        self.fc1 = nn.Linear(self.encoder.out_dim, hidden)
        self.fc2 = nn.Linear(hidden, num_cumulants)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.fc2(F.relu(self.fc1(self.encoder(obs)))))


def meta_param_init(kind: str, seed: int, **kwargs) -> nn.Module:
    """Fresh question network with PyTorch's fan-in scaled init, reproducible per seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if kind == "slots":
            return SlotQuestionNet(**kwargs)
        if kind == "conv":
            return ConvQuestionNet(**kwargs)
    raise ValueError(f"unknown question network kind {kind!r}")


def cumulants(question: nn.Module, inputs: torch.Tensor, params: Optional[dict] = None) -> torch.Tensor:
    """Evaluate the question network, optionally with substituted (differentiable) parameters."""
    if params is None:
        return question(inputs)
    return functional_call(question, params, (inputs,))


def slot_cumulants(slot_model, question: nn.Module, obs: torch.Tensor, params: Optional[dict] = None) -> torch.Tensor:
    """Cumulants for a batch of observations; slot parameters are held constant."""
    with torch.no_grad():
        slots = slot_model.slots(obs)
    return cumulants(question, slots, params)
