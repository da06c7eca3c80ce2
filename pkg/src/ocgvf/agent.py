"""Main network: conv encoder, GVF heads, GVF feature fusion, Q head and the two TD losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call


class MainEncoder(nn.Module):
    """conv16/k3 -> pool/2 -> conv32/k3 -> pool/2 -> conv64/k3, ReLU after each conv."""

    def __init__(self, resolution: int):
        super().__init__()
        if resolution % 4:
            raise ValueError("resolution must be divisible by 4")
        self.resolution = resolution
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.conv3 = nn.Conv2d(32, 64, 3, padding=1)
        self.out_dim = (resolution // 4) ** 2 * 64

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.shape[1:] != (self.resolution, self.resolution, 3):
            raise ValueError(
                f"expected observations of shape (B, {self.resolution}, {self.resolution}, 3), got {tuple(obs.shape)}"
            )
        x = obs.permute(0, 3, 1, 2)
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        x = F.relu(self.conv3(x))
        return x.flatten(1)


class GVFHeads(nn.Module):
    """K independent one-hidden-layer value heads evaluated in one batched einsum."""

    def __init__(self, in_dim: int, num_heads: int, hidden: int = 32, outputs: int = 1):
        super().__init__()
        self.num_heads = num_heads
        self.outputs = outputs
        b1, b2 = 1.0 / math.sqrt(in_dim), 1.0 / math.sqrt(hidden)
        self.w1 = nn.Parameter(torch.empty(num_heads, in_dim, hidden).uniform_(-b1, b1))
        self.b1 = nn.Parameter(torch.empty(num_heads, hidden).uniform_(-b1, b1))
        self.w2 = nn.Parameter(torch.empty(num_heads, hidden, outputs).uniform_(-b2, b2))
        self.b2 = nn.Parameter(torch.empty(num_heads, outputs).uniform_(-b2, b2))

    def forward(self, phi: torch.Tensor) -> torch.Tensor:
        """[B, in] -> [B, K, outputs]."""
        h = F.relu(torch.einsum("bi,kih->bkh", phi, self.w1) + self.b1)
        return torch.einsum("bkh,kho->bko", h, self.w2) + self.b2


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int) -> nn.Sequential:
    layers, d = [], in_dim
    for h in hidden:
        layers += [nn.Linear(d, h), nn.ReLU()]
        d = h
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


@dataclass
class AgentConfig:
    num_actions: int = 4
    resolution: int = 32
    num_gvfs: int = 5
    gvf_kind: str = "state"  # "state" or "action"
    use_gvfs: bool = True
    use_features: bool = True
    use_layernorm: bool = True
    projection_dim: int = 64
    gvf_hidden: int = 32
    hidden_arch: tuple[int, ...] = (64, 32)
    input_dim: Optional[int] = None  # set to skip the conv encoder and feed features directly

    def __post_init__(self):
        if self.gvf_kind not in ("state", "action"):
            raise ValueError(f"gvf_kind must be 'state' or 'action', got {self.gvf_kind!r}")
        self.hidden_arch = tuple(self.hidden_arch)


@dataclass
class AgentOutput:
    phi: torch.Tensor
    gvf: Optional[torch.Tensor]  # [B, K, 1] state values or [B, K, A] action values
    chi: torch.Tensor
    q: torch.Tensor


class AgentNet(nn.Module):
    def __init__(self, config: AgentConfig):
        super().__init__()
        self.config = config
        if config.input_dim is None:
            self.encoder = MainEncoder(config.resolution)
            phi_dim = self.encoder.out_dim
        else:
            self.encoder = nn.Identity()
            phi_dim = config.input_dim
        self.phi_dim = phi_dim
        fused = config.use_gvfs and config.use_features
        if config.use_gvfs:
            outs = 1 if config.gvf_kind == "state" else config.num_actions
            self.gvf_heads = GVFHeads(phi_dim, config.num_gvfs, config.gvf_hidden, outs)
        if fused:
            self.projection = nn.Linear(config.num_gvfs * self.gvf_heads.outputs, config.projection_dim)
            chi_dim = phi_dim + config.projection_dim
            if config.use_layernorm:
                self.norm = nn.LayerNorm(chi_dim)
        else:
            chi_dim = phi_dim
        self.chi_dim = chi_dim
        self.fused = fused
        self.q_head = mlp(chi_dim, config.hidden_arch, config.num_actions)

    def features(self, obs: torch.Tensor) -> torch.Tensor:
        return self.encoder(obs)

    def gvf_values(self, phi: torch.Tensor) -> torch.Tensor:
        return self.gvf_heads(phi)

    def fuse(self, gvf: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
        psi = self.projection(gvf.flatten(1))
        chi = torch.cat([psi, phi], dim=-1)
        if self.config.use_layernorm:
            chi = self.norm(chi)
        return chi

    def forward(self, obs: torch.Tensor) -> AgentOutput:
        phi = self.features(obs)
        gvf = self.gvf_values(phi) if self.config.use_gvfs else None
        chi = self.fuse(gvf, phi) if self.fused else phi
        return AgentOutput(phi, gvf, chi, self.q_head(chi))

    def q_values(self, obs: torch.Tensor) -> torch.Tensor:
        return self(obs).q


def run(agent: AgentNet, params: Optional[dict], obs: torch.Tensor) -> AgentOutput:
    """Forward pass with optional substituted parameters."""
    if params is None:
        return agent(obs)
    return functional_call(agent, params, (obs,))


def greedy_action(q: torch.Tensor) -> torch.Tensor:
    """Argmax with the lowest index winning ties."""
    return torch.argmax(q, dim=-1)  # torch returns the first maximal index


# ----------------------------------------------------------------------------- losses

def gvf_loss(v_s: torch.Tensor, v_next: torch.Tensor, cumulants: torch.Tensor, done: torch.Tensor,
             gamma: float) -> torch.Tensor:
    """Mean squared TD error over batch and GVFs; the bootstrap term is a fixed target.

    v_s, v_next, cumulants: [B, K]; done: [B].
    """
    not_done = (1.0 - done.to(v_s.dtype)).unsqueeze(-1)
    target = cumulants + gamma * not_done * v_next.detach()
    return ((target - v_s) ** 2).mean()


def gvf_predictions(gvf_s: torch.Tensor, gvf_next: torch.Tensor, actions: torch.Tensor):
    """Reduce head outputs to the (prediction, bootstrap) pairs used by :func:`gvf_loss`.

    State-value heads ([B, K, 1]) are squeezed. Action-value heads ([B, K, A]) predict
    the behaviour action's value and bootstrap on the greedy next-state value.
    """
    if gvf_s.shape[-1] == 1:
        return gvf_s.squeeze(-1), gvf_next.squeeze(-1)
    idx = actions.view(-1, 1, 1).expand(-1, gvf_s.shape[1], 1)
    return gvf_s.gather(-1, idx).squeeze(-1), gvf_next.max(dim=-1).values


def ddqn_loss(q_s: torch.Tensor, actions: torch.Tensor, rewards: torch.Tensor, q_next_online: torch.Tensor,
              q_next_target: torch.Tensor, done: torch.Tensor, gamma: float) -> torch.Tensor:
    """Double DQN: online net picks the next action, target net evaluates it."""
    a_star = greedy_action(q_next_online.detach())
    q_eval = q_next_target.detach().gather(1, a_star.unsqueeze(1)).squeeze(1)
    y = rewards + gamma * (1.0 - done.to(q_s.dtype)) * q_eval
    q_sa = q_s.gather(1, actions.unsqueeze(1)).squeeze(1)
    return ((y.detach() - q_sa) ** 2).mean()
