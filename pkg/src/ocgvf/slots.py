"""Slot-attention autoencoder used for object discovery.

Convolutional encoder -> iterative slot attention -> spatial-broadcast decoder
whose per-slot alpha channels are softmaxed across slots.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

# (filters, kernel) per encoder conv; (filters, kernel, stride) per decoder transposed conv
ARCHITECTURES = {
    32: {
        "encoder": ((32, 3), (32, 3), (64, 3)),
        "decoder": ((64, 3, 2), (32, 3, 2), (32, 3, 1), (4, 3, 1)),
    },
    64: {
        "encoder": ((32, 5), (32, 5), (64, 5)),
        "decoder": ((64, 5, 2), (32, 5, 2), (32, 5, 2), (32, 3, 1), (4, 3, 1)),
    },
}


@dataclass
class SlotConfig:
    num_slots: int = 5
    slot_dim: int = 64
    num_iterations: int = 3
    resolution: int = 32
    init_mode: str = "learned"  # "learned" (fixed per-slot vectors) or "random"
    mlp_hidden: int = 128

    def __post_init__(self):
        if self.num_slots < 1 or self.num_iterations < 1:
            raise ValueError("num_slots and num_iterations must be >= 1")
        if self.resolution not in ARCHITECTURES:
            raise ValueError(f"no slot architecture for resolution {self.resolution}")
        if self.init_mode not in ("learned", "random"):
            raise ValueError(f"init_mode must be 'learned' or 'random', got {self.init_mode!r}")


@dataclass
class SlotSet:
    slots: torch.Tensor  # [B, K, D]
    recon: torch.Tensor  # [B, H, W, 3]
    masks: torch.Tensor  # [B, K, H, W]
    per_slot_rgb: torch.Tensor  # [B, K, H, W, 3]


def position_grid(height: int, width: int) -> torch.Tensor:
    """[H, W, 4] grid of (y, x, 1 - y, 1 - x) in [0, 1]."""
    ys = torch.linspace(0.0, 1.0, height)
    xs = torch.linspace(0.0, 1.0, width)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gy, gx, 1.0 - gy, 1.0 - gx], dim=-1)


class SoftPositionEmbed(nn.Module):
    def __init__(self, channels: int, height: int, width: int):
        super().__init__()
        self.proj = nn.Linear(4, channels)
        self.register_buffer("grid", position_grid(height, width), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, C, H, W]
        emb = self.proj(self.grid.to(x.dtype)).permute(2, 0, 1)
        return x + emb.unsqueeze(0)


class SlotEncoder(nn.Module):
    def __init__(self, resolution: int, layers: Sequence[tuple[int, int]]):
        super().__init__()
        convs, in_ch = [], 3
        for filters, kernel in layers:
            convs.append(nn.Conv2d(in_ch, filters, kernel, padding=kernel // 2))
            in_ch = filters
        self.convs = nn.ModuleList(convs)
        self.out_dim = in_ch
        self.pos = SoftPositionEmbed(in_ch, resolution, resolution)
        self.norm = nn.LayerNorm(in_ch)
        self.mlp = nn.Sequential(nn.Linear(in_ch, in_ch), nn.ReLU(), nn.Linear(in_ch, in_ch))
        self.resolution = resolution

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        """[B, H, W, 3] pixels -> [B, H*W, C] position features."""
        if obs.shape[1:] != (self.resolution, self.resolution, 3):
            raise ValueError(
                f"expected observations of shape (B, {self.resolution}, {self.resolution}, 3), got {tuple(obs.shape)}"
            )
        x = obs.permute(0, 3, 1, 2)
        for conv in self.convs:
            x = F.relu(conv(x))
        x = self.pos(x)
        x = x.flatten(2).transpose(1, 2)
        return self.mlp(self.norm(x))


class SlotAttention(nn.Module):
    def __init__(self, num_slots: int, dim: int, input_dim: int, iters: int = 3,
                 init_mode: str = "learned", hidden_dim: int = 128, eps: float = 1e-8):
        super().__init__()
        self.num_slots = num_slots
        self.dim = dim
        self.iters = iters
        self.init_mode = init_mode
        self.eps = eps
        self.scale = dim ** -0.5

        if init_mode == "learned":
            self.slot_init = nn.Parameter(torch.randn(num_slots, dim) * dim ** -0.5)
        else:
            self.slots_mu = nn.Parameter(torch.randn(1, 1, dim) * dim ** -0.5)
            self.slots_logsigma = nn.Parameter(torch.zeros(1, 1, dim))

        self.norm_inputs = nn.LayerNorm(input_dim)
        self.norm_slots = nn.LayerNorm(dim)
        self.norm_mlp = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(input_dim, dim, bias=False)
        self.to_v = nn.Linear(input_dim, dim, bias=False)
        self.gru = nn.GRUCell(dim, dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, dim))

    def initial_slots(self, batch: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        if self.init_mode == "learned":
            return self.slot_init.unsqueeze(0).expand(batch, -1, -1)
        mu = self.slots_mu.expand(batch, self.num_slots, -1)
        sigma = self.slots_logsigma.exp().expand(batch, self.num_slots, -1)
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
        return mu + sigma * noise

    def forward(self, inputs: torch.Tensor, init_slots: Optional[torch.Tensor] = None,
                iters: Optional[int] = None, return_attn: bool = False):
        b, _, _ = inputs.shape
        slots = self.initial_slots(b) if init_slots is None else init_slots
        k_slots = slots.shape[1]
        inputs = self.norm_inputs(inputs)
        k, v = self.to_k(inputs), self.to_v(inputs)
        attn = None
        for _ in range(self.iters if iters is None else iters):
            prev = slots
            q = self.to_q(self.norm_slots(slots))
            logits = torch.einsum("bkd,bnd->bkn", q, k) * self.scale
            attn = logits.softmax(dim=1) + self.eps  # competition over slots
            weights = attn / attn.sum(dim=-1, keepdim=True)
            updates = torch.einsum("bkn,bnd->bkd", weights, v)
            slots = self.gru(updates.reshape(-1, self.dim), prev.reshape(-1, self.dim)).reshape(b, k_slots, self.dim)
            slots = slots + self.mlp(self.norm_mlp(slots))
        if return_attn:
            return slots, attn
        return slots


class SlotDecoder(nn.Module):
    def __init__(self, slot_dim: int, resolution: int, layers: Sequence[tuple[int, int, int]]):
        super().__init__()
        upsample = math.prod(s for _, _, s in layers)
        if resolution % upsample:
            raise ValueError(f"resolution {resolution} not divisible by decoder stride product {upsample}")
        if layers[-1][0] != 4:
            raise ValueError("last decoder layer must output 3 RGB + 1 alpha channels")
        self.grid = resolution // upsample
        self.pos = SoftPositionEmbed(slot_dim, self.grid, self.grid)
        deconvs, in_ch = [], slot_dim
        for filters, kernel, stride in layers:
            deconvs.append(
                nn.ConvTranspose2d(in_ch, filters, kernel, stride=stride, padding=kernel // 2,
                                   output_padding=stride - 1)
            )
            in_ch = filters
        self.deconvs = nn.ModuleList(deconvs)

    def forward(self, slots: torch.Tensor):
        b, k, d = slots.shape
        x = slots.reshape(b * k, d, 1, 1).expand(-1, -1, self.grid, self.grid)
        x = self.pos(x)
        for i, deconv in enumerate(self.deconvs):
            x = deconv(x)
            if i < len(self.deconvs) - 1:
                x = F.relu(x)
        h, w = x.shape[-2:]
        x = x.reshape(b, k, 4, h, w)
        rgb = x[:, :, :3].permute(0, 1, 3, 4, 2)
        masks = x[:, :, 3].softmax(dim=1)
        recon = (masks.unsqueeze(-1) * rgb).sum(dim=1)
        return recon, masks, rgb


class SlotAutoencoder(nn.Module):
    def __init__(self, config: SlotConfig):
        super().__init__()
        self.config = config
        arch = ARCHITECTURES[config.resolution]
        self.encoder = SlotEncoder(config.resolution, arch["encoder"])
        self.attention = SlotAttention(
            config.num_slots, config.slot_dim, self.encoder.out_dim, config.num_iterations,
            init_mode=config.init_mode, hidden_dim=config.mlp_hidden,
        )
        self.decoder = SlotDecoder(config.slot_dim, config.resolution, arch["decoder"])

    def encode(self, obs: torch.Tensor) -> torch.Tensor:
        return self.encoder(obs)

    def slots(self, obs: torch.Tensor, init_slots: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.attention(self.encoder(obs), init_slots)

    def decode(self, slots: torch.Tensor):
        return self.decoder(slots)

    def forward(self, obs: torch.Tensor) -> SlotSet:
        slots = self.slots(obs)
        recon, masks, rgb = self.decoder(slots)
        return SlotSet(slots, recon, masks, rgb)


def slot_learning_rate(step: int, base_lr: float = 4e-4, warmup_steps: int = 10_000,
                       decay_rate: float = 0.5, decay_steps: int = 100_000) -> float:
    """Linear warmup from zero, then exponential decay counted from the end of warmup."""
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * decay_rate ** ((step - warmup_steps) / decay_steps)


def reconstruction_loss(model: SlotAutoencoder, obs: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(model(obs).recon, obs)


class SlotTrainer:
    """Adam on mean squared reconstruction error with the warmup/decay schedule.

    Training stops (parameters freeze) once ``num_train_steps`` steps were taken.
    """

    def __init__(self, model: SlotAutoencoder, base_lr: float = 4e-4, warmup_steps: int = 10_000,
                 decay_rate: float = 0.5, decay_steps: int = 100_000, num_train_steps: int = 200_000):
        self.model = model
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.decay_rate = decay_rate
        self.decay_steps = decay_steps
        self.num_train_steps = num_train_steps
        self.step_count = 0
        self.optimizer = torch.optim.Adam(model.parameters(), lr=0.0)

    @property
    def finished(self) -> bool:
        return self.step_count >= self.num_train_steps

    def learning_rate(self, step: Optional[int] = None) -> float:
        step = self.step_count if step is None else step
        return slot_learning_rate(step, self.base_lr, self.warmup_steps, self.decay_rate, self.decay_steps)

    def train_step(self, obs: torch.Tensor) -> Optional[float]:
        if self.finished:
            return None
        lr = self.learning_rate()
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        loss = reconstruction_loss(self.model, obs)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.step_count += 1
        return float(loss.detach())

    def state_dict(self) -> dict:
        return copy.deepcopy(
            {"model": self.model.state_dict(), "optimizer": self.optimizer.state_dict(), "step": self.step_count}
        )

    def load_state_dict(self, sd: dict) -> None:
        self.model.load_state_dict(sd["model"])
        self.optimizer.load_state_dict(sd["optimizer"])
        self.step_count = sd["step"]
