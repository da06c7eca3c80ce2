"""Agent variants (DDQN, random / hand-crafted / discovered GVFs, object-centric GVFs and ablations).

A variant is a handful of orthogonal flags; :func:`make_agent` turns one into a
wired :class:`~ocgvf.meta.Learner` plus the slot trainer when slots are needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ocgvf.agent import AgentConfig, AgentNet
from ocgvf.config import ExperimentConfig
from ocgvf.envs.collect_objects import GridLayout, handcrafted_features
from ocgvf.errors import ConfigurationError
from ocgvf.meta import Learner
from ocgvf.question import ConvQuestionNet, cumulants, meta_param_init
from ocgvf.slots import SlotAutoencoder, SlotConfig, SlotTrainer

CUMULANT_SOURCES = ("meta_slots", "meta_conv", "random", "handcrafted", "none")


@dataclass(frozen=True)
class AgentVariant:
    id: str
    use_features: bool
    use_layernorm: bool
    gvf_kind: str
    cumulant_source: str

    @property
    def uses_gvfs(self) -> bool:
        return self.cumulant_source != "none"

    @property
    def uses_slots(self) -> bool:
        return self.cumulant_source == "meta_slots"


_V = AgentVariant
VARIANTS = {
    v.id: v
    for v in (
        _V("ddqn", False, False, "state", "none"),
        _V("random_gvf", False, False, "action", "random"),
        _V("hc_gvf", False, False, "action", "handcrafted"),
        _V("dis_aux_gvf", False, False, "action", "meta_conv"),
        _V("random_gvf_plus", True, True, "state", "random"),
        _V("hc_gvf_plus", True, True, "state", "handcrafted"),
        _V("dis_aux_gvf_plus", True, True, "state", "meta_conv"),
        _V("oc_gvf", True, True, "state", "meta_slots"),
        _V("oc_gvf_no_features", False, False, "state", "meta_slots"),
        _V("oc_gvf_no_layernorm", True, False, "state", "meta_slots"),
        _V("oc_gvf_action_values", True, True, "action", "meta_slots"),
    )
}


def get_variant(variant_id: str) -> AgentVariant:
    try:
        return VARIANTS[variant_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown agent variant {variant_id!r}; valid ids: {', '.join(VARIANTS)}"
        ) from None


# ----------------------------------------------------------------------------- cumulant sources

class MetaSlotCumulants:
    """Question MLP over slots from a slot model whose parameters are constants here."""

    meta_learned = True

    def __init__(self, slot_model: SlotAutoencoder, question: torch.nn.Module):
        self.slot_model = slot_model
        self.question = question
        self.num = slot_model.config.num_slots

    def inputs(self, obs: torch.Tensor, bt=None) -> torch.Tensor:
        with torch.no_grad():
            return self.slot_model.slots(obs)

    def evaluate(self, inputs: torch.Tensor, params: Optional[dict] = None) -> torch.Tensor:
        return cumulants(self.question, inputs, params)

    def state_dict(self) -> dict:
        return {"question": self.question.state_dict()}

    def load_state_dict(self, sd: dict) -> None:
        self.question.load_state_dict(sd["question"])


class MetaConvCumulants:
    """Question network reading raw pixels (conv encoder + MLP)."""

    meta_learned = True

    def __init__(self, question: ConvQuestionNet, num: int):
        self.question = question
        self.num = num

    def inputs(self, obs: torch.Tensor, bt=None) -> torch.Tensor:
        return obs

    def evaluate(self, inputs: torch.Tensor, params: Optional[dict] = None) -> torch.Tensor:
        return cumulants(self.question, inputs, params)

    def state_dict(self) -> dict:
        return {"question": self.question.state_dict()}

    def load_state_dict(self, sd: dict) -> None:
        self.question.load_state_dict(sd["question"])


class RandomCumulants:
    """Frozen random question network (default) or fresh U[-1, 1] draws per query."""

    meta_learned = False

    def __init__(self, num: int, mode: str = "fixed_random_net", resolution: int = 32, hidden: int = 32,
                 seed: int = 0):
        if mode not in ("fixed_random_net", "iid_uniform"):
            raise ConfigurationError(f"unknown random cumulant mode {mode!r}")
        self.num = num
        self.mode = mode
        self.net = None
        if mode == "fixed_random_net":
            self.net = meta_param_init("conv", seed, resolution=resolution, num_cumulants=num, hidden=hidden)
            self.net.requires_grad_(False)
        self.generator = torch.Generator().manual_seed(seed)

    def inputs(self, obs: torch.Tensor, bt=None) -> torch.Tensor:
        return obs

    def evaluate(self, inputs: torch.Tensor, params: Optional[dict] = None) -> torch.Tensor:
        if self.mode == "fixed_random_net":
            with torch.no_grad():
                return self.net.to(inputs.dtype)(inputs)
        u = torch.rand((inputs.shape[0], self.num), generator=self.generator, dtype=torch.float64)
        return (2.0 * u - 1.0).to(inputs.dtype)

    def state_dict(self) -> dict:
        return {"net": None if self.net is None else self.net.state_dict(),
                "generator": self.generator.get_state()}

    def load_state_dict(self, sd: dict) -> None:
        if self.net is not None:
            self.net.load_state_dict(sd["net"])
        self.generator.set_state(sd["generator"])


def random_cumulants(observations, source: RandomCumulants) -> list[np.ndarray]:
    """One cumulant vector per observation in ``observations``."""
    x = torch.as_tensor(np.asarray(observations), dtype=torch.float32)
    return list(source.evaluate(x).numpy())


class HandcraftedCumulants:
    """Privileged Collect Objects signals stored with each transition (red pickup + corridor occupancy)."""

    meta_learned = False

    def __init__(self, num: int = 5):
        self.num = num

    def inputs(self, obs: torch.Tensor, bt=None) -> torch.Tensor:
        if bt is None or bt.extras is None:
            raise ConfigurationError("hand-crafted cumulants need transitions recorded with extras")
        return bt.extras

    def evaluate(self, inputs: torch.Tensor, params: Optional[dict] = None) -> torch.Tensor:
        return inputs


def handcrafted_cumulants(env, transition=None) -> np.ndarray:
    """Cumulants for the environment's latest step (or a stored transition's extras)."""
    if transition is not None and getattr(transition, "extras", None) is not None:
        return np.asarray(transition.extras, dtype=np.float32)
    layout = getattr(env, "layout", None)
    if not isinstance(layout, GridLayout) or env.state is None:
        raise ConfigurationError("hand-crafted cumulants are only defined for Collect Objects")
    return handcrafted_features(layout, env.state.agent_position, env.last_pickup)


# ----------------------------------------------------------------------------- wiring

@dataclass
class Agent:
    variant: AgentVariant
    learner: Learner
    slot_trainer: Optional[SlotTrainer] = None

    @property
    def slot_model(self) -> Optional[SlotAutoencoder]:
        return None if self.slot_trainer is None else self.slot_trainer.model


def make_agent(variant, config: ExperimentConfig, num_actions: int, seed: int = 0,
               dtype=torch.float32) -> Agent:
    variant = get_variant(variant) if isinstance(variant, str) else variant
    if variant.cumulant_source == "handcrafted" and config.env != "collect_objects":
        raise ConfigurationError(f"{variant.id}: hand-crafted cumulants need env collect_objects, got {config.env}")
    if variant.cumulant_source == "handcrafted" and config.num_gvfs != 5:
        raise ConfigurationError(f"{variant.id}: hand-crafted cumulants define exactly 5 GVFs")
    if variant.uses_slots and config.sa_num_slots != config.num_gvfs:
        raise ConfigurationError("sa_num_slots must equal num_gvfs (one GVF per slot)")
    if config.sa_resolution % 4:
        raise ConfigurationError("sa_resolution must be divisible by 4")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        agent_cfg = AgentConfig(
            num_actions=num_actions,
            resolution=config.sa_resolution,
            num_gvfs=config.num_gvfs,
            gvf_kind=variant.gvf_kind,
            use_gvfs=variant.uses_gvfs,
            use_features=variant.use_features,
            use_layernorm=variant.use_layernorm,
            projection_dim=config.projection_dim,
            gvf_hidden=config.gvf_hidden,
            hidden_arch=tuple(config.hidden_arch),
        )
        net = AgentNet(agent_cfg)

        slot_trainer, source = None, None
        if variant.uses_slots:
            slot_model = SlotAutoencoder(SlotConfig(
                num_slots=config.sa_num_slots, slot_dim=config.slot_dim,
                num_iterations=config.sa_num_iterations, resolution=config.sa_resolution,
                init_mode=config.slot_init,
            ))
            slot_trainer = SlotTrainer(
                slot_model, base_lr=config.sa_learning_rate, warmup_steps=config.sa_warmup_steps,
                decay_rate=config.sa_decay_rate, decay_steps=config.sa_decay_steps,
                num_train_steps=config.sa_num_train_steps,
            )
            question = meta_param_init("slots", seed + 1, slot_dim=config.slot_dim, hidden=config.question_hidden)
            source = MetaSlotCumulants(slot_model, question)
        elif variant.cumulant_source == "meta_conv":
            question = meta_param_init("conv", seed + 1, resolution=config.sa_resolution,
                                       num_cumulants=config.num_gvfs, hidden=config.question_hidden)
            source = MetaConvCumulants(question, config.num_gvfs)
        elif variant.cumulant_source == "random":
            source = RandomCumulants(config.num_gvfs, config.random_cumulant_mode, config.sa_resolution,
                                     config.question_hidden, seed=seed + 2)
        elif variant.cumulant_source == "handcrafted":
            source = HandcraftedCumulants(config.num_gvfs)

    if source is not None and getattr(source, "question", None) is not None:
        source.question.to(dtype)
    if slot_trainer is not None:
        slot_trainer.model.to(dtype)

    learner = Learner(
        net, source,
        gamma=config.discount_factor, lr=config.learning_rate, target_period=config.target_period,
        unroll_steps=config.unroll_steps, meta_lr=config.meta_learning_rate,
        inner_optimizer=config.inner_optimizer, track=config.meta_track,
        outer_includes_gvf=config.outer_includes_gvf, cumulant_alignment=config.cumulant_alignment,
        dtype=dtype,
    )
    return Agent(variant, learner, slot_trainer)
