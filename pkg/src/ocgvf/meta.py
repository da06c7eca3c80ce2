"""Inner TD updates of the main network and meta-gradient updates of the question network.

The inner loop takes one optimiser step per environment step on
``gvf_loss + ddqn_loss``. Each step is recorded (parameter snapshot, optimiser
state, minibatch, cumulant inputs) in a trace capped at ``unroll_steps`` entries.
At the end of an episode the recorded steps are replayed functionally with the
question-network parameters live, so that the control loss reached after each
replayed step can be differentiated back to them through the inner updates.
Only the ``tracked`` parameter subset carries that dependence; every other
parameter follows its recorded trajectory as a constant.
"""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from ocgvf.agent import AgentNet, ddqn_loss, greedy_action, gvf_loss, gvf_predictions, run
from ocgvf.errors import TrainingAborted
from ocgvf.replay import Batch

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
# keeps d sqrt(v)/dv finite on the differentiable path
ADAM_EPS_ROOT = 1e-16


@dataclass
class BatchTensors:
    s: torch.Tensor
    a: torch.Tensor
    r: torch.Tensor
    s_next: torch.Tensor
    done: torch.Tensor
    extras: Optional[torch.Tensor] = None

    @classmethod
    def from_batch(cls, batch: Batch, dtype=torch.float32) -> "BatchTensors":
        return cls(
            s=torch.as_tensor(batch.s, dtype=dtype),
            a=torch.as_tensor(batch.a, dtype=torch.int64),
            r=torch.as_tensor(batch.r, dtype=dtype),
            s_next=torch.as_tensor(batch.s_next, dtype=dtype),
            done=torch.as_tensor(batch.done, dtype=dtype),
            extras=None if batch.extras is None else torch.as_tensor(batch.extras, dtype=dtype),
        )


@dataclass
class OptState:
    m: dict
    v: dict
    t: int = 0


def zero_opt_state(params: dict) -> OptState:
    return OptState({n: torch.zeros_like(p) for n, p in params.items()},
                    {n: torch.zeros_like(p) for n, p in params.items()}, 0)


def optimizer_step(kind: str, params: dict, grads: dict, state: OptState, lr: float):
    """One SGD or Adam step as a pure function of its inputs (graph-preserving)."""
    if kind == "sgd":
        new = {n: (p - lr * grads[n]) if grads.get(n) is not None else p for n, p in params.items()}
        return new, OptState(state.m, state.v, state.t + 1)
    b1, b2 = ADAM_BETAS
    t = state.t + 1
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new, m, v = {}, dict(state.m), dict(state.v)
    for n, p in params.items():
        g = grads.get(n)
        if g is None:
            new[n] = p
            continue
        m[n] = b1 * state.m[n] + (1.0 - b1) * g
        v[n] = b2 * state.v[n] + (1.0 - b2) * g * g
        new[n] = p - lr * (m[n] / c1) / (torch.sqrt(v[n] / c2 + ADAM_EPS_ROOT) + ADAM_EPS)
    return new, OptState(m, v, t)


@dataclass
class TraceRecord:
    params: dict  # detached snapshot before the update
    opt: OptState  # optimiser state before the update (tracked entries only)
    batch: BatchTensors
    cum_inputs: torch.Tensor
    target: dict


def epsilon_at(episode: int, begin: float, end: float, frac: float, train_episodes: int) -> float:
    """Linear decay over the first ``frac`` of training episodes, then constant."""
    horizon = frac * train_episodes
    if horizon <= 0:
        return end
    return begin + (end - begin) * min(1.0, episode / horizon)


class Learner:
    """Owns the main network, its target copy, the optimiser state and the question network's meta-optimiser.

    Args:
        agent: main network.
        source: cumulant source (see :mod:`ocgvf.baselines`); ``None`` for plain DDQN.
        track: "auto", "all", "heads" or "heads+encoder"; parameters whose
            dependence on the question network is kept through the inner updates.
    """

    def __init__(self, agent: AgentNet, source=None, *, gamma: float = 0.99, lr: float = 1e-4,
                 target_period: int = 100, unroll_steps: int = 10, meta_lr: float = 1e-4,
                 inner_optimizer: str = "adam", track: str = "auto", outer_includes_gvf: bool = False,
                 cumulant_alignment: str = "state", dtype=torch.float32):
        if inner_optimizer not in ("adam", "sgd"):
            raise ValueError(f"inner_optimizer must be 'adam' or 'sgd', got {inner_optimizer!r}")
        if cumulant_alignment not in ("state", "next"):
            raise ValueError("cumulant_alignment must be 'state' or 'next'")
        if agent.config.use_gvfs and source is None:
            raise ValueError("an agent with GVF heads needs a cumulant source")
        self.agent = agent.to(dtype)
        self.source = source
        self.dtype = dtype
        self.gamma = gamma
        self.lr = lr
        self.target_period = target_period
        self.unroll_steps = unroll_steps
        self.inner_optimizer = inner_optimizer
        self.outer_includes_gvf = outer_includes_gvf
        self.cumulant_alignment = cumulant_alignment
        self.params = dict(agent.named_parameters())
        self.target = {n: p.detach().clone() for n, p in self.params.items()}
        self.opt_state = zero_opt_state({n: p.detach() for n, p in self.params.items()})
        self.updates = 0
        self.trace: deque[TraceRecord] = deque(maxlen=unroll_steps)
        self.tracked = self._tracked_names(track)
        self.meta_learned = bool(source is not None and getattr(source, "meta_learned", False))
        self.meta_opt = (
            torch.optim.Adam(source.question.parameters(), lr=meta_lr) if self.meta_learned else None
        )

    def _tracked_names(self, track: str) -> list[str]:
        names = list(self.params)
        heads = [n for n in names if n.startswith(("gvf_heads.", "projection."))]
        encoder = [n for n in names if n.startswith("encoder.")]
        if track == "auto":
            track = "heads" if self.agent.fused else "heads+encoder"
        if track == "all":
            return names
        if track == "heads":
            return heads
        if track == "heads+encoder":
            return heads + encoder
        raise ValueError(f"unknown track mode {track!r}")

    # ------------------------------------------------------------------ acting
    def q_values(self, obs: np.ndarray) -> torch.Tensor:
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(obs), dtype=self.dtype)
            if x.dim() == len(self.obs_shape_hint()):
                x = x.unsqueeze(0)
            return self.agent(x).q

    def obs_shape_hint(self) -> tuple:
        cfg = self.agent.config
        if cfg.input_dim is not None:
            return (cfg.input_dim,)
        return (cfg.resolution, cfg.resolution, 3)

    def act(self, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        explore = rng.random() < epsilon
        if explore:
            return int(rng.integers(self.agent.config.num_actions))
        return int(greedy_action(self.q_values(obs))[0])

    # ------------------------------------------------------------------ losses
    def cumulant_inputs(self, bt: BatchTensors) -> Optional[torch.Tensor]:
        if self.source is None:
            return None
        obs = bt.s if self.cumulant_alignment == "state" else bt.s_next
        with torch.no_grad():
            return self.source.inputs(obs, bt)

    def losses(self, params: dict, bt: BatchTensors, cum: Optional[torch.Tensor], target: dict):
        n = bt.s.shape[0]
        out = run(self.agent, params, torch.cat([bt.s, bt.s_next]))
        with torch.no_grad():
            q_next_target = run(self.agent, target, bt.s_next).q
        q = out.q
        dl = ddqn_loss(q[:n], bt.a, bt.r, q[n:], q_next_target, bt.done, self.gamma)
        if out.gvf is None or cum is None:
            return torch.zeros((), dtype=q.dtype), dl
        v_s, v_next = gvf_predictions(out.gvf[:n], out.gvf[n:], bt.a)
        return gvf_loss(v_s, v_next, cum, bt.done, self.gamma), dl

    # ------------------------------------------------------------------ updates
    def inner_update(self, batch: Optional[Batch]) -> Optional[dict]:
        """One optimiser step on gvf_loss + ddqn_loss; ``None`` when the batch is not ready."""
        if batch is None:
            return None
        bt = batch if isinstance(batch, BatchTensors) else BatchTensors.from_batch(batch, self.dtype)
        cum_inputs = self.cumulant_inputs(bt)
        cum = None
        if cum_inputs is not None:
            with torch.no_grad():
                cum = self.source.evaluate(cum_inputs)
        gl, dl = self.losses(self.params, bt, cum, self.target)
        loss = gl + dl
        if not torch.isfinite(loss):
            raise TrainingAborted(f"non-finite loss (gvf={float(gl.detach())}, ddqn={float(dl.detach())})")
        if self.meta_learned:
            self.trace.append(TraceRecord(
                params={k: p.detach().clone() for k, p in self.params.items()},
                opt=OptState({k: self.opt_state.m[k].clone() for k in self.tracked},
                             {k: self.opt_state.v[k].clone() for k in self.tracked}, self.opt_state.t),
                batch=bt,
                cum_inputs=cum_inputs,
                target=self.target,
            ))
        names = list(self.params)
        grads = torch.autograd.grad(loss, [self.params[k] for k in names], allow_unused=True)
        grads = dict(zip(names, grads))
        with torch.no_grad():
            current = {k: p.detach() for k, p in self.params.items()}
            new, self.opt_state = optimizer_step(self.inner_optimizer, current, grads, self.opt_state, self.lr)
            for k, p in self.params.items():
                p.copy_(new[k])
        self.updates += 1
        if self.updates % self.target_period == 0:
            self.sync_target()
        return {"gvf_loss": float(gl.detach()), "ddqn_loss": float(dl.detach())}

    def sync_target(self) -> None:
        self.target = {n: p.detach().clone() for n, p in self.params.items()}

    def meta_loss_terms(self, params: dict, seg: BatchTensors, eta: Optional[dict]) -> torch.Tensor:
        """Control loss of the main network on an unrolled segment (plus GVF loss if configured)."""
        cum = None
        if self.outer_includes_gvf:
            cum = self.source.evaluate(self.cumulant_inputs(seg), eta)
        gl, dl = self.losses(params, seg, cum, self.target)
        return dl + gl if self.outer_includes_gvf else dl

    def _replay_grads(self, params: dict, wrt: list, rec: TraceRecord, cum: torch.Tensor):
        """Inner-step gradient with the graph kept for a second derivative.

        The TD target is excluded from differentiation w.r.t. the main network
        (semi-gradient), but its value still depends on earlier replayed steps and
        hence on the question parameters. Writing the GVF term as a vector-Jacobian
        product keeps that dependence, which detaching the target would cut.
        """
        bt = rec.batch
        n = bt.s.shape[0]
        out = run(self.agent, params, torch.cat([bt.s, bt.s_next]))
        with torch.no_grad():
            q_next_target = run(self.agent, rec.target, bt.s_next).q
        dl = ddqn_loss(out.q[:n], bt.a, bt.r, out.q[n:], q_next_target, bt.done, self.gamma)
        outputs, weights = [dl], [torch.ones_like(dl)]
        if out.gvf is not None and cum is not None:
            v_s, v_next = gvf_predictions(out.gvf[:n], out.gvf[n:], bt.a)
            target = cum + self.gamma * (1.0 - bt.done.to(v_s.dtype)).unsqueeze(-1) * v_next
            outputs.append(v_s)
            weights.append(-2.0 * (target - v_s) / v_s.numel())
        # outputs that do not depend on the tracked parameters contribute nothing
        live = [i for i, o in enumerate(outputs) if o.requires_grad]
        if not live:
            return [None] * len(wrt)
        return torch.autograd.grad([outputs[i] for i in live], wrt, grad_outputs=[weights[i] for i in live],
                                   create_graph=True, allow_unused=True)

    def meta_gradient(self, segment) -> dict:
        """Gradient of the summed post-update control loss w.r.t. the question network."""
        question = self.source.question
        eta = dict(question.named_parameters())
        zeros = {n: torch.zeros_like(p) for n, p in eta.items()}
        records = list(self.trace)
        if not records:
            return zeros
        seg = segment if isinstance(segment, BatchTensors) else BatchTensors.from_batch(segment, self.dtype)
        tracked = self.tracked
        fast = {n: records[0].params[n].clone().requires_grad_(True) for n in tracked}
        opt = records[0].opt
        live = {n: p.detach() for n, p in self.params.items()}
        total = None
        for j, rec in enumerate(records):
            params_j = dict(rec.params)
            params_j.update(fast)
            cum = self.source.evaluate(rec.cum_inputs, eta)
            grads = self._replay_grads(params_j, [fast[n] for n in tracked], rec, cum)
            fast, opt = optimizer_step(self.inner_optimizer, fast, dict(zip(tracked, grads)), opt, self.lr)
            after = dict(records[j + 1].params if j + 1 < len(records) else live)
            after.update(fast)
            term = self.meta_loss_terms(after, seg, eta)
            total = term if total is None else total + term
        if total is None or not total.requires_grad:
            return zeros
        names = list(eta)
        grads = torch.autograd.grad(total, [eta[n] for n in names], allow_unused=True)
        return {n: zeros[n] if g is None else g for n, g in zip(names, grads)}

    def meta_update(self, segment) -> Optional[float]:
        """Step the question network on the traced inner updates, then clear the trace."""
        if not self.meta_learned or not self.trace or segment is None:
            self.trace.clear()
            return None
        grads = self.meta_gradient(segment)
        norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        if not math.isfinite(norm):
            self.trace.clear()
            raise TrainingAborted("non-finite meta-gradient")
        self.meta_opt.zero_grad(set_to_none=True)
        for n, p in self.source.question.named_parameters():
            p.grad = grads[n].detach()
        self.meta_opt.step()
        self.trace.clear()
        return norm

    # ------------------------------------------------------------------ checkpoints
    def state_dict(self) -> dict:
        sd = {
            "params": {n: p.detach().clone() for n, p in self.params.items()},
            "target": {n: t.clone() for n, t in self.target.items()},
            "opt": {"m": dict(self.opt_state.m), "v": dict(self.opt_state.v), "t": self.opt_state.t},
            "updates": self.updates,
        }
        if self.source is not None and hasattr(self.source, "state_dict"):
            sd["source"] = self.source.state_dict()
        if self.meta_opt is not None:
            sd["meta_opt"] = self.meta_opt.state_dict()
        # state_dict() hands out live tensors; a copy keeps in-memory snapshots independent
        return copy.deepcopy(sd)

    def load_state_dict(self, sd: dict) -> None:
        with torch.no_grad():
            for n, p in self.params.items():
                p.copy_(sd["params"][n])
        self.target = {n: t.clone() for n, t in sd["target"].items()}
        self.opt_state = OptState(dict(sd["opt"]["m"]), dict(sd["opt"]["v"]), sd["opt"]["t"])
        self.updates = sd["updates"]
        if "source" in sd:
            self.source.load_state_dict(sd["source"])
        if self.meta_opt is not None and "meta_opt" in sd:
            self.meta_opt.load_state_dict(sd["meta_opt"])
        self.trace.clear()
