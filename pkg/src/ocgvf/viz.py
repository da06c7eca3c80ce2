"""Offline figures: learning curves, slot decompositions and GVF heatmaps over the gridworld."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from ocgvf.analysis import aggregate, curves_table, find_runs  # noqa: E402
from ocgvf.baselines import Agent  # noqa: E402
from ocgvf.errors import UnsupportedEnvError  # noqa: E402


def _agent(checkpoint) -> Agent:
    if isinstance(checkpoint, Agent):
        return checkpoint
    from ocgvf.trainer import restore_agent

    return restore_agent(checkpoint)[1]


# ----------------------------------------------------------------------------- curves

def plot_curves(run_dirs: Sequence, out) -> dict:
    """Mean eval return per variant with a shaded +/- standard error band.

    Writes ``out`` (PNG) and the aggregated numbers next to it as ``.csv``.
    """
    curves = aggregate(find_runs(run_dirs))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, c in sorted(curves.items()):
        ax.plot(c.episodes, c.mean, label=f"{variant} (n={c.num_seeds})")
        ax.fill_between(c.episodes, c.mean - c.se, c.mean + c.se, alpha=0.25)
    ax.set_xlabel("episode")
    ax.set_ylabel("greedy eval return")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=120)
    plt.close(fig)
    out.with_suffix(".csv").write_text(curves_table(curves))
    return curves


# ----------------------------------------------------------------------------- slots

def slot_panels(model, observations) -> np.ndarray:
    """[N, 2 + K, H, W, 3]: input, combined reconstruction, then each slot's masked reconstruction."""
    obs = torch.as_tensor(np.asarray(observations), dtype=next(model.parameters()).dtype)
    if obs.dim() == 3:
        obs = obs.unsqueeze(0)
    with torch.no_grad():
        out = model(obs)
    per_slot = out.masks.unsqueeze(-1) * out.per_slot_rgb
    panels = torch.cat([obs.unsqueeze(1), out.recon.unsqueeze(1), per_slot], dim=1)
    return panels.clamp(0.0, 1.0).numpy()


def plot_slots(checkpoint, observations, out=None) -> np.ndarray:
    agent = _agent(checkpoint)
    if agent.slot_model is None:
        raise UnsupportedEnvError(f"variant {agent.variant.id} has no slot model")
    panels = slot_panels(agent.slot_model, observations)
    if out is not None:
        n, cols = panels.shape[:2]
        fig, axes = plt.subplots(n, cols, figsize=(1.4 * cols, 1.4 * n), squeeze=False)
        titles = ["input", "recon"] + [f"slot {k}" for k in range(cols - 2)]
        for i in range(n):
            for j in range(cols):
                axes[i, j].imshow(panels[i, j], interpolation="nearest")
                axes[i, j].axis("off")
                if i == 0:
                    axes[i, j].set_title(titles[j], fontsize=7)
        fig.tight_layout()
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=120)
        plt.close(fig)
    return panels


# ----------------------------------------------------------------------------- heatmaps

@dataclass
class Heatmap:
    values: np.ndarray  # [K, H, W], NaN on walls
    slot_labels: Optional[list]  # dominant object color per slot (None without slots)
    object_slots: Optional[dict]  # object color -> slot with the largest mask overlap
    objects: list


def _slot_assignment(model, env, obs: np.ndarray, objects) -> tuple[list, dict]:
    x = torch.as_tensor(obs[None], dtype=next(model.parameters()).dtype)
    with torch.no_grad():
        masks = model(x).masks[0].numpy()  # [K, H, W]
    overlap = np.zeros((masks.shape[0], len(objects)))
    for j, obj in enumerate(objects):
        block = env.pixel_block(obj.position)
        overlap[:, j] = masks[:, block].mean(axis=1)
    labels = [objects[int(np.argmax(overlap[k]))].color for k in range(masks.shape[0])]
    object_slots = {}
    for j, obj in enumerate(objects):
        object_slots.setdefault(obj.color, int(np.argmax(overlap[:, j])))
    return labels, object_slots


def gvf_heatmap(checkpoint, env, objects=None, out=None) -> Heatmap:
    """Value of every GVF with the agent placed on each free cell, objects held fixed."""
    if not hasattr(env, "render_at") or not hasattr(env, "layout"):
        raise UnsupportedEnvError(f"{type(env).__name__} cannot render synthetic states")
    agent = _agent(checkpoint)
    net = agent.learner.agent
    if not net.config.use_gvfs:
        raise UnsupportedEnvError(f"variant {agent.variant.id} has no GVF heads")
    if objects is None:
        if env.state is None:
            env.reset()
        objects = env.state.objects
    objects = [o for o in objects if not o.collected]
    layout = env.layout
    cells = layout.free_cells()
    frames = np.stack([env.render_at(c, objects) for c in cells])
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        gvf = net(torch.as_tensor(frames, dtype=dtype)).gvf  # [N, K, 1 or A]
    v = gvf.max(dim=-1).values.numpy()
    values = np.full((v.shape[1], layout.height, layout.width), np.nan)
    for i, (r, c) in enumerate(cells):
        values[:, r, c] = v[i]
    labels = object_slots = None
    if agent.slot_model is not None and objects:
        labels, object_slots = _slot_assignment(agent.slot_model, env, env.render_at(layout.start_cell(), objects),
                                                objects)
    heat = Heatmap(values, labels, object_slots, list(objects))
    if out is not None:
        _draw_heatmap(heat, out)
    return heat


def _draw_heatmap(heat: Heatmap, out) -> None:
    k = heat.values.shape[0]
    fig, axes = plt.subplots(1, k, figsize=(2.4 * k, 2.6), squeeze=False)
    for i in range(k):
        ax = axes[0, i]
        im = ax.imshow(heat.values[i], cmap="viridis")
        for obj in heat.objects:
            ax.text(obj.position[1], obj.position[0], obj.color[0].upper(), ha="center", va="center",
                    color="white", fontsize=8)
        label = f" ({heat.slot_labels[i]})" if heat.slot_labels else ""
        ax.set_title(f"GVF {i}{label}", fontsize=8)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)


def neighborhood_contrast(values: np.ndarray, cell: Union[tuple, list]) -> float:
    """Mean over the 3x3 neighbourhood of ``cell`` minus the mean over all free cells (NaN = wall)."""
    r, c = cell
    patch = values[max(r - 1, 0): r + 2, max(c - 1, 0): c + 2]
    return float(np.nanmean(patch) - np.nanmean(values))
