"""Named experiment suites: each preset expands into one config per (setting, variant)."""

from __future__ import annotations

from dataclasses import dataclass

from ocgvf.config import ExperimentConfig
from ocgvf.errors import ConfigurationError

DEFAULT_SEEDS = list(range(10))

_CO_STATIONARY = dict(env="collect_objects", mode="stationary")
_CO_NONSTATIONARY = dict(env="collect_objects", mode="nonstationary", respawn_period=1)
_CO_TRANSFER = dict(env="collect_objects", mode="transfer", transfer_episode=4000)
_COINRUN_LEVEL0 = dict(env="coinrun", level_schedule="fixed", levels=[0])
_COINRUN_SEQUENCE = dict(env="coinrun", level_schedule="sequence", levels=[0, 2, 3], switch_episodes=[3000, 4000])
_MINIGRID = dict(env="minigrid_dynamic_obstacles")


def _coinrun_sampler(mode: str) -> dict:
    # new level every episode, drawn from levels 0..49
    return dict(env="coinrun", level_schedule="sampler", levels=[0], num_levels=50, distribution_mode=mode)


_LADDER = ["ddqn", "random_gvf", "hc_gvf", "dis_aux_gvf", "oc_gvf"]
_LADDER_PIXELS = ["ddqn", "random_gvf", "dis_aux_gvf", "oc_gvf"]  # no hand-crafted cumulants outside the gridworld
_PLUS = ["random_gvf_plus", "hc_gvf_plus", "dis_aux_gvf_plus", "oc_gvf"]
_PLUS_PIXELS = ["random_gvf_plus", "dis_aux_gvf_plus", "oc_gvf"]

# preset -> list of (setting tag, env overrides, variants)
PRESETS: dict[str, list[tuple[str, dict, list[str]]]] = {
    "fig2a": [("co_stationary", _CO_STATIONARY, _LADDER)],
    "fig2a-two": [("co_stationary_two", dict(_CO_STATIONARY, objects="two"), _LADDER)],
    "fig2b": [("coinrun_level0", _COINRUN_LEVEL0, _LADDER_PIXELS)],
    "fig3a": [("co_nonstationary", _CO_NONSTATIONARY, _LADDER + ["random_gvf_plus"])],
    "fig3b": [("minigrid", _MINIGRID, _LADDER_PIXELS)],
    "fig4-easy": [("coinrun_easy", _coinrun_sampler("easy"), _LADDER_PIXELS)],
    "fig4-hard": [("coinrun_hard", _coinrun_sampler("hard"), _LADDER_PIXELS)],
    "fig6": [("co_nonstationary", _CO_NONSTATIONARY, ["oc_gvf", "oc_gvf_no_layernorm"])],
    "fig8": [("co_nonstationary", _CO_NONSTATIONARY, ["oc_gvf", "oc_gvf_no_features"])],
    "appC1-co": [("co_transfer", _CO_TRANSFER, _LADDER)],
    "appC1-cr": [("coinrun_transfer", _COINRUN_SEQUENCE, _LADDER_PIXELS)],
    "appC3": [
        ("co_stationary", _CO_STATIONARY, _PLUS),
        ("co_nonstationary", _CO_NONSTATIONARY, _PLUS),
        ("minigrid", _MINIGRID, _PLUS_PIXELS),
    ],
    "appC4": [("co_nonstationary", _CO_NONSTATIONARY, [
        "random_gvf", "hc_gvf", "dis_aux_gvf",
        "random_gvf_plus", "hc_gvf_plus", "dis_aux_gvf_plus",
        "oc_gvf", "oc_gvf_action_values",
    ])],
}


@dataclass
class PresetRun:
    preset: str
    setting: str
    config: ExperimentConfig

    @property
    def name(self) -> str:
        return f"{self.setting}/{self.config.algo}"


def expand_preset(name: str, seeds=None, **overrides) -> list[PresetRun]:
    """Configs for every run of a preset; ``overrides`` apply on top of the environment defaults."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    runs = []
    for setting, env_overrides, variants in PRESETS[name]:
        for variant in variants:
            values = dict(env_overrides, algo=variant, seeds=list(seeds) if seeds else list(DEFAULT_SEEDS))
            values.update(overrides)
            runs.append(PresetRun(name, setting, ExperimentConfig.from_dict(values, source=f"preset {name}")))
    return runs
