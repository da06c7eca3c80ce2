from ocgvf.envs.adapters import EnvSpec, LevelSchedule, make_env, preprocess, set_level_sequence
from ocgvf.envs.collect_objects import (
    DEFAULT_OBJECTS,
    TWO_OBJECTS,
    Action,
    CollectObjects,
    GridLayout,
    ObjectSpec,
    ObjectState,
    TaskSpec,
    handcrafted_features,
)

__all__ = [
    "Action",
    "CollectObjects",
    "DEFAULT_OBJECTS",
    "EnvSpec",
    "GridLayout",
    "LevelSchedule",
    "ObjectSpec",
    "ObjectState",
    "TWO_OBJECTS",
    "TaskSpec",
    "handcrafted_features",
    "make_env",
    "preprocess",
    "set_level_sequence",
]
