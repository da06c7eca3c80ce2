"""Four-room pixel gridworld where coloured objects must be collected in order.

Red objects give +5, the blue object gives +10 and ends the episode once a red
object has been collected. Green objects (and blue ones picked up too early)
are consumed silently.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from ocgvf.errors import ConfigurationError, UsageError

Cell = tuple[int, int]

MODES = ("stationary", "nonstationary", "transfer")
COLORS = ("red", "blue", "green")


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


_MOVES = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}

# uint8 palette; observations are palette / 255 so renders are bit-exact
PALETTE = {
    "background": (64, 64, 64),
    "wall": (0, 0, 0),
    "agent": (255, 255, 255),
    "red": (255, 0, 0),
    "blue": (0, 0, 255),
    "green": (0, 255, 0),
}

REWARD_RED = 5.0
REWARD_BLUE = 10.0


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    wall_mask: np.ndarray
    corridor_cells: tuple[Cell, ...]
    room_assignment: np.ndarray  # -1 for walls and corridors

    @classmethod
    def four_rooms(cls, size: int = 11) -> "GridLayout":
        """Symmetric four-room layout: outer wall plus a cross of walls with one doorway per room pair.

        Rooms are numbered 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
        """
        if size < 7 or size % 2 == 0:
            raise ConfigurationError(f"four-room grid size must be odd and >= 7, got {size}")
        mid = size // 2
        walls = np.zeros((size, size), dtype=bool)
        walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = True
        walls[mid, :] = True
        walls[:, mid] = True
        near, far = (mid + 1) // 2, mid + (mid + 1) // 2
        # ordered: top (0-1), left (0-2), right (1-3), bottom (2-3)
        corridors = ((near, mid), (mid, near), (mid, far), (far, mid))
        for r, c in corridors:
            walls[r, c] = False
        rooms = np.full((size, size), -1, dtype=np.int64)
        for r in range(size):
            for c in range(size):
                if walls[r, c] or (r, c) in corridors:
                    continue
                rooms[r, c] = 2 * int(r > mid) + int(c > mid)
        return cls(size, size, walls, corridors, rooms)

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def is_wall(self, cell: Cell) -> bool:
        return (not self.in_bounds(cell)) or bool(self.wall_mask[cell])

    def free_cells(self) -> list[Cell]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(~self.wall_mask))]

    def room_cells(self, room: int) -> list[Cell]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(self.room_assignment == room))]

    def start_cell(self) -> Cell:
        """Bottom-left non-wall cell."""
        for r in range(self.height - 1, -1, -1):
            for c in range(self.width):
                if not self.wall_mask[r, c]:
                    return (r, c)
        raise ConfigurationError("layout has no free cell")


@dataclass
class ObjectState:
    color: str
    position: Cell
    home_room: int
    collected: bool = False


@dataclass
class EnvState:
    agent_position: Cell
    objects: list[ObjectState]
    step_count: int = 0
    red_collected_flag: bool = False
    done: bool = False


@dataclass(frozen=True)
class ObjectSpec:
    color: str
    home_room: int
    position: Optional[Cell] = None  # None: sampled inside home_room


@dataclass(frozen=True)
class TaskSpec:
    add: tuple[ObjectSpec, ...] = ()
    remove: tuple[str, ...] = ()
    respawn_period: Optional[int] = None


DEFAULT_OBJECTS = (
    ObjectSpec("red", 0, (2, 2)),
    ObjectSpec("blue", 1, (2, 8)),
    ObjectSpec("green", 3, (8, 8)),
)
TWO_OBJECTS = DEFAULT_OBJECTS[:2]


class CollectObjects:
    """Seedable Collect Objects environment.

    Args:
        objects: object specs; in stationary mode every spec needs a position.
        mode: "stationary", "nonstationary" or "transfer".
        resolution: side length of the square RGB observation.
        max_steps: episode step limit.
        respawn_period: in non-stationary mode, object positions are resampled
            every ``respawn_period`` episodes.
        seed: seed for the episode RNG.
    """

    num_actions = len(Action)

    def __init__(
        self,
        objects: Sequence[ObjectSpec] = DEFAULT_OBJECTS,
        mode: str = "stationary",
        resolution: int = 32,
        max_steps: int = 100,
        respawn_period: int = 1,
        grid_size: int = 11,
        seed: int = 0,
    ):
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
        if respawn_period < 1:
            raise ConfigurationError("respawn_period must be >= 1")
        self.layout = GridLayout.four_rooms(grid_size)
        self.mode = mode
        self.resolution = resolution
        self.max_steps = max_steps
        self.respawn_period = respawn_period
        self._specs = list(objects)
        self._validate_specs(self._specs)
        self._rng = np.random.default_rng(seed)
        self._episode = 0
        self._positions: list[Cell] = []
        self.state: Optional[EnvState] = None
        self.last_pickup: Optional[str] = None
        # nearest-neighbour index map from pixels to cells
        self._rows = (np.arange(resolution) * self.layout.height) // resolution
        self._cols = (np.arange(resolution) * self.layout.width) // resolution

    # ------------------------------------------------------------------ setup
    def _validate_specs(self, specs: Sequence[ObjectSpec]) -> None:
        start = self.layout.start_cell()
        seen = set()
        for spec in specs:
            if spec.color not in COLORS:
                raise ConfigurationError(f"unknown object color {spec.color!r}")
            if not 0 <= spec.home_room < 4:
                raise ConfigurationError(f"home_room must be in 0..3, got {spec.home_room}")
            if spec.position is None:
                if self.mode == "stationary":
                    raise ConfigurationError(f"stationary mode needs a fixed position for {spec.color}")
                continue
            pos = tuple(spec.position)
            if self.layout.is_wall(pos):
                raise ConfigurationError(f"{spec.color} object placed on wall cell {pos}")
            if pos in self.layout.corridor_cells:
                raise ConfigurationError(f"{spec.color} object placed on corridor cell {pos}")
            if pos == start:
                raise ConfigurationError(f"{spec.color} object placed on the agent start cell")
            if pos in seen:
                raise ConfigurationError(f"two objects share cell {pos}")
            seen.add(pos)

    def set_task(self, task: TaskSpec) -> None:
        """Change the object set / respawn period used by subsequent resets."""
        specs = [s for s in self._specs if s.color not in task.remove]
        taken = {s.position for s in specs if s.position is not None}
        for spec in task.add:
            if spec.position is None and self.mode != "nonstationary":
                # fixed for the rest of the task
                cell = self._sample_cell(spec.home_room, taken)
                spec = replace(spec, position=cell)
            specs.append(spec)
            if spec.position is not None:
                taken.add(spec.position)
        self._validate_specs(specs)
        self._specs = specs
        if task.respawn_period is not None:
            if task.respawn_period < 1:
                raise ConfigurationError("respawn_period must be >= 1")
            self.respawn_period = task.respawn_period
        # force a fresh draw on the next reset
        self._positions = []

    @property
    def object_specs(self) -> list[ObjectSpec]:
        return list(self._specs)

    def _sample_cell(self, room: int, taken: set) -> Cell:
        start = self.layout.start_cell()
        cells = [c for c in self.layout.room_cells(room) if c not in taken and c != start]
        if not cells:
            raise ConfigurationError(f"no free cell left in room {room}")
        return cells[int(self._rng.integers(len(cells)))]

    def _draw_positions(self) -> list[Cell]:
        resample = self.mode == "nonstationary"
        taken = set() if resample else {s.position for s in self._specs if s.position is not None}
        out = []
        for spec in self._specs:
            if spec.position is not None and not resample:
                out.append(spec.position)
            else:
                cell = self._sample_cell(spec.home_room, taken)
                taken.add(cell)
                out.append(cell)
        return out

    # ------------------------------------------------------------- dynamics
    def reset(self, seed: Optional[int] = None, mode: Optional[str] = None) -> np.ndarray:
        if mode is not None and mode != self.mode:
            if mode not in MODES:
                raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
            self.mode = mode
            self._validate_specs(self._specs)
            self._positions = []
        if seed is not None:
            self._rng = np.random.default_rng(seed)
            self._episode = 0
            self._positions = []
        if self.mode == "nonstationary":
            if not self._positions or self._episode % self.respawn_period == 0:
                self._positions = self._draw_positions()
        elif not self._positions:
            self._positions = self._draw_positions()
        self._episode += 1
        objects = [
            ObjectState(s.color, pos, s.home_room) for s, pos in zip(self._specs, self._positions)
        ]
        self.state = EnvState(self.layout.start_cell(), objects)
        self.last_pickup = None
        return self.render_state(self.state)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        st = self.state
        if st is None:
            raise UsageError("step() called before reset()")
        if st.done:
            raise UsageError("step() called after the episode finished; call reset()")
        dr, dc = _MOVES[Action(int(action))]
        target = (st.agent_position[0] + dr, st.agent_position[1] + dc)
        if not self.layout.is_wall(target):
            st.agent_position = target
        st.step_count += 1
        reward = 0.0
        self.last_pickup = None
        for obj in st.objects:
            if obj.collected or obj.position != st.agent_position:
                continue
            obj.collected = True
            self.last_pickup = obj.color
            if obj.color == "red":
                reward += REWARD_RED
                st.red_collected_flag = True
            elif obj.color == "blue" and st.red_collected_flag:
                reward += REWARD_BLUE
                st.done = True
        if st.step_count >= self.max_steps:
            st.done = True
        return self.render_state(st), reward, st.done

    # ------------------------------------------------------------- rendering
    def cell_colors(self, state: EnvState) -> np.ndarray:
        grid = np.empty((self.layout.height, self.layout.width, 3), dtype=np.uint8)
        grid[:] = PALETTE["background"]
        grid[self.layout.wall_mask] = PALETTE["wall"]
        for obj in state.objects:
            if not obj.collected:
                grid[obj.position] = PALETTE[obj.color]
        grid[state.agent_position] = PALETTE["agent"]
        return grid

    def render_state(self, state: EnvState) -> np.ndarray:
        grid = self.cell_colors(state)
        pixels = grid[self._rows[:, None], self._cols[None, :]]
        return pixels.astype(np.float32) / 255.0

    def render_at(self, agent_position: Cell, objects: Optional[Sequence[ObjectState]] = None) -> np.ndarray:
        """Render a synthetic state without touching the live episode."""
        agent_position = tuple(int(v) for v in agent_position)
        if self.layout.is_wall(agent_position):
            raise ValueError(f"agent position {agent_position} is a wall cell")
        if objects is None:
            if self.state is not None:
                objects = self.state.objects
            else:
                objects = [
                    ObjectState(s.color, pos, s.home_room)
                    for s, pos in zip(self._specs, self._draw_positions_peek())
                ]
        state = EnvState(agent_position, copy.deepcopy(list(objects)))
        return self.render_state(state)

    def _draw_positions_peek(self) -> list[Cell]:
        if self._positions:
            return list(self._positions)
        missing = [s.color for s in self._specs if s.position is None]
        if missing:
            raise UsageError(f"objects {missing} have no position yet; reset() first or pass objects")
        return [s.position for s in self._specs]

    def pixel_block(self, cell: Cell) -> np.ndarray:
        """Boolean H x W mask of the pixels rendered from ``cell``."""
        return (self._rows[:, None] == cell[0]) & (self._cols[None, :] == cell[1])

    # ---------------------------------------------------------- checkpoints
    def get_state(self) -> dict:
        return {
            "rng": self._rng.bit_generator.state,
            "episode": self._episode,
            "positions": list(self._positions),
            "specs": list(self._specs),
            "respawn_period": self.respawn_period,
            "mode": self.mode,
            "state": copy.deepcopy(self.state),
        }

    def set_state(self, snap: dict) -> None:
        self._rng.bit_generator.state = snap["rng"]
        self._episode = snap["episode"]
        self._positions = list(snap["positions"])
        self._specs = list(snap["specs"])
        self.respawn_period = snap["respawn_period"]
        self.mode = snap["mode"]
        self.state = copy.deepcopy(snap["state"])


def handcrafted_features(layout: GridLayout, agent_position: Cell, picked: Optional[str]) -> np.ndarray:
    """Red-goal pickup indicator followed by one occupancy indicator per corridor cell."""
    c = np.zeros(1 + len(layout.corridor_cells), dtype=np.float32)
    c[0] = float(picked == "red")
    for i, cell in enumerate(layout.corridor_cells):
        c[1 + i] = float(tuple(agent_position) == cell)
    return c
