"""Gridworld tasks rendered as egocentric RGB views.

GhostRun: agents avoid randomly drifting ghosts on an open grid scattered
with trees and obstacles.  Team reward each step is minus the number of
(agent, visible ghost) pairs, minus a step cost of 1, so standing out of
sight of every ghost costs exactly 1 per step.

MazeCleaners: two agents sweep a fixed maze; every floor cell starts dirty
and moving into a dirty cell cleans it for +1 team reward.  The episode
ends when the maze is clean or the step budget runs out.

Both tasks move entities in index order within a step; a move into a wall,
tree, obstacle, grid edge, or any occupied cell is a no-op.  Observations
are (2 * view_radius + 1)-square RGB windows centred on each agent, with
cells beyond the grid painted a dedicated border colour.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InvariantError

FLOOR, WALL, OBSTACLE, TREE = 0, 1, 2, 3

COLOR_FLOOR = (255, 255, 255)
COLOR_WALL = (0, 0, 0)
COLOR_OBSTACLE = (0, 0, 0)
COLOR_TREE = (0, 128, 0)
COLOR_DIRTY = (0, 255, 0)
COLOR_GHOST = (255, 0, 0)
COLOR_AGENT = (0, 0, 255)
COLOR_BORDER = (128, 128, 128)

TERRAIN_COLORS = {FLOOR: COLOR_FLOOR, WALL: COLOR_WALL,
                  OBSTACLE: COLOR_OBSTACLE, TREE: COLOR_TREE}

# actions: 0 up, 1 down, 2 left, 3 right (row grows downward)
ACTION_DELTAS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])

OOD_LAYOUT_SHIFT = 104729


@dataclass(frozen=True)
class GhostRunConfig:
    grid_h: int = 20
    grid_w: int = 20
    n_agents: int = 3
    n_ghosts: int = 3
    n_trees: int = 5
    n_obstacles: int = 5
    view_radius: int = 3
    max_steps: int = 100
    count_unique_ghosts: bool = False
    layout_seed: int | None = None

    def validate(self) -> None:
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError(f"grid {self.grid_h} x {self.grid_w} is empty")
        if self.n_agents < 1:
            raise ConfigError("need at least one agent")
        if min(self.n_ghosts, self.n_trees, self.n_obstacles) < 0:
            raise ConfigError("entity counts cannot be negative")
        if self.view_radius < 1:
            raise ConfigError(f"view_radius must be at least 1, got {self.view_radius}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, got {self.max_steps}")
        total = self.n_agents + self.n_ghosts + self.n_trees + self.n_obstacles
        if total > self.grid_h * self.grid_w:
            raise ConfigError(f"{total} entities cannot fit a "
                              f"{self.grid_h} x {self.grid_w} grid")


@dataclass(frozen=True)
class MazeConfig:
    map_path: str | None = None
    random_spawn: bool = False
    view_radius: int = 3
    max_steps: int = 200

    def validate(self) -> None:
        if self.view_radius < 1:
            raise ConfigError(f"view_radius must be at least 1, got {self.view_radius}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, got {self.max_steps}")


@dataclass
class EnvState:
    kind: str
    config: object
    terrain: np.ndarray
    agent_pos: np.ndarray
    ghost_pos: np.ndarray
    dirty: np.ndarray
    rng: np.random.Generator
    step_count: int = 0
    done: bool = False
    cleaned_total: int = 0


@dataclass
class StepResult:
    observations: list
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# maze map loading


def load_maze_map(path: str | None = None):
    """Parse a maze text map into (terrain, spawn positions).

    '#' is wall, '.' floor, letters are spawn cells in alphabetical order.
    Every non-wall cell must be reachable from every other.
    """
    if path is None:
        text = (importlib.resources.files("asnet") / "data" / "maze_13x13.txt").read_text()
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise ConfigError("maze map is empty")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise ConfigError("maze map rows have unequal lengths")
    terrain = np.zeros((len(lines), width), dtype=np.int8)
    spawns = {}
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch == "#":
                terrain[r, c] = WALL
            elif ch == ".":
                terrain[r, c] = FLOOR
            elif ch.isalpha():
                terrain[r, c] = FLOOR
                if ch in spawns:
                    raise ConfigError(f"duplicate spawn label '{ch}' in maze map")
                spawns[ch] = (r, c)
            else:
                raise ConfigError(f"maze map has unknown character '{ch}' at row {r}")
    if not spawns:
        raise ConfigError("maze map has no spawn labels")
    spawn_list = [spawns[ch] for ch in sorted(spawns)]
    _check_connected(terrain)
    return terrain, np.array(spawn_list, dtype=np.int64)


def _check_connected(terrain: np.ndarray) -> None:
    floor = np.argwhere(terrain == FLOOR)
    if floor.size == 0:
        raise ConfigError("maze map has no floor cells")
    seen = np.zeros(terrain.shape, dtype=bool)
    stack = [tuple(floor[0])]
    seen[tuple(floor[0])] = True
    while stack:
        r, c = stack.pop()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if (0 <= nr < terrain.shape[0] and 0 <= nc < terrain.shape[1]
                    and terrain[nr, nc] == FLOOR and not seen[nr, nc]):
                seen[nr, nc] = True
                stack.append((nr, nc))
    if seen.sum() != len(floor):
        raise ConfigError("maze map floor is not fully connected")


# ---------------------------------------------------------------------------
# reset


def _place(rng: np.random.Generator, free: np.ndarray, count: int) -> np.ndarray:
    """Draw count distinct free cells; marks them taken in the mask."""
    flat = np.flatnonzero(free.ravel())
    if count > flat.size:
        raise ConfigError(f"cannot place {count} entities on {flat.size} free cells")
    chosen = rng.choice(flat, size=count, replace=False) if count else np.empty(0, dtype=np.int64)
    free.ravel()[chosen] = False
    return np.stack(np.unravel_index(chosen, free.shape), axis=1).astype(np.int64) \
        if count else np.empty((0, 2), dtype=np.int64)


def env_reset(config, seed: int = 0):
    """Build a fresh episode state and the initial observations.

    The same (config, seed) always produces the identical state.  GhostRun
    draws its tree and obstacle layout from layout_seed when set (so a
    shifted distribution can pin unseen layouts) and from the episode seed
    otherwise; agents, ghosts, and ghost motion always follow the episode
    seed.
    """
    if isinstance(config, GhostRunConfig):
        config.validate()
        layout_entropy = [seed, 11] if config.layout_seed is None else [config.layout_seed, seed]
        rng_layout = np.random.default_rng(layout_entropy)
        rng = np.random.default_rng([seed, 13])
        terrain = np.zeros((config.grid_h, config.grid_w), dtype=np.int8)
        free = np.ones(terrain.shape, dtype=bool)
        for cell in _place(rng_layout, free, config.n_trees):
            terrain[tuple(cell)] = TREE
        for cell in _place(rng_layout, free, config.n_obstacles):
            terrain[tuple(cell)] = OBSTACLE
        agent_pos = _place(rng, free, config.n_agents)
        ghost_pos = _place(rng, free, config.n_ghosts)
        state = EnvState("ghostrun", config, terrain, agent_pos, ghost_pos,
                         dirty=np.zeros(terrain.shape, dtype=bool), rng=rng)
        return state, render_views(state)

    if isinstance(config, MazeConfig):
        config.validate()
        rng = np.random.default_rng([seed, 13])
        terrain, spawns = load_maze_map(config.map_path)
        if config.random_spawn:
            free = terrain == FLOOR
            agent_pos = _place(rng, free.copy(), len(spawns))
        else:
            agent_pos = spawns.copy()
        dirty = terrain == FLOOR
        state = EnvState("mazecleaners", config, terrain, agent_pos,
                         ghost_pos=np.empty((0, 2), dtype=np.int64), dirty=dirty, rng=rng)
        return state, render_views(state)

    raise ConfigError(f"unknown environment config type {type(config).__name__}")


# ---------------------------------------------------------------------------
# rendering


def render_full(state: EnvState) -> np.ndarray:
    """Whole-grid RGB image; later layers paint over earlier ones."""
    img = np.empty(state.terrain.shape + (3,), dtype=np.uint8)
    img[...] = COLOR_FLOOR
    if state.dirty.any():
        img[state.dirty] = COLOR_DIRTY
    for code in (TREE, OBSTACLE, WALL):
        img[state.terrain == code] = TERRAIN_COLORS[code]
    for r, c in state.ghost_pos:
        img[r, c] = COLOR_GHOST
    for r, c in state.agent_pos:
        img[r, c] = COLOR_AGENT
    return img


def extract_view(state: EnvState, agent_id: int) -> np.ndarray:
    """Egocentric square window around one agent, border colour outside."""
    if not 0 <= agent_id < len(state.agent_pos):
        raise ConfigError(f"agent_id {agent_id} out of range {len(state.agent_pos)}")
    return _view_from_full(render_full(state), state, agent_id)


def _view_from_full(full: np.ndarray, state: EnvState, agent_id: int) -> np.ndarray:
    radius = state.config.view_radius
    height, width = state.terrain.shape
    padded = np.empty((height + 2 * radius, width + 2 * radius, 3), dtype=np.uint8)
    padded[...] = COLOR_BORDER
    padded[radius:radius + height, radius:radius + width] = full
    r, c = state.agent_pos[agent_id]
    return padded[r:r + 2 * radius + 1, c:c + 2 * radius + 1].copy()


def render_views(state: EnvState) -> list:
    full = render_full(state)
    return [_view_from_full(full, state, i) for i in range(len(state.agent_pos))]


# ---------------------------------------------------------------------------
# stepping


def _blocked_grid(state: EnvState) -> np.ndarray:
    blocked = state.terrain != FLOOR
    for r, c in state.agent_pos:
        blocked[r, c] = True
    for r, c in state.ghost_pos:
        blocked[r, c] = True
    return blocked


def _move_entities(positions: np.ndarray, directions: np.ndarray, blocked: np.ndarray):
    """Move entities one by one in index order; blocked moves are no-ops.
    Returns a boolean array marking which entities actually moved."""
    height, width = blocked.shape
    moved = np.zeros(len(positions), dtype=bool)
    for i, d in enumerate(directions):
        r, c = positions[i]
        nr, nc = r + ACTION_DELTAS[d][0], c + ACTION_DELTAS[d][1]
        if 0 <= nr < height and 0 <= nc < width and not blocked[nr, nc]:
            blocked[r, c] = False
            blocked[nr, nc] = True
            positions[i] = (nr, nc)
            moved[i] = True
    return moved


def _validate_step(state: EnvState, actions, kind: str) -> np.ndarray:
    if state.kind != kind:
        raise ConfigError(f"{kind}_step got a {state.kind} state")
    if state.done:
        raise InvariantError("episode already finished; reset the environment")
    acts = np.asarray(actions, dtype=np.int64)
    if acts.shape != (len(state.agent_pos),):
        raise ConfigError(f"need {len(state.agent_pos)} actions, got shape {acts.shape}")
    if acts.size and (acts.min() < 0 or acts.max() > 3):
        raise ConfigError(f"actions must be in 0..3, got {acts.tolist()}")
    return acts


def ghosts_visible(state: EnvState) -> list:
    """Per-agent count of ghosts within the Chebyshev view window."""
    counts = []
    radius = state.config.view_radius
    for ar, ac in state.agent_pos:
        n = 0
        for gr, gc in state.ghost_pos:
            if abs(int(gr) - int(ar)) <= radius and abs(int(gc) - int(ac)) <= radius:
                n += 1
        counts.append(n)
    return counts


def _unique_ghosts_visible(state: EnvState) -> int:
    radius = state.config.view_radius
    seen = 0
    for gr, gc in state.ghost_pos:
        for ar, ac in state.agent_pos:
            if abs(int(gr) - int(ar)) <= radius and abs(int(gc) - int(ac)) <= radius:
                seen += 1
                break
    return seen


def ghostrun_step(state: EnvState, actions) -> StepResult:
    """Agents move in index order, then ghosts drift uniformly at random;
    reward is minus the visible-ghost count minus a step cost of 1."""
    acts = _validate_step(state, actions, "ghostrun")
    blocked = _blocked_grid(state)
    _move_entities(state.agent_pos, acts, blocked)
    ghost_dirs = state.rng.integers(0, 4, size=len(state.ghost_pos))
    _move_entities(state.ghost_pos, ghost_dirs, blocked)

    per_agent = ghosts_visible(state)
    unique = _unique_ghosts_visible(state)
    seen = unique if state.config.count_unique_ghosts else sum(per_agent)
    reward = -float(seen) - 1.0

    state.step_count += 1
    state.done = state.step_count >= state.config.max_steps
    info = {"ghosts_visible": per_agent, "unique_ghosts_visible": unique}
    return StepResult(render_views(state), reward, state.done, info)


def mazecleaners_step(state: EnvState, actions) -> StepResult:
    """Agents move in index order; moving into a dirty cell cleans it for
    +1 shared reward.  Done when the maze is clean or the budget is spent."""
    acts = _validate_step(state, actions, "mazecleaners")
    blocked = _blocked_grid(state)
    cleaned = 0
    moved = _move_entities(state.agent_pos, acts, blocked)
    for i, did in enumerate(moved):
        if did and state.dirty[tuple(state.agent_pos[i])]:
            state.dirty[tuple(state.agent_pos[i])] = False
            cleaned += 1

    state.cleaned_total += cleaned
    state.step_count += 1
    state.done = bool(not state.dirty.any() or state.step_count >= state.config.max_steps)
    info = {"cells_cleaned": cleaned, "cells_remaining": int(state.dirty.sum())}
    return StepResult(render_views(state), float(cleaned), state.done, info)


def step(state: EnvState, actions) -> StepResult:
    if state.kind == "ghostrun":
        return ghostrun_step(state, actions)
    if state.kind == "mazecleaners":
        return mazecleaners_step(state, actions)
    raise ConfigError(f"unknown environment kind '{state.kind}'")


# ---------------------------------------------------------------------------
# schedules and shifted variants


CONTINUAL_PERIOD = 50


def continual_schedule(base: GhostRunConfig, episode_index: int) -> GhostRunConfig:
    """One extra ghost every CONTINUAL_PERIOD episodes."""
    if not isinstance(base, GhostRunConfig):
        raise ConfigError("the continual schedule adds ghosts; it needs a GhostRun config")
    if episode_index < 0:
        raise ConfigError(f"episode_index cannot be negative, got {episode_index}")
    return replace(base, n_ghosts=base.n_ghosts + episode_index // CONTINUAL_PERIOD)


def ood_variant(config):
    """Shifted test distribution: GhostRun gains two ghosts and an unseen
    layout stream; MazeCleaners spawns agents at random floor cells."""
    if isinstance(config, GhostRunConfig):
        base_layout = 0 if config.layout_seed is None else config.layout_seed
        return replace(config, n_ghosts=config.n_ghosts + 2,
                       layout_seed=base_layout + OOD_LAYOUT_SHIFT)
    if isinstance(config, MazeConfig):
        return replace(config, random_spawn=True)
    raise ConfigError(f"unknown environment config type {type(config).__name__}")


# ---------------------------------------------------------------------------
# object wrapper used by the training loop


class Env:
    """Thin stateful wrapper over env_reset / step."""

    def __init__(self, config):
        if isinstance(config, GhostRunConfig):
            config.validate()
            self.kind = "ghostrun"
            self.n_agents = config.n_agents
        elif isinstance(config, MazeConfig):
            config.validate()
            self.kind = "mazecleaners"
            _, spawns = load_maze_map(config.map_path)
            self.n_agents = len(spawns)
        else:
            raise ConfigError(f"unknown environment config type {type(config).__name__}")
        self.config = config
        self.state: EnvState | None = None

    @property
    def view_shape(self) -> tuple:
        side = 2 * self.config.view_radius + 1
        return (side, side)

    def reset(self, seed: int = 0):
        self.state, obs = env_reset(self.config, seed)
        return obs

    def step(self, actions) -> StepResult:
        if self.state is None:
            raise InvariantError("step before reset")
        return step(self.state, actions)
