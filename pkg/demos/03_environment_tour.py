"""Tour of the two gridworld tasks.

Renders a small GhostRun board as ASCII, steps it with random actions, and
shows the shared reward falling when ghosts enter an agent's view.  Then
runs MazeCleaners until the sweepers earn their first few cleaning rewards.
"""

import numpy as np

from asnet.environments import (FLOOR, OBSTACLE, TREE, WALL, Env,
                                GhostRunConfig, MazeConfig, continual_schedule,
                                ghosts_visible, ood_variant)

GLYPHS = {FLOOR: ".", WALL: "#", OBSTACLE: "#", TREE: "T"}


def show(state):
    rows = [[GLYPHS[c] for c in line] for line in state.terrain]
    for r, c in state.ghost_pos:
        rows[r][c] = "G"
    for i, (r, c) in enumerate(state.agent_pos):
        rows[r][c] = str(i)
    print("\n".join(" ".join(line) for line in rows))


cfg = GhostRunConfig(grid_h=9, grid_w=9, n_agents=2, n_ghosts=2,
                     n_trees=3, n_obstacles=2, view_radius=2, max_steps=40)
env = Env(cfg)
views = env.reset(seed=11)
print(f"GhostRun, 9x9, each agent sees a {views[0].shape} window")
print("agents are digits, G ghost, T tree, # obstacle")
show(env.state)

rng = np.random.default_rng(11)
total = 0.0
for t in range(10):
    actions = rng.integers(0, 4, size=cfg.n_agents)
    result = env.step(actions)
    total += result.reward
    seen = sum(ghosts_visible(env.state))
    print(f"step {t}: reward {result.reward:+.0f}  visible ghost pairs {seen}")

print(f"10-step return {total:+.0f} (a ghost-free walk would be -10)")
print()
show(env.state)

# the same layout family gets harder over a continual run, and the
# out-of-distribution variant adds a ghost on top of a reshuffled board
print()
print("episode    0:", continual_schedule(cfg, 0).n_ghosts, "ghosts")
print("episode  150:", continual_schedule(cfg, 150).n_ghosts, "ghosts")
print("ood variant: ", ood_variant(cfg).n_ghosts, "ghosts")

# MazeCleaners: fixed 13x13 maze, every floor cell starts dirty
maze = Env(MazeConfig())
maze.reset(seed=3)
print()
print(f"MazeCleaners: {int(maze.state.dirty.sum())} dirty cells at reset")

rng = np.random.default_rng(3)
cleaned = 0.0
for t in range(60):
    result = maze.step(rng.integers(0, 4, size=2))
    cleaned += max(result.reward, 0.0)
print(f"random sweepers cleaned {cleaned:.0f} cells in 60 steps, "
      f"{int(maze.state.dirty.sum())} remain")
