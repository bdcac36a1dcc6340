"""Train a tiny team end to end in under a minute.

One PPO update per episode on a small GhostRun board, then a frozen-policy
evaluation in the training distribution and in the shifted one.
"""

import numpy as np

from asnet.agents import AgentConfig
from asnet.environments import GhostRunConfig, ood_variant
from asnet.training import PpoConfig, Trainer, evaluate_policy

env_cfg = GhostRunConfig(grid_h=7, grid_w=7, n_agents=2, n_ghosts=1,
                         n_trees=1, n_obstacles=1, view_radius=2, max_steps=12)
agent_cfg = AgentConfig(d_k=4, d_v=4, hidden_dim=6, mlp_width=12)

trainer = Trainer(env_cfg, "h5_4", agent_cfg, PpoConfig(), seed=0)

rewards = []
for _ in range(60):
    result = trainer.run_episode()
    rewards.append(result.reward)
    if result.episode % 10 == 9:
        chunk = np.mean(rewards[-10:])
        print(f"episodes {result.episode - 9:2d}-{result.episode:2d}  "
              f"mean reward {chunk:7.2f}  policy loss {result.stats.policy_loss:+.4f}  "
              f"entropy {result.stats.entropy:.3f}")

# the trained team can be evaluated without further updates
iid = evaluate_policy(trainer.team, env_cfg, episodes=20, seed=0)
print(f"frozen policy, training distribution: {iid.mean():.2f} +- {iid.std():.2f}")

ood = evaluate_policy(trainer.team, ood_variant(env_cfg), episodes=20, seed=0, salt=307)
print(f"frozen policy, shifted distribution:  {ood.mean():.2f} +- {ood.std():.2f} "
      f"({ood_variant(env_cfg).n_ghosts} ghosts instead of {env_cfg.n_ghosts})")
