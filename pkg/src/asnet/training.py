"""PPO with generalised advantage estimation for recurrent teams.

The rollout buffer stores one sequence per (episode, agent) so updates can
re-run forwards in order from each sequence's stored starting state with
the rollout's Gumbel noise replayed.  Before the first optimiser step that
replay reproduces the rollout's log-probs exactly, so the first
importance ratios are exactly 1.  Gradients flow through the whole
sequence (no truncation below episode length).

Teams share one network by default (one set of weights, per-agent
recurrent state); share_parameters=False builds an independently seeded
network per agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agents as A, environments as E, tensor as T
from .agents import AgentConfig, AgentNet, build_agent, parse_architecture
from .errors import ConfigError, DimensionError, InvariantError
from .tensor import Graph, Tensor

SALT_AGENT = 7
SALT_UPDATE = 17
SALT_ACTION = 101
SALT_NOISE = 103
SALT_TRAIN_EPISODE = 201
SALT_EVAL_IID = 301
SALT_EVAL_OOD = 307


def mix_seed(*parts) -> int:
    """Deterministically fold integers into one 32-bit seed."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    contrastive_coef: float = 1.0
    # steps collected per update, filled with whole fresh episodes; a
    # trailing partial episode contributes bootstrapped training data only.
    # None keeps the default regime of one full episode per update.
    rollout_length: int | None = None
    grad_clip_norm: float | None = 0.5

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.clip_epsilon <= 0.0:
            raise ConfigError(f"clip_epsilon must be positive, got {self.clip_epsilon}")
        if self.epochs_per_update < 1 or self.minibatch_size < 1:
            raise ConfigError("epochs_per_update and minibatch_size must be at least 1")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate cannot be negative, got {self.learning_rate}")
        if self.rollout_length is not None and self.rollout_length < 1:
            raise ConfigError(f"rollout_length must be positive or None, got {self.rollout_length}")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0.0:
            raise ConfigError(f"grad_clip_norm must be positive or None, got {self.grad_clip_norm}")


# ---------------------------------------------------------------------------
# rollout storage


@dataclass
class Transition:
    agent_id: int
    obs_view: np.ndarray
    action: int
    log_prob: float
    value: float
    reward: float
    done: bool
    hidden_in: np.ndarray | None
    prev_attn_in: np.ndarray | None
    gumbel_noise: np.ndarray | None


@dataclass
class Sequence:
    """One agent's contiguous slice of one episode."""
    agent_id: int
    transitions: list
    bootstrap_value: float = 0.0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None


class RolloutBuffer:
    def __init__(self):
        self.sequences: list[Sequence] = []
        self.episode_rewards: list[float] = []

    @property
    def n_transitions(self) -> int:
        return sum(len(s.transitions) for s in self.sequences)

    def compute_advantages(self, gamma: float, gae_lambda: float) -> None:
        for seq in self.sequences:
            rewards = np.array([tr.reward for tr in seq.transitions])
            values = np.array([tr.value for tr in seq.transitions])
            dones = np.array([tr.done for tr in seq.transitions], dtype=bool)
            seq.advantages, seq.returns = compute_gae(
                rewards, values, dones, gamma, gae_lambda, seq.bootstrap_value)

    def normalize_advantages(self) -> None:
        """Zero mean, unit variance across every transition in the buffer."""
        if not self.sequences:
            return
        if any(s.advantages is None for s in self.sequences):
            raise InvariantError("normalize_advantages before compute_advantages")
        flat = np.concatenate([s.advantages for s in self.sequences])
        mean, std = flat.mean(), flat.std()
        for s in self.sequences:
            s.advantages = (s.advantages - mean) / (std + 1e-8)


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float,
                bootstrap_value: float = 0.0):
    """Backward recursion over one trajectory; returns (advantages, returns).

    dones marks transitions that ended an episode: no value flows across
    them.  bootstrap_value is the critic's estimate past the final
    transition (0 when the trajectory ends with done).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise DimensionError(f"compute_gae: shapes {rewards.shape}, {values.shape}, "
                             f"{dones.shape} differ")
    n = len(rewards)
    advantages = np.zeros(n)
    running = 0.0
    next_value = float(bootstrap_value)
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * gae_lambda * live * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# team


class Team:
    """One network shared by every agent, or one per agent."""

    def __init__(self, arch, view_shape, config: AgentConfig, seed: int, n_agents: int):
        arch = parse_architecture(arch)
        self.n_agents = n_agents
        self.share = config.share_parameters
        if self.share:
            self.nets = [build_agent(arch, view_shape, config, seed)]
        else:
            self.nets = [build_agent(arch, view_shape, config, mix_seed(seed, SALT_AGENT, i))
                         for i in range(n_agents)]

    def net_for(self, agent_id: int) -> AgentNet:
        return self.nets[0] if self.share else self.nets[agent_id]

    def distinct_nets(self) -> list:
        return self.nets

    def reset_states(self) -> None:
        for j in range(self.n_agents):
            self.net_for(j).reset_state(j)

    def parameters(self) -> list:
        if self.share:
            return self.nets[0].parameters()
        out = []
        for i, net in enumerate(self.nets):
            out += [(f"agent{i}.{name}", t) for name, t in net.parameters()]
        return out

    def param_tensors(self) -> list:
        return [t for _, t in self.parameters()]

    @property
    def arch(self):
        return self.nets[0].arch


def _as_team_like(policy):
    """collect_rollout and ppo_update accept a Team or a bare AgentNet."""
    if isinstance(policy, Team):
        return policy
    if isinstance(policy, AgentNet):
        class _Solo:
            def __init__(self, net):
                self.nets = [net]

            def net_for(self, agent_id):
                return self.nets[0]

            def distinct_nets(self):
                return self.nets

            def param_tensors(self):
                return self.nets[0].param_tensors()

            def reset_states(self):
                pass
        return _Solo(policy)
    raise ConfigError(f"policy must be a Team or AgentNet, got {type(policy).__name__}")


# ---------------------------------------------------------------------------
# rollout collection


def collect_rollout(env: E.Env, policy, n_steps: int, seed: int,
                    max_episodes: int | None = None) -> RolloutBuffer:
    """Run the policy for n_steps environment steps, resetting on episode
    end, and record everything an update needs.  Runs tape-free.

    Every agent stores the shared team reward on its own transition.  Set
    max_episodes=1 for the one-episode-per-update regime.
    """
    if n_steps < 0:
        raise ConfigError(f"n_steps cannot be negative, got {n_steps}")
    team = _as_team_like(policy)
    buffer = RolloutBuffer()
    if n_steps == 0:
        return buffer

    action_rng = np.random.default_rng((seed, SALT_ACTION))
    noise_rng = np.random.default_rng((seed, SALT_NOISE))

    episode = 0
    obs = env.reset(seed=mix_seed(seed, SALT_TRAIN_EPISODE, episode))
    n_agents = env.n_agents
    for j in range(n_agents):
        team.net_for(j).reset_state(j)
    open_seqs = [Sequence(j, []) for j in range(n_agents)]
    episode_reward = 0.0

    for _ in range(n_steps):
        actions = []
        partial = []
        for j in range(n_agents):
            net = team.net_for(j)
            hidden_in, prev_in = net.get_state(j)
            noise = (T.sample_gumbel(noise_rng, (net.d_att, 2))
                     if net.mask_gen is not None else None)
            out = net.forward(net.patch(obs[j]), agent_id=j, noise=noise)
            action = out.dist.sample(action_rng)
            actions.append(action)
            partial.append((hidden_in, prev_in, noise, action,
                            float(out.dist.log_prob(action).data),
                            float(out.value.data)))

        result = env.step(actions)
        episode_reward += result.reward
        for j, (hidden_in, prev_in, noise, action, log_prob, value) in enumerate(partial):
            open_seqs[j].transitions.append(Transition(
                agent_id=j, obs_view=obs[j], action=action, log_prob=log_prob,
                value=value, reward=result.reward, done=result.done,
                hidden_in=hidden_in, prev_attn_in=prev_in, gumbel_noise=noise))
        obs = result.observations

        if result.done:
            buffer.sequences.extend(open_seqs)
            buffer.episode_rewards.append(episode_reward)
            episode += 1
            episode_reward = 0.0
            if max_episodes is not None and episode >= max_episodes:
                return buffer
            obs = env.reset(seed=mix_seed(seed, SALT_TRAIN_EPISODE, episode))
            for j in range(n_agents):
                team.net_for(j).reset_state(j)
            open_seqs = [Sequence(j, []) for j in range(n_agents)]

    # budget spent mid-episode: bootstrap each open sequence with the
    # critic's value of the observation after the last step
    if open_seqs[0].transitions:
        for j in range(n_agents):
            net = team.net_for(j)
            noise = (T.sample_gumbel(noise_rng, (net.d_att, 2))
                     if net.mask_gen is not None else None)
            out = net.forward(net.patch(obs[j]), agent_id=j, noise=noise)
            open_seqs[j].bootstrap_value = float(out.value.data)
        buffer.sequences.extend(open_seqs)
    return buffer


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    """Adam with bias correction; one instance owns one parameter list."""

    def __init__(self, params, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float | None) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if max_norm is not None and total > max_norm > 0.0:
        factor = max_norm / total
        for p in params:
            p.grad *= factor
    return total


# ---------------------------------------------------------------------------
# PPO update


@dataclass
class LossStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    contrastive_loss: float = 0.0
    total_loss: float = 0.0
    grad_norm: float = 0.0
    n_transitions: int = 0
    n_minibatches: int = 0


def _minibatches(sequences, order, minibatch_size):
    """Whole sequences greedily grouped to at least minibatch_size
    transitions (the final group may be smaller)."""
    batch, count = [], 0
    for idx in order:
        batch.append(sequences[idx])
        count += len(sequences[idx].transitions)
        if count >= minibatch_size:
            yield batch
            batch, count = [], 0
    if batch:
        yield batch


def replay_forward(net: AgentNet, seq: Sequence):
    """Re-run one sequence's forwards from its stored starting state with
    the stored noise; yields (transition, ForwardOut)."""
    first = seq.transitions[0]
    net.set_state(seq.agent_id, first.hidden_in, first.prev_attn_in)
    for tr in seq.transitions:
        out = net.forward(net.patch(tr.obs_view), agent_id=seq.agent_id,
                          noise=tr.gumbel_noise)
        yield tr, out


def ppo_update(buffer: RolloutBuffer, policy, config: PpoConfig,
               optimizer: Adam | None = None, rng=None) -> LossStats:
    """Clipped-surrogate PPO over the buffer; returns mean loss terms.

    Sequences are shuffled each epoch and grouped whole into minibatches;
    each minibatch re-runs its forwards on the tape, so recurrent credit
    flows through full episodes.
    """
    config.validate()
    if buffer.n_transitions == 0:
        raise InvariantError("ppo_update: empty rollout buffer")
    if any(s.advantages is None for s in buffer.sequences):
        raise InvariantError("ppo_update: compute_advantages first")
    team = _as_team_like(policy)
    params = team.param_tensors()
    if optimizer is None:
        optimizer = Adam(params, lr=config.learning_rate)
    if rng is None:
        rng = np.random.default_rng(0)

    totals = LossStats()
    weight = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(len(buffer.sequences))
        for batch in _minibatches(buffer.sequences, order, config.minibatch_size):
            stats = _update_minibatch(batch, team, config, optimizer, params)
            n = stats.n_transitions
            weight += n
            totals.policy_loss += stats.policy_loss * n
            totals.value_loss += stats.value_loss * n
            totals.entropy += stats.entropy * n
            totals.contrastive_loss += stats.contrastive_loss * n
            totals.total_loss += stats.total_loss * n
            totals.grad_norm += stats.grad_norm * n
            totals.n_minibatches += 1
    for name in ("policy_loss", "value_loss", "entropy", "contrastive_loss",
                 "total_loss", "grad_norm"):
        setattr(totals, name, getattr(totals, name) / weight)
    totals.n_transitions = buffer.n_transitions
    return totals


def _update_minibatch(batch, team, config: PpoConfig, optimizer: Adam, params) -> LossStats:
    new_logps, entropies, values, contrastives = [], [], [], []
    old_logps, advs, rets = [], [], []
    with Graph() as g:
        for seq in batch:
            net = team.net_for(seq.agent_id)
            for tr, out in replay_forward(net, seq):
                new_logps.append(out.dist.log_prob(tr.action))
                entropies.append(out.dist.entropy())
                values.append(out.value)
                if net.arch.is_schema:
                    contrastives.append(A.contrastive_loss(out.attn_pred, out.attn_out))
                old_logps.append(tr.log_prob)
            advs.append(seq.advantages)
            rets.append(seq.returns)

        adv = Tensor(np.concatenate(advs))
        ratio = T.exp(T.sub(T.stack_scalars(new_logps), Tensor(np.array(old_logps))))
        unclipped = T.mul(ratio, adv)
        clipped = T.mul(T.clamp(ratio, 1.0 - config.clip_epsilon,
                                1.0 + config.clip_epsilon), adv)
        policy_loss = T.scale(T.mean_all(T.minimum(unclipped, clipped)), -1.0)
        value_loss = T.mse(T.stack_scalars(values), np.concatenate(rets))
        entropy_mean = T.mean_all(T.stack_scalars(entropies))
        total = T.add(policy_loss, T.scale(value_loss, config.value_coef))
        total = T.sub(total, T.scale(entropy_mean, config.entropy_coef))
        closs_value = 0.0
        if contrastives:
            closs = T.mean_all(T.stack_scalars(contrastives))
            closs_value = closs.item()
            total = T.add(total, T.scale(closs, config.contrastive_coef))

    optimizer.zero_grad()
    g.backward(total)
    grad_norm = clip_grad_norm(params, config.grad_clip_norm)
    optimizer.step()
    return LossStats(policy_loss=policy_loss.item(), value_loss=value_loss.item(),
                     entropy=entropy_mean.item(), contrastive_loss=closs_value,
                     total_loss=total.item(), grad_norm=grad_norm,
                     n_transitions=len(old_logps), n_minibatches=1)


# ---------------------------------------------------------------------------
# training driver


@dataclass
class EpisodeResult:
    episode: int
    reward: float
    stats: LossStats
    n_ghosts: int | None = None


class Trainer:
    """Update loop: collect a rollout, compute advantages, update.

    The default rollout is one full episode.  With ppo.rollout_length set,
    each rollout packs whole fresh episodes into that step budget and a
    trailing partial episode only contributes bootstrapped training data;
    every completed episode in the batch reports the same update's stats.
    """

    def __init__(self, env_config, arch, agent_config: AgentConfig | None = None,
                 ppo_config: PpoConfig | None = None, seed: int = 0,
                 continual: bool = False):
        self.base_config = env_config
        self.arch = parse_architecture(arch)
        self.agent_config = agent_config if agent_config is not None else AgentConfig()
        self.ppo = ppo_config if ppo_config is not None else PpoConfig()
        self.ppo.validate()
        self.seed = seed
        self.continual = continual
        if continual and not isinstance(env_config, E.GhostRunConfig):
            raise ConfigError("continual training needs a GhostRun config")
        probe = E.Env(env_config)
        self.n_agents = probe.n_agents
        self.team = Team(self.arch, probe.view_shape, self.agent_config,
                         mix_seed(seed, SALT_AGENT), self.n_agents)
        self.optimizer = Adam(self.team.param_tensors(), lr=self.ppo.learning_rate)
        self.update_rng = np.random.default_rng((seed, SALT_UPDATE))
        self.episode = 0
        self.rollouts = 0
        self._pending: list[EpisodeResult] = []

    def env_config_for(self, episode: int):
        if self.continual:
            return E.continual_schedule(self.base_config, episode)
        return self.base_config

    def run_update(self) -> list[EpisodeResult]:
        """One rollout and one PPO update; a result per completed episode."""
        cfg = self.env_config_for(self.episode)
        env = E.Env(cfg)
        if self.ppo.rollout_length is None:
            steps, cap = cfg.max_steps, 1
        else:
            steps = self.ppo.rollout_length
            # a batch never straddles a difficulty change
            cap = (E.CONTINUAL_PERIOD - self.episode % E.CONTINUAL_PERIOD
                   if self.continual else None)
        buffer = collect_rollout(env, self.team, steps,
                                 seed=mix_seed(self.seed, SALT_TRAIN_EPISODE, self.rollouts),
                                 max_episodes=cap)
        self.rollouts += 1
        buffer.compute_advantages(self.ppo.gamma, self.ppo.gae_lambda)
        buffer.normalize_advantages()
        stats = ppo_update(buffer, self.team, self.ppo, self.optimizer, self.update_rng)
        results = []
        for reward in buffer.episode_rewards:
            results.append(EpisodeResult(self.episode, reward, stats,
                                         n_ghosts=getattr(cfg, "n_ghosts", None)))
            self.episode += 1
        return results

    def run_episode(self) -> EpisodeResult:
        if not self._pending:
            self._pending = self.run_update()
            if not self._pending:
                raise InvariantError(
                    "the rollout finished no episode; rollout_length must cover "
                    "at least one full episode (use run_update for raw batches)")
        return self._pending.pop(0)


def evaluate_policy(policy, env_config, episodes: int, seed: int,
                    salt: int = SALT_EVAL_IID) -> np.ndarray:
    """Per-episode team rewards for a frozen policy sampling its actions."""
    if episodes < 0:
        raise ConfigError(f"episodes cannot be negative, got {episodes}")
    team = _as_team_like(policy)
    env = E.Env(env_config)
    rewards = np.zeros(episodes)
    for e in range(episodes):
        action_rng = np.random.default_rng((seed, salt, e, SALT_ACTION))
        noise_rng = np.random.default_rng((seed, salt, e, SALT_NOISE))
        obs = env.reset(seed=mix_seed(seed, salt, e))
        for j in range(env.n_agents):
            team.net_for(j).reset_state(j)
        total = 0.0
        done = False
        while not done:
            actions = []
            for j in range(env.n_agents):
                net = team.net_for(j)
                noise = (T.sample_gumbel(noise_rng, (net.d_att, 2))
                         if net.mask_gen is not None else None)
                out = net.forward(net.patch(obs[j]), agent_id=j, noise=noise)
                actions.append(out.dist.sample(action_rng))
            result = env.step(actions)
            total += result.reward
            obs = result.observations
            done = result.done
        rewards[e] = total
    return rewards
