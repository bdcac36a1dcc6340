"""Agent architectures: nine wirings of attention and recurrent control.

The non-schema family differs in where recurrence sits relative to
attention:

  h1  attention over observation patches, straight to the heads
  h2  GRU scans the patch rows first, attention runs over the GRU outputs
  h3  attention first, GRU consumes its output, heads read the GRU state
  h4  attention and a GRU patch scan run in parallel, heads read both

The schema family (h5_*) shares one trunk: a GRU tracks the previous
step's attention output, a linear predictor reconstructs it from the GRU
state, and (except h5_1) an activator/suppressor mask generator emits a
binary mask from the same state.  Variants differ only in where the mask
lands: nowhere (h5_1), on the action probabilities (h5_2), on the
attention output vector (h5_3), on the attention weights (h5_4), or on the
weights while the heads read the predictor's reconstruction instead of the
attention output (h5_5).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import layers, tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

N_ACTIONS = 4


class Architecture(enum.Enum):
    H1 = "h1"
    H2 = "h2"
    H3 = "h3"
    H4 = "h4"
    H5_1 = "h5_1"
    H5_2 = "h5_2"
    H5_3 = "h5_3"
    H5_4 = "h5_4"
    H5_5 = "h5_5"

    @property
    def is_schema(self) -> bool:
        return self.value.startswith("h5")

    @property
    def has_mask(self) -> bool:
        return self.is_schema and self is not Architecture.H5_1

    @property
    def uses_gru(self) -> bool:
        return self is not Architecture.H1


def parse_architecture(name) -> Architecture:
    if isinstance(name, Architecture):
        return name
    try:
        return Architecture(str(name).strip().lower())
    except ValueError:
        valid = ", ".join(a.value for a in Architecture)
        raise ConfigError(f"unknown architecture '{name}' (valid: {valid})") from None


@dataclass
class AgentConfig:
    """Sizes and switches shared by every architecture.

    patch_w=None means one full view row per patch, so a 7x7 view becomes
    7 patches of dimension 21.
    """
    patch_h: int = 1
    patch_w: int | None = None
    d_k: int = 16
    d_v: int = 16
    hidden_dim: int = 32
    n_heads: int = 1
    mlp_width: int = 64
    mask_hidden: int = 32
    mask_temperature: float = 1.0
    mask_open_bias: float = 2.0
    hard_mask: bool = True
    share_parameters: bool = True


@dataclass
class AgentState:
    hidden: Tensor | None
    prev_attn: Tensor | None


@dataclass
class ForwardOut:
    """Everything one forward pass produces.

    attn_out is the architecture's final attention result h1 (post-mask for
    the variants that mask it); control_out is the GRU state h2 when the
    architecture has one; attn_pred and mask are schema-only; uniform_fallback
    marks an h5_2 step whose mask silenced every action.
    """
    dist: "ActionDistribution"
    value: Tensor
    attn_out: Tensor
    control_out: Tensor | None = None
    attn_pred: Tensor | None = None
    mask: Tensor | None = None
    uniform_fallback: bool = False


class ActionDistribution:
    """Categorical distribution over the four movement actions."""

    __slots__ = ("probs",)

    def __init__(self, probs: Tensor):
        if probs.data.shape != (N_ACTIONS,):
            raise DimensionError(f"ActionDistribution: need {N_ACTIONS} probabilities, "
                                 f"got shape {probs.data.shape}")
        self.probs = probs

    def sample(self, rng: np.random.Generator) -> int:
        # inverse-CDF draw: the outcome depends only on probs and one uniform
        cdf = np.cumsum(self.probs.data)
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        return min(idx, N_ACTIONS - 1)

    def log_prob(self, action: int) -> Tensor:
        return T.categorical_log_prob(self.probs, action)

    def entropy(self) -> Tensor:
        return T.categorical_entropy(self.probs)


def d_att_for(arch: Architecture, n_patches: int, d_v: int) -> int:
    """Width of the binary mask for each masking variant."""
    if arch is Architecture.H5_2:
        return N_ACTIONS
    if arch is Architecture.H5_3:
        return d_v
    if arch in (Architecture.H5_4, Architecture.H5_5):
        return n_patches
    raise ConfigError(f"architecture {arch.value} has no mask")


class AgentNet:
    """Parameters plus per-agent recurrent state for one architecture."""

    def __init__(self, arch: Architecture, view_shape: tuple[int, int], config: AgentConfig,
                 seed: int):
        self.arch = arch
        self.config = config
        self.view_shape = tuple(view_shape)
        height, width = self.view_shape
        ph = config.patch_h
        pw = width if config.patch_w is None else config.patch_w
        if ph < 1 or pw < 1 or height % ph or width % pw:
            raise ConfigError(f"patch {ph} x {pw} does not tile the {height} x {width} view")
        self.patch_h, self.patch_w = ph, pw
        self.n_patches = (height // ph) * (width // pw)
        self.patch_dim = ph * pw * 3
        self.seed = seed

        rng = np.random.default_rng(seed)
        c = config
        attn_input = c.hidden_dim if arch is Architecture.H2 else self.patch_dim
        self.attention = layers.init_attention_params(rng, attn_input, c.d_k, c.d_v,
                                                      n_heads=c.n_heads)

        self.gru = None
        if arch in (Architecture.H2, Architecture.H4):
            self.gru = layers.init_gru_params(rng, self.patch_dim, c.hidden_dim)
        elif arch is Architecture.H3 or arch.is_schema:
            self.gru = layers.init_gru_params(rng, c.d_v, c.hidden_dim)

        self.mask_gen = None
        self.d_att = None
        if arch.has_mask:
            self.d_att = d_att_for(arch, self.n_patches, c.d_v)
            self.mask_gen = layers.init_mask_gen_params(
                rng, c.hidden_dim, self.d_att, hidden=c.mask_hidden,
                temperature=c.mask_temperature, open_bias=c.mask_open_bias)

        self.predictor = None
        if arch.is_schema:
            self.predictor = layers.init_linear_params(rng, c.hidden_dim, c.d_v)

        if arch is Architecture.H3 or arch is Architecture.H5_5:
            feat = c.hidden_dim if arch is Architecture.H3 else c.d_v
        elif arch is Architecture.H4:
            feat = c.d_v + c.hidden_dim
        else:
            feat = c.d_v
        self.feature_dim = feat
        self.policy_head = layers.init_mlp_params(rng, feat, c.mlp_width, N_ACTIONS)
        self.value_head = layers.init_mlp_params(rng, feat, c.mlp_width, 1)

        self._states: dict[int, AgentState] = {}

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        """(name, tensor) pairs in a fixed order; checkpoint layout."""
        out = self.attention.items("attention")
        if self.gru is not None:
            out += self.gru.items("gru")
        if self.mask_gen is not None:
            out += self.mask_gen.items("mask_gen")
        if self.predictor is not None:
            out += self.predictor.items("predictor")
        out += self.policy_head.items("policy")
        out += self.value_head.items("value")
        return out

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.parameters()]

    def clone(self, seed: int | None = None) -> "AgentNet":
        """Fresh net with copied (never aliased) parameter values."""
        twin = AgentNet(self.arch, self.view_shape, self.config,
                        self.seed if seed is None else seed)
        for (_, src), (_, dst) in zip(self.parameters(), twin.parameters()):
            dst.data[...] = src.data
        return twin

    # -- per-agent recurrent state -------------------------------------------

    def reset_state(self, agent_id: int = 0) -> None:
        hidden = Tensor(np.zeros(self.config.hidden_dim)) if self.gru is not None else None
        prev = Tensor(np.zeros(self.config.d_v)) if self.arch.is_schema else None
        self._states[agent_id] = AgentState(hidden, prev)

    def _state(self, agent_id: int) -> AgentState:
        if agent_id not in self._states:
            self.reset_state(agent_id)
        return self._states[agent_id]

    def get_state(self, agent_id: int = 0):
        """Raw arrays (hidden, prev_attn) for storage in a rollout buffer."""
        s = self._state(agent_id)
        return (None if s.hidden is None else s.hidden.data.copy(),
                None if s.prev_attn is None else s.prev_attn.data.copy())

    def set_state(self, agent_id: int, hidden, prev_attn) -> None:
        self._states[agent_id] = AgentState(
            None if hidden is None else Tensor(hidden),
            None if prev_attn is None else Tensor(prev_attn))

    # -- forwards -------------------------------------------------------------

    def patch(self, obs: np.ndarray) -> Tensor:
        return layers.patch_observation(obs, self.patch_h, self.patch_w)

    def _check_patches(self, o_pa: Tensor) -> None:
        if o_pa.data.shape != (self.n_patches, self.patch_dim):
            raise DimensionError(f"expected {self.n_patches} x {self.patch_dim} patches, "
                                 f"got shape {o_pa.data.shape}")

    def _heads(self, feat: Tensor):
        probs = T.softmax(layers.mlp_forward(feat, self.policy_head))
        value = T.only(layers.mlp_forward(feat, self.value_head))
        return ActionDistribution(probs), value

    def _gru_row_scan(self, o_pa: Tensor, state: AgentState):
        h = state.hidden
        outs = []
        for i in range(self.n_patches):
            h = layers.gru_cell_step(Tensor(o_pa.data[i]), h, self.gru)
            outs.append(h)
        state.hidden = h
        return outs

    def forward(self, o_pa: Tensor, agent_id: int = 0, hard: bool | None = None,
                noise=None, mask_override=None) -> ForwardOut:
        if self.arch.is_schema:
            return forward_h5(self, o_pa, agent_id=agent_id, hard=hard, noise=noise,
                              mask_override=mask_override)
        return forward_h1_to_h4(self, o_pa, agent_id=agent_id)


def build_agent(arch, view_shape, config: AgentConfig | None = None,
                seed: int = 0) -> AgentNet:
    return AgentNet(parse_architecture(arch), view_shape,
                    config if config is not None else AgentConfig(), seed)


def forward_h1_to_h4(net: AgentNet, o_pa: Tensor, agent_id: int = 0) -> ForwardOut:
    """One step of h1..h4; updates the agent's recurrent state in place."""
    if net.arch.is_schema:
        raise ConfigError(f"forward_h1_to_h4 cannot run schema architecture {net.arch.value}")
    net._check_patches(o_pa)
    state = net._state(agent_id)

    if net.arch is Architecture.H1:
        q, k, v = layers.build_qkv(o_pa, net.attention)
        h1, _ = layers.scaled_dot_attention(q, k, v, n_heads=net.config.n_heads)
        dist, value = net._heads(h1)
        return ForwardOut(dist, value, attn_out=h1)

    if net.arch is Architecture.H2:
        outs = net._gru_row_scan(o_pa, state)
        source = T.stack_rows(outs)
        q, k, v = layers.build_qkv(source, net.attention)
        h1, _ = layers.scaled_dot_attention(q, k, v, n_heads=net.config.n_heads)
        dist, value = net._heads(h1)
        return ForwardOut(dist, value, attn_out=h1, control_out=state.hidden)

    if net.arch is Architecture.H3:
        q, k, v = layers.build_qkv(o_pa, net.attention)
        h1, _ = layers.scaled_dot_attention(q, k, v, n_heads=net.config.n_heads)
        h2 = layers.gru_cell_step(h1, state.hidden, net.gru)
        state.hidden = h2
        dist, value = net._heads(h2)
        return ForwardOut(dist, value, attn_out=h1, control_out=h2)

    # h4: attention and the GRU scan in parallel, heads read both
    q, k, v = layers.build_qkv(o_pa, net.attention)
    h1, _ = layers.scaled_dot_attention(q, k, v, n_heads=net.config.n_heads)
    net._gru_row_scan(o_pa, state)
    feat = T.concat_vecs([h1, state.hidden])
    dist, value = net._heads(feat)
    return ForwardOut(dist, value, attn_out=h1, control_out=state.hidden)


def forward_h5(net: AgentNet, o_pa: Tensor, agent_id: int = 0, hard: bool | None = None,
               noise=None, mask_override=None) -> ForwardOut:
    """One step of the shared schema trunk.

    Order inside the step: the GRU digests the previous step's attention
    output, the predictor and mask generator read the new GRU state, then
    attention runs under whatever the variant masks.  The state stores this
    step's final attention output for the next call.
    """
    if not net.arch.is_schema:
        raise ConfigError(f"forward_h5 cannot run non-schema architecture {net.arch.value}")
    net._check_patches(o_pa)
    if hard is None:
        hard = net.config.hard_mask
    state = net._state(agent_id)

    h2 = layers.gru_cell_step(state.prev_attn, state.hidden, net.gru)
    state.hidden = h2
    pred = layers.linear_forward(h2, net.predictor)

    mask = None
    if mask_override is not None:
        mask = T.as_tensor(mask_override)
        want = net.d_att if net.d_att is not None else None
        if want is not None and mask.data.shape != (want,):
            raise DimensionError(f"mask override {mask.data.shape} does not match ({want},)")
    elif net.mask_gen is not None:
        mask = layers.generate_binary_mask(h2, net.mask_gen, hard=hard, noise=noise)

    q, k, v = layers.build_qkv(o_pa, net.attention)
    arch = net.arch
    fallback = False

    if arch in (Architecture.H5_4, Architecture.H5_5):
        h1m, _ = layers.scaled_dot_attention(q, k, v, mask=mask, n_heads=net.config.n_heads)
    else:
        h1m, _ = layers.scaled_dot_attention(q, k, v, n_heads=net.config.n_heads)
        if arch is Architecture.H5_3:
            h1m = T.mul(h1m, mask)

    if arch is Architecture.H5_2:
        raw = T.softmax(layers.mlp_forward(h1m, net.policy_head))
        masked = T.mul(raw, mask)
        if masked.data.sum() == 0.0:
            # the mask silenced every action; fall back to uniform
            probs = Tensor(np.full(N_ACTIONS, 1.0 / N_ACTIONS))
            fallback = True
        else:
            probs = T.normalize_sum(masked)
        dist = ActionDistribution(probs)
        value = T.only(layers.mlp_forward(h1m, net.value_head))
    else:
        feat = pred if arch is Architecture.H5_5 else h1m
        dist, value = net._heads(feat)

    state.prev_attn = h1m
    return ForwardOut(dist, value, attn_out=h1m, control_out=h2, attn_pred=pred,
                      mask=mask, uniform_fallback=fallback)


def contrastive_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error between the predicted and actual attention
    output, with the target detached: only the predictor side learns."""
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"contrastive_loss: shapes {pred.data.shape} "
                             f"and {target.data.shape} differ")
    return T.mse(pred, target.data)
