"""Neural layers: GRU cell, observation patching, scaled dot-product
attention, and the activator/suppressor binary mask generator.

Parameter containers are plain dataclasses of Tensors.  Every container has
an items(prefix) method giving (name, tensor) pairs in a fixed order, which
checkpointing relies on.  All initialisation is uniform(-1/sqrt(fan_in),
+1/sqrt(fan_in)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return T.make_param(rng.uniform(-bound, bound, size=shape))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# GRU cell


@dataclass
class GruParams:
    input_dim: int
    hidden_dim: int
    w_xr: Tensor
    b_xr: Tensor
    w_hr: Tensor
    b_hr: Tensor
    w_xz: Tensor
    b_xz: Tensor
    w_hz: Tensor
    b_hz: Tensor
    w_xn: Tensor
    b_xn: Tensor
    w_hn: Tensor
    b_hn: Tensor

    def items(self, prefix: str):
        names = ("w_xr", "b_xr", "w_hr", "b_hr", "w_xz", "b_xz",
                 "w_hz", "b_hz", "w_xn", "b_xn", "w_hn", "b_hn")
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


def init_gru_params(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> GruParams:
    if input_dim < 1 or hidden_dim < 1:
        raise ConfigError(f"gru dims must be positive, got {input_dim} and {hidden_dim}")

    def wx(): return uniform_init(rng, (hidden_dim, input_dim), input_dim)
    def bx(): return uniform_init(rng, (hidden_dim,), input_dim)
    def wh(): return uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)
    def bh(): return uniform_init(rng, (hidden_dim,), hidden_dim)

    return GruParams(input_dim, hidden_dim,
                     wx(), bx(), wh(), bh(),
                     wx(), bx(), wh(), bh(),
                     wx(), bx(), wh(), bh())


def gru_cell_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU step: reset and update gates, candidate state, interpolation.

    Fused into a single tape node with a hand-written backward; this is the
    innermost op of every recurrent architecture.
    """
    xd, hd = x.data, h_prev.data
    if xd.shape != (p.input_dim,):
        raise DimensionError(f"gru_cell_step: input {xd.shape} does not match ({p.input_dim},)")
    if hd.shape != (p.hidden_dim,):
        raise DimensionError(f"gru_cell_step: hidden {hd.shape} does not match ({p.hidden_dim},)")

    w_xr, w_hr = p.w_xr.data, p.w_hr.data
    w_xz, w_hz = p.w_xz.data, p.w_hz.data
    w_xn, w_hn = p.w_xn.data, p.w_hn.data

    r = _sigmoid_np(w_xr @ xd + p.b_xr.data + w_hr @ hd + p.b_hr.data)
    z = _sigmoid_np(w_xz @ xd + p.b_xz.data + w_hz @ hd + p.b_hz.data)
    u = w_hn @ hd + p.b_hn.data
    n = np.tanh(w_xn @ xd + p.b_xn.data + r * u)
    out = (1.0 - z) * n + z * hd

    def bwd(g):
        dn = g * (1.0 - z)
        dz = g * (hd - n)
        dan = dn * (1.0 - n * n)
        dr = dan * u
        du = dan * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        gx = w_xr.T @ dar + w_xz.T @ daz + w_xn.T @ dan
        gh = g * z + w_hr.T @ dar + w_hz.T @ daz + w_hn.T @ du
        return (gx, gh,
                np.outer(dar, xd), dar, np.outer(dar, hd), dar,
                np.outer(daz, xd), daz, np.outer(daz, hd), daz,
                np.outer(dan, xd), dan, np.outer(du, hd), du)

    inputs = (x, h_prev, p.w_xr, p.b_xr, p.w_hr, p.b_hr,
              p.w_xz, p.b_xz, p.w_hz, p.b_hz,
              p.w_xn, p.b_xn, p.w_hn, p.b_hn)
    return T.record_op("gru_cell", inputs, out, bwd)


# ---------------------------------------------------------------------------
# observation patching


def patch_observation(obs: np.ndarray, patch_h: int, patch_w: int) -> Tensor:
    """Cut an H x W x 3 image into non-overlapping patches and flatten each
    row-major into a row of the output, patches ordered row-major over the
    patch grid.  Pixel values are scaled from 0..255 to [0, 1].
    """
    arr = np.asarray(obs)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"patch_observation: need H x W x 3, got shape {arr.shape}")
    height, width = arr.shape[0], arr.shape[1]
    if patch_h < 1 or patch_w < 1 or height % patch_h or width % patch_w:
        raise DimensionError(
            f"patch_observation: patch {patch_h} x {patch_w} does not tile {height} x {width}")
    scaled = arr.astype(np.float64) / 255.0
    gh, gw = height // patch_h, width // patch_w
    mat = (scaled.reshape(gh, patch_h, gw, patch_w, 3)
           .transpose(0, 2, 1, 3, 4)
           .reshape(gh * gw, patch_h * patch_w * 3))
    return Tensor(np.ascontiguousarray(mat))


def unpatch_observation(mat, height: int, width: int, patch_h: int, patch_w: int) -> np.ndarray:
    """Inverse of patch_observation; returns the scaled [0, 1] image."""
    arr = mat.data if isinstance(mat, Tensor) else np.asarray(mat, dtype=np.float64)
    gh, gw = height // patch_h, width // patch_w
    if arr.shape != (gh * gw, patch_h * patch_w * 3):
        raise DimensionError(
            f"unpatch_observation: matrix {arr.shape} does not match "
            f"{height} x {width} with {patch_h} x {patch_w} patches")
    return (arr.reshape(gh, gw, patch_h, patch_w, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(height, width, 3))


# ---------------------------------------------------------------------------
# scaled dot-product attention


@dataclass
class AttentionParams:
    input_dim: int
    d_k: int
    d_v: int
    n_heads: int
    w_query: Tensor
    w_key: Tensor
    w_value: Tensor

    def items(self, prefix: str):
        return [(f"{prefix}.w_query", self.w_query),
                (f"{prefix}.w_key", self.w_key),
                (f"{prefix}.w_value", self.w_value)]


def init_attention_params(rng: np.random.Generator, input_dim: int, d_k: int,
                          d_v: int, n_heads: int = 1) -> AttentionParams:
    if n_heads < 1 or d_k % n_heads or d_v % n_heads:
        raise ConfigError(f"n_heads={n_heads} must divide d_k={d_k} and d_v={d_v}")
    return AttentionParams(
        input_dim, d_k, d_v, n_heads,
        w_query=uniform_init(rng, (d_k, input_dim), input_dim),
        w_key=uniform_init(rng, (d_k, input_dim), input_dim),
        w_value=uniform_init(rng, (d_v, input_dim), input_dim))


def build_qkv(source: Tensor, p: AttentionParams):
    """Keys and values from each source row; the query from the mean row."""
    if source.data.ndim != 2 or source.data.shape[1] != p.input_dim:
        raise DimensionError(
            f"build_qkv: source {source.data.shape} does not match input_dim {p.input_dim}")
    k = T.linear(source, p.w_key)
    v = T.linear(source, p.w_value)
    q = T.linear(T.mean_rows(source), p.w_query)
    return q, k, v


def _one_head(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None):
    d_k = q.data.shape[0]
    att = T.softmax(T.scale(T.matmul(k, q), 1.0 / np.sqrt(d_k)))
    if mask is not None:
        # Multiplicative binary mask applied after the softmax, with no
        # renormalisation: an all-zero mask silences attention entirely.
        att = T.mul(att, mask)
    return T.matmul(T.transpose(v), att), att


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None,
                         n_heads: int = 1):
    """Returns (h1, att_weights): h1 is the value rows combined by the
    softmax of q . key_i / sqrt(d_k); att_weights are the weights actually
    applied (post-mask).  With n_heads > 1 the weights come back as one row
    per head and the same mask applies to every head.
    """
    if q.data.ndim != 1 or k.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError(
            f"scaled_dot_attention: expected q vector, K and V matrices, got "
            f"{q.data.shape}, {k.data.shape}, {v.data.shape}")
    n = k.data.shape[0]
    if v.data.shape[0] != n:
        raise DimensionError(f"scaled_dot_attention: K has {n} rows but V has {v.data.shape[0]}")
    if k.data.shape[1] != q.data.shape[0]:
        raise DimensionError(
            f"scaled_dot_attention: K {k.data.shape} does not match q {q.data.shape}")
    if mask is not None and mask.data.shape != (n,):
        raise DimensionError(f"scaled_dot_attention: mask {mask.data.shape} does not match n={n}")
    d_k, d_v = k.data.shape[1], v.data.shape[1]
    if n_heads < 1 or d_k % n_heads or d_v % n_heads:
        raise ConfigError(f"n_heads={n_heads} must divide d_k={d_k} and d_v={d_v}")

    if n_heads == 1:
        return _one_head(q, k, v, mask)

    hk, hv = d_k // n_heads, d_v // n_heads
    outs, atts = [], []
    for i in range(n_heads):
        h1_i, att_i = _one_head(T.slice_vec(q, i * hk, (i + 1) * hk),
                                T.slice_cols(k, i * hk, (i + 1) * hk),
                                T.slice_cols(v, i * hv, (i + 1) * hv),
                                mask)
        outs.append(h1_i)
        atts.append(att_i)
    return T.concat_vecs(outs), T.stack_rows(atts)


# ---------------------------------------------------------------------------
# binary mask generator


@dataclass
class MaskGenParams:
    input_dim: int
    d_att: int
    temperature: float
    act_w1: Tensor
    act_b1: Tensor
    act_w2: Tensor
    act_b2: Tensor
    sup_w1: Tensor
    sup_b1: Tensor
    sup_w2: Tensor
    sup_b2: Tensor

    def items(self, prefix: str):
        names = ("act_w1", "act_b1", "act_w2", "act_b2",
                 "sup_w1", "sup_b1", "sup_w2", "sup_b2")
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


def init_mask_gen_params(rng: np.random.Generator, input_dim: int, d_att: int,
                         hidden: int = 32, temperature: float = 1.0,
                         open_bias: float = 2.0) -> MaskGenParams:
    """open_bias shifts the output biases (+activator, -suppressor) so a
    fresh mask starts mostly open: masking begins near the unmasked policy
    and training learns what to suppress."""
    if d_att < 1:
        raise ConfigError(f"d_att must be positive, got {d_att}")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")

    def head(shift):
        w1 = uniform_init(rng, (hidden, input_dim), input_dim)
        b1 = uniform_init(rng, (hidden,), input_dim)
        w2 = uniform_init(rng, (d_att, hidden), hidden)
        b2 = uniform_init(rng, (d_att,), hidden)
        b2.data += shift
        return w1, b1, w2, b2

    return MaskGenParams(input_dim, d_att, temperature,
                         *head(open_bias), *head(-open_bias))


def generate_binary_mask(h2: Tensor, p: MaskGenParams, hard: bool = True,
                         noise=None) -> Tensor:
    """Binary attention mask from a control state.

    Two small MLPs score each mask slot: the activator argues for keeping
    it, the suppressor for silencing it.  The pair of scores goes through a
    binary Gumbel-softmax and the activator channel is the mask.  hard=True
    gives exact {0, 1} entries with straight-through gradients.
    """
    if h2.data.shape != (p.input_dim,):
        raise DimensionError(f"generate_binary_mask: input {h2.data.shape} "
                             f"does not match ({p.input_dim},)")
    act = T.linear(T.tanh(T.linear(h2, p.act_w1, p.act_b1)), p.act_w2, p.act_b2)
    sup = T.linear(T.tanh(T.linear(h2, p.sup_w1, p.sup_b1)), p.sup_w2, p.sup_b2)
    pairs = T.stack_cols(act, sup)
    y = T.gumbel_softmax_binary(pairs, p.temperature, hard=hard, noise=noise)
    return T.column(y, 0)


# ---------------------------------------------------------------------------
# linear and two-layer MLP heads


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    def items(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


def init_linear_params(rng: np.random.Generator, input_dim: int, output_dim: int) -> LinearParams:
    return LinearParams(w=uniform_init(rng, (output_dim, input_dim), input_dim),
                        b=uniform_init(rng, (output_dim,), input_dim))


def linear_forward(x: Tensor, p: LinearParams) -> Tensor:
    return T.linear(x, p.w, p.b)


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def items(self, prefix: str):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


def init_mlp_params(rng: np.random.Generator, input_dim: int, hidden: int,
                    output_dim: int) -> MlpParams:
    return MlpParams(
        w1=uniform_init(rng, (hidden, input_dim), input_dim),
        b1=uniform_init(rng, (hidden,), input_dim),
        w2=uniform_init(rng, (output_dim, hidden), hidden),
        b2=uniform_init(rng, (output_dim,), hidden))


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    return T.linear(T.tanh(T.linear(x, p.w1, p.b1)), p.w2, p.b2)
