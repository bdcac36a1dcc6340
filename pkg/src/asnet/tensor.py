"""Float64 tensors on a reverse-mode autodiff tape.

A Graph is an append-only tape of executed operations.  Ops run eagerly on
numpy arrays; when a Graph is active (entered as a context manager) and an
input requires gradients, the op appends a node whose closure pushes the
output gradient back to the inputs.  backward() walks the tape once in
reverse append order, so every node sees its complete output gradient
before it runs.

With no active Graph, ops run tape-free and return constant tensors, which
keeps environment rollouts cheap.  Everything is float64 and C-order.
"""

from __future__ import annotations

import os
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, InvariantError

# Runtime NaN/Inf guard on every op output.  Off by default: it roughly
# doubles per-op cost and a training run executes millions of ops.
DEBUG_CHECKS = os.environ.get("ASNET_DEBUG", "0") not in ("", "0", "false")

GUMBEL_CLIP = 1e-12
LOG_PROB_FLOOR = 1e-300


class Tensor:
    """A float64 array plus a gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Parameters start with a zero gradient so an unused parameter reads
        # as exactly zero after backward, not as a missing slot.
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a size-1 tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_ACTIVE = threading.local()


def active_graph() -> "Graph | None":
    return getattr(_ACTIVE, "graph", None)


class Graph:
    """Append-only tape of ops, plus the graph-owned noise generator.

    Entering the context makes this the active graph for the current thread.
    Graphs nest; leaving restores the previous one.  Run the same program
    under two graphs built with the same seed and every output matches
    bit for bit.
    """

    def __init__(self, seed=None):
        self.nodes: list[Node] = []
        self.rng = np.random.default_rng(seed)

    def __enter__(self) -> "Graph":
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        _ACTIVE.graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _ACTIVE.stack
        stack.pop()
        _ACTIVE.graph = stack[-1] if stack else None
        return False

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable) -> None:
        """Append a node.  backward_fn(grad_out) returns one gradient per
        input, in order, with None for inputs that take no gradient."""
        self.nodes.append(Node(op, tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad leaf that loss depends on.

        Gradients accumulate into existing .grad buffers; call zero_grad on
        the parameters (or rebuild them) between backward passes.  Walk each
        tape at most once.
        """
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        produced = {id(n.output) for n in self.nodes}
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g_out = pending.pop(id(node.output), None)
            if g_out is None:
                continue  # dead branch: output never used by the loss
            for t, g in zip(node.inputs, node.backward_fn(g_out)):
                if g is None:
                    continue
                k = id(t)
                if k in produced:
                    if k in pending:
                        pending[k] = pending[k] + g
                    else:
                        pending[k] = g
                elif t.requires_grad:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    g = graph if graph is not None else active_graph()
    if g is None:
        raise InvariantError("backward called with no active graph")
    g.backward(loss)


def _finite_check(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise InvariantError(f"non-finite value produced by op '{op}'")


def _make(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
          backward_fn: Callable) -> Tensor:
    """Wrap an op result; record a node when a graph is active and any
    input carries gradients."""
    if DEBUG_CHECKS:
        _finite_check(op, out_data)
    out = Tensor(out_data)
    g = active_graph()
    if g is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        g.record(op, inputs, out, backward_fn)
    return out


def record_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
              backward_fn: Callable) -> Tensor:
    """Public hook for fused ops defined outside this module."""
    return _make(op, inputs, out_data, backward_fn)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", (x,), x.data * c, lambda g: (g * c,))


def scalar_affine(x: Tensor, mul_by: float, add_to: float) -> Tensor:
    """out = x * mul_by + add_to, both plain floats."""
    m = float(mul_by)
    return _make("scalar_affine", (x,), x.data * m + float(add_to), lambda g: (g * m,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise DimensionError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul: inner dimensions of {ad.shape} and {bd.shape} differ")
    out = ad @ bd

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        # vector @ vector -> scalar
        return g * bd, g * ad

    return _make("matmul", (a, b), out, bwd)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose: need a matrix, got shape {x.data.shape}")
    return _make("transpose", (x,), x.data.T.copy(), lambda g: (g.T,))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """weight @ x + bias for a vector x, or x @ weight.T + bias applied to
    each row when x is a matrix.  Fused into one node: this is the hot path.
    """
    xd, wd = x.data, weight.data
    if wd.ndim != 2:
        raise DimensionError(f"linear: weight must be a matrix, got shape {wd.shape}")
    if xd.ndim == 1:
        if xd.shape[0] != wd.shape[1]:
            raise DimensionError(f"linear: input {xd.shape} does not match weight {wd.shape}")
        out = wd @ xd
    elif xd.ndim == 2:
        if xd.shape[1] != wd.shape[1]:
            raise DimensionError(f"linear: input {xd.shape} does not match weight {wd.shape}")
        out = xd @ wd.T
    else:
        raise DimensionError(f"linear: input rank must be 1 or 2, got shape {xd.shape}")
    if bias is not None:
        if bias.data.shape != (wd.shape[0],):
            raise DimensionError(f"linear: bias {bias.data.shape} does not match weight {wd.shape}")
        out = out + bias.data

    if bias is None:
        def bwd(g):
            if xd.ndim == 1:
                return wd.T @ g, np.outer(g, xd)
            return g @ wd, g.T @ xd
        return _make("linear", (x, weight), out, bwd)

    def bwd_b(g):
        if xd.ndim == 1:
            return wd.T @ g, np.outer(g, xd), g
        return g @ wd, g.T @ xd, g.sum(axis=0)
    return _make("linear", (x, weight, bias), out, bwd_b)


# ---------------------------------------------------------------------------
# shape manipulation


def concat_vecs(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat_vecs: need vectors, got shape {p.data.shape}")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make("concat_vecs", parts, np.concatenate([p.data for p in parts]), bwd)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    rows = tuple(rows)
    d = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != d:
            raise DimensionError(f"stack_rows: need equal-length vectors, got {r.data.shape} vs {d}")
    return _make("stack_rows", rows, np.stack([r.data for r in rows]),
                 lambda g: tuple(g[i] for i in range(len(rows))))


def stack_cols(a: Tensor, b: Tensor) -> Tensor:
    """Two length-d vectors -> a d x 2 matrix."""
    _same_shape("stack_cols", a, b)
    if a.data.ndim != 1:
        raise DimensionError(f"stack_cols: need vectors, got shape {a.data.shape}")
    return _make("stack_cols", (a, b), np.stack([a.data, b.data], axis=1),
                 lambda g: (g[:, 0], g[:, 1]))


def stack_scalars(items: Sequence[Tensor]) -> Tensor:
    items = tuple(items)
    for s in items:
        if s.data.size != 1:
            raise DimensionError(f"stack_scalars: need scalars, got shape {s.data.shape}")
    out = np.array([s.data.reshape(()) for s in items])

    def bwd(g):
        return tuple(np.asarray(g[i]).reshape(s.data.shape) for i, s in enumerate(items))

    return _make("stack_scalars", items, out, bwd)


def slice_vec(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 1:
        raise DimensionError(f"slice_vec: need a vector, got shape {x.data.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _make("slice_vec", (x,), x.data[start:stop].copy(), bwd)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"slice_cols: need a matrix, got shape {x.data.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _make("slice_cols", (x,), np.ascontiguousarray(x.data[:, start:stop]), bwd)


def column(x: Tensor, j: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"column: need a matrix, got shape {x.data.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, j] = g
        return (gx,)

    return _make("column", (x,), x.data[:, j].copy(), bwd)


def only(x: Tensor) -> Tensor:
    """Collapse a size-1 tensor to a scalar."""
    if x.data.size != 1:
        raise DimensionError(f"only: need a size-1 tensor, got shape {x.data.shape}")
    return _make("only", (x,), x.data.reshape(()).copy(),
                 lambda g: (np.asarray(g).reshape(x.data.shape),))


# ---------------------------------------------------------------------------
# reductions


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the first axis of a matrix; returns a vector."""
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows: need a matrix, got shape {x.data.shape}")
    m = x.data.shape[0]
    return _make("mean_rows", (x,), x.data.mean(axis=0),
                 lambda g: (np.broadcast_to(g / m, x.data.shape),))


def sum_all(x: Tensor) -> Tensor:
    return _make("sum_all", (x,), np.asarray(x.data.sum()),
                 lambda g: (np.broadcast_to(g, x.data.shape),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make("mean_all", (x,), np.asarray(x.data.mean()),
                 lambda g: (np.broadcast_to(g / n, x.data.shape),))


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", (x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    """Natural log; the caller is responsible for positive inputs."""
    xd = x.data
    return _make("log", (x,), np.log(xd), lambda g: (g / xd,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over a vector, or over each row of a matrix, with
    max-subtraction for overflow safety."""
    xd = x.data
    if xd.ndim == 1:
        z = np.exp(xd - xd.max())
        s = z / z.sum()
        return _make("softmax", (x,), s, lambda g: (s * (g - np.dot(g, s)),))
    if xd.ndim == 2:
        z = np.exp(xd - xd.max(axis=1, keepdims=True))
        s = z / z.sum(axis=1, keepdims=True)
        return _make("softmax", (x,), s,
                     lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))
    raise DimensionError(f"softmax: rank must be 1 or 2, got shape {xd.shape}")


def normalize_sum(x: Tensor) -> Tensor:
    """x / sum(x) as a single node.  The caller guarantees sum(x) != 0."""
    s = float(x.data.sum())
    if s == 0.0:
        raise InvariantError("normalize_sum: elements sum to zero")
    y = x.data / s
    return _make("normalize_sum", (x,), y, lambda g: ((g - np.dot(g, y)) / s,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if not lo < hi:
        raise ConfigError(f"clamp: need lo < hi, got {lo} and {hi}")
    xd = x.data
    out = np.clip(xd, lo, hi)
    inside = (xd >= lo) & (xd <= hi)
    return _make("clamp", (x,), out, lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties route the gradient to the first argument."""
    _same_shape("minimum", a, b)
    take_a = a.data <= b.data
    return _make("minimum", (a, b), np.where(take_a, a.data, b.data),
                 lambda g: (g * take_a, g * ~take_a))


# ---------------------------------------------------------------------------
# losses and distributions


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target.  The target never
    receives gradients, even when passed as a Tensor."""
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != td.shape:
        raise DimensionError(f"mse: shapes {pred.data.shape} and {td.shape} differ")
    diff = pred.data - td
    n = diff.size if diff.size else 1
    return _make("mse", (pred,), np.asarray((diff * diff).sum() / n),
                 lambda g: (g * 2.0 * diff / n,))


def categorical_log_prob(probs: Tensor, index: int) -> Tensor:
    """log probs[index] for a probability vector.

    The probability is floored at a tiny positive value so replaying an
    action whose probability a hard mask has since driven to zero yields a
    huge negative log-prob and finite gradients rather than -inf and NaN.
    """
    pd = probs.data
    if pd.ndim != 1:
        raise DimensionError(f"categorical_log_prob: need a vector, got shape {pd.shape}")
    if not 0 <= index < pd.shape[0]:
        raise ConfigError(f"categorical_log_prob: index {index} out of range {pd.shape[0]}")
    p = max(float(pd[index]), LOG_PROB_FLOOR)

    def bwd(g):
        gp = np.zeros_like(pd)
        gp[index] = float(g) / p
        return (gp,)

    return _make("categorical_log_prob", (probs,), np.asarray(np.log(p)), bwd)


def categorical_entropy(probs: Tensor) -> Tensor:
    """-sum p log p with the 0 log 0 = 0 convention; the gradient at
    zero-probability entries is taken as 0."""
    pd = probs.data
    if pd.ndim != 1:
        raise DimensionError(f"categorical_entropy: need a vector, got shape {pd.shape}")
    pos = pd > 0.0
    logs = np.zeros_like(pd)
    logs[pos] = np.log(pd[pos])
    out = -np.asarray((pd * logs).sum())

    def bwd(g):
        gp = np.zeros_like(pd)
        gp[pos] = -float(g) * (logs[pos] + 1.0)
        return (gp,)

    return _make("categorical_entropy", (probs,), out, bwd)


# ---------------------------------------------------------------------------
# stochastic relaxation


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel noise, -log(-log(u)), with u clipped away from
    {0, 1} so both logs stay finite."""
    u = rng.random(shape)
    u = np.clip(u, GUMBEL_CLIP, 1.0 - GUMBEL_CLIP)
    return -np.log(-np.log(u))


def gumbel_softmax_binary(logits: Tensor, temperature: float, hard: bool = True,
                          noise=None) -> Tensor:
    """Row-wise binary Gumbel-softmax over a d x 2 logit matrix.

    hard=True returns one-hot rows chosen by argmax while the backward pass
    uses the soft relaxation's Jacobian (straight-through).  noise may be a
    precomputed d x 2 Gumbel array (replay), a Generator, or None to draw
    from the active graph's generator.
    """
    if temperature <= 0.0:
        raise ConfigError(f"gumbel_softmax_binary: temperature must be positive, got {temperature}")
    ld = logits.data
    if ld.ndim != 2 or ld.shape[1] != 2:
        raise DimensionError(f"gumbel_softmax_binary: need a d x 2 matrix, got shape {ld.shape}")
    if noise is None:
        g = active_graph()
        if g is None:
            raise InvariantError("gumbel_softmax_binary: no noise source and no active graph")
        gn = sample_gumbel(g.rng, ld.shape)
    elif isinstance(noise, np.random.Generator):
        gn = sample_gumbel(noise, ld.shape)
    else:
        gn = np.asarray(noise, dtype=np.float64)
        if gn.shape != ld.shape:
            raise DimensionError(f"gumbel_softmax_binary: noise {gn.shape} does not match logits {ld.shape}")

    z = (ld + gn) / temperature
    ez = np.exp(z - z.max(axis=1, keepdims=True))
    soft = ez / ez.sum(axis=1, keepdims=True)
    if hard:
        out = np.zeros_like(soft)
        out[np.arange(ld.shape[0]), soft.argmax(axis=1)] = 1.0
    else:
        out = soft

    def bwd(g):
        gz = soft * (g - (g * soft).sum(axis=1, keepdims=True))
        return (gz / temperature,)

    return _make("gumbel_softmax_binary", (logits,), out, bwd)
