"""Finite-difference gradient verification.

check_gradients compares tape gradients against central differences
(h = 1e-5 by default) for an arbitrary scalar-valued closure.  run_suite
sweeps every layer kind over many randomly drawn instances; both the CLI
gradcheck subcommand and the acceptance tests call it.

The relative error uses a floored denominator: the finite-difference
estimate itself carries absolute noise around 1e-10, so comparing
near-zero gradients against it at full relative strictness would flag
healthy code.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layers, tensor as T
from .tensor import Graph, Tensor

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
REL_FLOOR = 1e-3


def check_gradients(make_loss, params, h: float = DEFAULT_H,
                    floor: float = REL_FLOOR) -> float:
    """Max relative error between tape gradients and central differences.

    make_loss() must rebuild the scalar loss from the current parameter
    values on every call; params is the list of Tensors to perturb.
    """
    for p in params:
        p.zero_grad()
    with Graph() as g:
        loss = make_loss()
    g.backward(loss)
    analytic = [np.array(p.grad, copy=True) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = make_loss().item()
            flat[i] = orig - h
            down = make_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(ga_flat[i] - numeric) / max(abs(ga_flat[i]) + abs(numeric), floor)
            if err > worst:
                worst = err
    return worst


# ---------------------------------------------------------------------------
# layer suite


def _case_linear_vector(rng):
    w = layers.uniform_init(rng, (4, 6), 6)
    b = layers.uniform_init(rng, (4,), 6)
    x = T.make_param(rng.standard_normal(6))
    coef = Tensor(rng.standard_normal(4))

    def loss():
        return T.sum_all(T.mul(T.linear(x, w, b), coef))
    return [x, w, b], loss


def _case_linear_rows(rng):
    w = layers.uniform_init(rng, (3, 5), 5)
    b = layers.uniform_init(rng, (3,), 5)
    x = T.make_param(rng.standard_normal((4, 5)))
    coef = Tensor(rng.standard_normal((4, 3)))

    def loss():
        return T.sum_all(T.mul(T.linear(x, w, b), coef))
    return [x, w, b], loss


def _case_gru_cell(rng):
    p = layers.init_gru_params(rng, 5, 4)
    x = T.make_param(rng.standard_normal(5))
    h = T.make_param(rng.standard_normal(4))
    coef = Tensor(rng.standard_normal(4))

    def loss():
        return T.sum_all(T.mul(layers.gru_cell_step(x, h, p), coef))
    return [x, h] + [t for _, t in p.items("g")], loss


def _attention_case(rng, mask_vals, n_heads):
    p = layers.init_attention_params(rng, 6, 4, 4, n_heads=n_heads)
    src = T.make_param(rng.standard_normal((5, 6)))
    mask = Tensor(mask_vals) if mask_vals is not None else None
    coef = Tensor(rng.standard_normal(4))

    def loss():
        q, k, v = layers.build_qkv(src, p)
        h1, _ = layers.scaled_dot_attention(q, k, v, mask=mask, n_heads=n_heads)
        return T.sum_all(T.mul(h1, coef))
    return [src] + [t for _, t in p.items("a")], loss


def _case_attention_plain(rng):
    return _attention_case(rng, None, 1)


def _case_attention_masked(rng):
    mask = (rng.random(5) < 0.6).astype(np.float64)
    return _attention_case(rng, mask, 1)


def _case_attention_two_heads(rng):
    return _attention_case(rng, None, 2)


def _case_mask_generator(rng):
    # The straight-through hard mode is discontinuous in the forward pass by
    # construction and defines its backward as the soft Jacobian, so the
    # finite-difference comparison runs the soft path with the noise frozen.
    p = layers.init_mask_gen_params(rng, 5, 4, hidden=6)
    h2 = T.make_param(rng.standard_normal(5))
    noise = T.sample_gumbel(rng, (4, 2))
    coef = Tensor(rng.standard_normal(4))

    def loss():
        m = layers.generate_binary_mask(h2, p, hard=False, noise=noise)
        return T.sum_all(T.mul(m, coef))
    return [h2] + [t for _, t in p.items("m")], loss


def _case_mlp_head(rng):
    p = layers.init_mlp_params(rng, 5, 6, 3)
    x = T.make_param(rng.standard_normal(5))
    coef = Tensor(rng.standard_normal(3))

    def loss():
        probs = T.softmax(layers.mlp_forward(x, p))
        return T.sum_all(T.mul(probs, coef))
    return [x] + [t for _, t in p.items("h")], loss


def _case_losses(rng):
    probs_logits = T.make_param(rng.standard_normal(4))
    pred = T.make_param(rng.standard_normal(3))
    target = rng.standard_normal(3)

    def loss():
        probs = T.softmax(probs_logits)
        pieces = [T.categorical_log_prob(probs, 1),
                  T.categorical_entropy(probs),
                  T.mse(pred, target)]
        return T.sum_all(T.stack_scalars(pieces))
    return [probs_logits, pred], loss


LAYER_CASES = (
    ("linear_vector", _case_linear_vector),
    ("linear_rows", _case_linear_rows),
    ("gru_cell", _case_gru_cell),
    ("attention", _case_attention_plain),
    ("attention_masked", _case_attention_masked),
    ("attention_two_heads", _case_attention_two_heads),
    ("mask_generator", _case_mask_generator),
    ("mlp_head", _case_mlp_head),
    ("losses", _case_losses),
)


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < DEFAULT_TOL


def run_suite(instances_per_case: int = 12, seed: int = 0,
              tol: float = DEFAULT_TOL) -> list[SuiteResult]:
    """Run every layer case instances_per_case times with fresh draws."""
    results = []
    for idx, (name, case) in enumerate(LAYER_CASES):
        start = time.perf_counter()
        worst = 0.0
        for k in range(instances_per_case):
            rng = np.random.default_rng([seed, idx, k])
            params, loss = case(rng)
            worst = max(worst, check_gradients(loss, params))
        results.append(SuiteResult(name, instances_per_case, worst,
                                   time.perf_counter() - start))
    return results
