"""Gradient-check cases: one scalar function per differentiable op.

Each case returns ``(f, x)`` where ``f`` maps the probed tensor to a scalar.
Other operands are fixed random constants; a random weighting ``w`` turns
tensor outputs into scalars without hiding any gradient component.
"""

from __future__ import annotations

import numpy as np

from pmcrypto import autograd as ag
from pmcrypto.autograd import Tensor, grad_check


def _shape(rng, ndim=None):
    ndim = ndim or int(rng.integers(1, 4))
    return tuple(int(n) for n in rng.integers(1, 9, size=ndim))


def _weighted(out_shape, rng):
    w = Tensor(rng.normal(size=out_shape))
    return lambda t: (t * w).sum()


def _unary(op, positive=False, away_from_zero=False):
    def build(rng):
        shape = _shape(rng)
        x = rng.normal(size=shape)
        if positive:
            x = np.abs(x) + 0.5
        if away_from_zero:
            x = np.where(np.abs(x) < 0.1, 0.5, x)
        reduce = _weighted(shape, rng)
        return (lambda t: reduce(op(t))), Tensor(x)
    return build


def _binary(op, side, positive_other=False):
    def build(rng):
        shape = _shape(rng)
        # Broadcast the constant operand over a random subset of axes.
        other_shape = tuple(1 if rng.random() < 0.4 else n for n in shape)
        other = rng.normal(size=other_shape)
        if positive_other:
            other = np.abs(other) + 0.5
        x = rng.normal(size=shape)
        reduce = _weighted(shape, rng)
        if side == 0:
            return (lambda t: reduce(op(t, Tensor(other)))), Tensor(x)
        probe = Tensor(other)
        const = Tensor(x)
        return (lambda t: reduce(op(const, t))), probe
    return build


def _matmul(side):
    def build(rng):
        b, m, k, n = (int(v) for v in rng.integers(1, 9, size=4))
        a = rng.normal(size=(b, m, k))
        c = rng.normal(size=(k, n))
        reduce = _weighted((b, m, n), rng)
        if side == 0:
            return (lambda t: reduce(ag.matmul(t, Tensor(c)))), Tensor(a)
        return (lambda t: reduce(ag.matmul(Tensor(a), t))), Tensor(c)
    return build


def _axis_op(name):
    def build(rng):
        shape = _shape(rng, 3)
        x = rng.normal(size=shape)
        if name == "sum":
            axis = int(rng.integers(0, 3))
            out_shape = tuple(n for i, n in enumerate(shape) if i != axis)
            reduce = _weighted(out_shape, rng)
            return (lambda t: reduce(ag.sum_(t, axis))), Tensor(x)
        if name == "mean":
            reduce = _weighted(shape[:2] + (1,), rng)
            return (lambda t: reduce(ag.mean(t, -1, keepdims=True))), Tensor(x)
        if name == "transpose":
            axes = tuple(int(a) for a in rng.permutation(3))
            reduce = _weighted(tuple(shape[a] for a in axes), rng)
            return (lambda t: reduce(ag.transpose(t, axes))), Tensor(x)
        if name == "swapaxes":
            reduce = _weighted((shape[2], shape[1], shape[0]), rng)
            return (lambda t: reduce(ag.swapaxes(t, 0, 2))), Tensor(x)
        if name == "reshape":
            reduce = _weighted((shape[0] * shape[1], shape[2]), rng)
            return (lambda t: reduce(t.reshape(shape[0] * shape[1], shape[2]))), Tensor(x)
        if name == "concat":
            other = Tensor(rng.normal(size=(shape[0], 3, shape[2])))
            reduce = _weighted((shape[0], shape[1] + 3, shape[2]), rng)
            return (lambda t: reduce(ag.concat([other, t], axis=1))), Tensor(x)
        if name == "slice":
            reduce = _weighted((shape[0], shape[1], (shape[2] + 1) // 2), rng)
            return (lambda t: reduce(t[:, :, ::2])), Tensor(x)
        if name == "gather":
            ids = rng.integers(0, shape[0], size=5)
            reduce = _weighted((5,) + shape[1:], rng)
            return (lambda t: reduce(t[ids])), Tensor(x)
        if name == "softmax":
            reduce = _weighted(shape, rng)
            return (lambda t: reduce(ag.softmax(t))), Tensor(x)
        raise KeyError(name)
    return build


def _layer_norm(part):
    def build(rng):
        shape = _shape(rng, 3)
        n = shape[-1] + 1
        shape = shape[:-1] + (n,)
        x = rng.normal(size=shape)
        gamma = rng.normal(size=n)
        beta = rng.normal(size=n)
        reduce = _weighted(shape, rng)
        if part == "input":
            return (lambda t: reduce(ag.layer_norm(t, Tensor(gamma), Tensor(beta)))), Tensor(x)
        if part == "gamma":
            return (lambda t: reduce(ag.layer_norm(Tensor(x), t, Tensor(beta)))), Tensor(gamma)
        return (lambda t: reduce(ag.layer_norm(Tensor(x), Tensor(gamma), t))), Tensor(beta)
    return build


def _dropout(rng):
    shape = _shape(rng)
    x = rng.normal(size=shape)
    reduce = _weighted(shape, rng)
    seed = int(rng.integers(1 << 30))
    # A fresh stream with the same seed reproduces the mask on every call.
    return (lambda t: reduce(ag.dropout(t, 0.7, np.random.default_rng(seed), True))), Tensor(x)


OP_CASES = {
    "add.lhs": _binary(ag.add, 0), "add.rhs": _binary(ag.add, 1),
    "sub.lhs": _binary(ag.sub, 0), "sub.rhs": _binary(ag.sub, 1),
    "mul.lhs": _binary(ag.mul, 0), "mul.rhs": _binary(ag.mul, 1),
    "div.lhs": _binary(ag.div, 0, positive_other=True),
    "div.rhs": _binary(lambda a, b: ag.div(a, ag.add(ag.mul(b, b), 0.5)), 1),
    "scale": _unary(lambda t: ag.scale(t, -2.5)),
    "power": _unary(lambda t: ag.power(t, 3.0)),
    "exp": _unary(ag.exp),
    "log": _unary(ag.log, positive=True),
    "relu": _unary(ag.relu, away_from_zero=True),
    "gelu": _unary(ag.gelu),
    "dropout": _dropout,
    "sum": _axis_op("sum"), "mean": _axis_op("mean"),
    "matmul.lhs": _matmul(0), "matmul.rhs": _matmul(1),
    "transpose": _axis_op("transpose"), "swapaxes": _axis_op("swapaxes"),
    "reshape": _axis_op("reshape"), "concat": _axis_op("concat"),
    "slice": _axis_op("slice"), "gather": _axis_op("gather"),
    "softmax": _axis_op("softmax"),
    "layer_norm.input": _layer_norm("input"), "layer_norm.gamma": _layer_norm("gamma"),
    "layer_norm.beta": _layer_norm("beta"),
}


def composition_grad_errors(config, seed: int = 0, training: bool = True) -> dict[str, float]:
    """grad_check of PMformer forward + MSE loss with respect to every parameter.

    With ``training`` set, dropout masks come from a stream re-seeded on
    each evaluation so every finite-difference probe sees the same masks.
    """
    from pmcrypto.pmformer import forward, init_params
    from pmcrypto.training import mse_loss

    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    ids = rng.choice(config.n_features, config.subset_size, replace=False)
    window = rng.uniform(size=(2, config.seq_len, config.subset_size))
    target = rng.uniform(size=(2, config.subset_size))

    errors = {}
    for name in sorted(params):
        probe = params[name]

        def loss(t, name=name):
            trial = dict(params)
            trial[name] = t
            stream = np.random.default_rng(seed + 1)
            return mse_loss(forward(window, ids, trial, config, stream, training), target)

        errors[name] = grad_check(loss, probe)
    return errors
