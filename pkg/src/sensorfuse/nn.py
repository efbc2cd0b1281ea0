"""Minimal dense-network stack: deterministic, gradient-verified, numpy only.

Everything trains full-batch math on mini-batch slices: forward passes are
pure, running batch-norm statistics update only through an explicit call in
the training loop, and all randomness flows from one seeded generator. The
input-Jacobian regularizer evaluates the network in eval mode (frozen
normalization buffers), so its parameter gradient is exact and finite-
difference checkable; the task losses use train-mode statistics as usual.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BatchTooSmall,
    NonFiniteInput,
    NonFiniteLoss,
    SchemaMismatch,
    ShapeMismatch,
    UnknownLabel,
)

ACTIVATIONS = ("relu", "tanh", "identity", "softmax-output")


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-8  # small enough to keep unit output variance to 1e-6

    @classmethod
    def identity(cls, width: int) -> "BatchNormState":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str
    bn: BatchNormState | None = None


@dataclass
class DenseNet:
    layers: list[Layer]
    schema_fingerprint: str = ""

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.activation == "softmax-output" and i != len(self.layers) - 1:
                raise ValueError("softmax-output is only valid on the final layer")
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")
            if i > 0 and self.layers[i - 1].w.shape[1] != layer.w.shape[0]:
                raise ValueError(f"layer {i - 1}->{i}: shapes do not compose")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[1]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    jacobian_coeff: float = 0.0
    task_weight: float | str = 1.0  # fixed scale, or "adaptive" uncertainty weighting
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs, batch_size must be positive")
        if self.jacobian_coeff < 0:
            raise ValueError("jacobian_coeff must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not (self.task_weight == "adaptive"
                or (isinstance(self.task_weight, (int, float)) and self.task_weight > 0)):
            raise ValueError("task_weight must be positive or 'adaptive'")


@dataclass
class LossReport:
    task: list[float] = field(default_factory=list)
    regularizer: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"task": self.task, "regularizer": self.regularizer, "total": self.total}


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def init_dense(sizes, final_activation, hidden_activation="relu",
               batch_norm=False, seed=0) -> DenseNet:
    """He-style uniform init, biases zero, one generator drawn layer by layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        is_last = i == len(sizes) - 2
        act = final_activation if is_last else hidden_activation
        bn = BatchNormState.identity(fan_out) if batch_norm and not is_last else None
        layers.append(Layer(w, np.zeros(fan_out), act, bn))
    return DenseNet(layers)


def make_classifier(input_dim, n_classes, hidden=(64, 64), batch_norm=False, seed=0):
    return init_dense((input_dim, *hidden, n_classes), "softmax-output",
                      batch_norm=batch_norm, seed=seed)


def make_regressor(input_dim, output_dim, hidden=(64, 64), batch_norm=False, seed=0):
    return init_dense((input_dim, *hidden, output_dim), "identity",
                      batch_norm=batch_norm, seed=seed)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _act(z, tag):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z  # identity; softmax handled at the output boundary


def _act_prime(z, tag):
    if tag == "relu":
        return (z > 0.0).astype(np.float64)
    if tag == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def _act_second(z, tag):
    if tag == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(z)  # relu (a.e.) and identity


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def batchnorm_forward(state: BatchNormState, batch, mode="train",
                      update_running=False):
    """Normalize a batch by batch stats (train) or running stats (eval).

    Variance is the population estimate in both paths so the two modes agree
    exactly when the running buffers equal the batch statistics. Buffers
    mutate only when update_running is set.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.gamma.size:
        raise ShapeMismatch(f"batch width {x.shape} != feature count {state.gamma.size}")
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("train-mode batch normalization needs >= 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            m = state.momentum
            state.running_mean = (1 - m) * state.running_mean + m * mean
            state.running_var = (1 - m) * state.running_var + m * var
    else:
        mean, var = state.running_mean, state.running_var
    x_hat = (x - mean) / np.sqrt(var + state.epsilon)
    return state.gamma * x_hat + state.beta


@dataclass
class _LayerCache:
    x_in: np.ndarray
    z: np.ndarray  # affine output
    z_bn: np.ndarray  # post-normalization pre-activation (= z without bn)
    x_out: np.ndarray
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None


def _forward_caches(net: DenseNet, batch, mode) -> list[_LayerCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeMismatch(f"batch shape {x.shape} does not feed input_dim {net.input_dim}")
    if not np.isfinite(x).all():
        raise NonFiniteInput("batch contains non-finite values")
    caches = []
    for layer in net.layers:
        z = x @ layer.w + layer.b
        bn_mean = bn_var = None
        if layer.bn is not None:
            st = layer.bn
            if mode == "train":
                if z.shape[0] < 2:
                    raise BatchTooSmall("train-mode batch normalization needs >= 2 rows")
                bn_mean, bn_var = z.mean(axis=0), z.var(axis=0)
            else:
                bn_mean, bn_var = st.running_mean, st.running_var
            z_bn = st.gamma * (z - bn_mean) / np.sqrt(bn_var + st.epsilon) + st.beta
        else:
            z_bn = z
        if layer.activation == "softmax-output":
            x_out = softmax(z_bn)
        else:
            x_out = _act(z_bn, layer.activation)
        caches.append(_LayerCache(x, z, z_bn, x_out, bn_mean, bn_var))
        x = x_out
    return caches


def forward(net: DenseNet, batch, mode="eval"):
    """Run the network; pure (running statistics never change here)."""
    return _forward_caches(net, batch, mode)[-1].x_out


def logits(net: DenseNet, batch, mode="eval"):
    """Final pre-softmax activations (equals forward for non-softmax nets)."""
    return _forward_caches(net, batch, mode)[-1].z_bn


def _update_running_stats(net: DenseNet, caches: list[_LayerCache]) -> None:
    for layer, cache in zip(net.layers, caches):
        if layer.bn is not None and cache.bn_mean is not None:
            st = layer.bn
            m = st.momentum
            st.running_mean = (1 - m) * st.running_mean + m * cache.bn_mean
            st.running_var = (1 - m) * st.running_var + m * cache.bn_var


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    with np.errstate(over="ignore"):  # inf surfaces as NonFiniteLoss upstream
        return float(np.mean((pred - target) ** 2))


def cross_entropy_loss(z, labels):
    """CE from logits via log-sum-exp; labels are int indices."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(z.shape[0]), labels]
    return float(np.mean(lse - picked))


def _grads_zero(net: DenseNet) -> dict:
    g = {}
    for i, layer in enumerate(net.layers):
        g[(i, "w")] = np.zeros_like(layer.w)
        g[(i, "b")] = np.zeros_like(layer.b)
        if layer.bn is not None:
            g[(i, "gamma")] = np.zeros_like(layer.bn.gamma)
            g[(i, "beta")] = np.zeros_like(layer.bn.beta)
    return g


def _backprop(net: DenseNet, caches: list[_LayerCache], d_zbn_out, mode) -> dict:
    """Parameter gradients given the loss gradient at the final pre-activation.

    Train-mode normalization backprop accounts for the batch statistics'
    dependence on the inputs; eval mode treats the buffers as constants.
    """
    grads = _grads_zero(net)
    d_zbn = d_zbn_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer, cache = net.layers[i], caches[i]
        if layer.bn is not None:
            st = layer.bn
            std_inv = 1.0 / np.sqrt(cache.bn_var + st.epsilon)
            x_hat = (cache.z - cache.bn_mean) * std_inv
            grads[(i, "gamma")] += (d_zbn * x_hat).sum(axis=0)
            grads[(i, "beta")] += d_zbn.sum(axis=0)
            d_xhat = d_zbn * st.gamma
            if mode == "train":
                n = cache.z.shape[0]
                dz = std_inv * (d_xhat - d_xhat.mean(axis=0)
                                - x_hat * (d_xhat * x_hat).mean(axis=0))
                del n
            else:
                dz = d_xhat * std_inv
        else:
            dz = d_zbn
        grads[(i, "w")] += cache.x_in.T @ dz
        grads[(i, "b")] += dz.sum(axis=0)
        if i > 0:
            dx = dz @ layer.w.T
            below = net.layers[i - 1]
            d_zbn = dx * _act_prime(caches[i - 1].z_bn, below.activation)
    return grads


def _task_loss_and_grads(net, x, y, loss_tag, mode):
    caches = _forward_caches(net, x, mode)
    n = x.shape[0]
    if loss_tag == "mse":
        pred = caches[-1].x_out
        if net.layers[-1].activation == "softmax-output":
            raise ValueError("mse training expects a non-softmax output layer")
        loss = mse_loss(pred, y)
        d_out = 2.0 * (pred - y) / pred.size
        d_zbn = d_out * _act_prime(caches[-1].z_bn, net.layers[-1].activation)
    elif loss_tag == "ce":
        z = caches[-1].z_bn
        loss = cross_entropy_loss(z, y)
        probs = softmax(z)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), y] = 1.0
        d_zbn = (probs - onehot) / n
    else:
        raise ValueError(f"unknown loss {loss_tag!r}")
    return loss, _backprop(net, caches, d_zbn, mode), caches


# ---------------------------------------------------------------------------
# input-Jacobian regularizer
# ---------------------------------------------------------------------------

def _input_gradients(net, caches, k):
    """d logits[:, k] / d input for every row at once (eval-mode caches)."""
    n = caches[-1].z_bn.shape[0]
    d_zbn = np.zeros_like(caches[-1].z_bn)
    d_zbn[:, k] = 1.0
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.bn is not None:
            st = layer.bn
            d_zbn = d_zbn * (st.gamma / np.sqrt(caches[i].bn_var + st.epsilon))
        dx = d_zbn @ layer.w.T
        if i > 0:
            d_zbn = dx * _act_prime(caches[i - 1].z_bn, net.layers[i - 1].activation)
    return dx


def jacobian_norm(net: DenseNet, batch) -> float:
    """Mean squared Frobenius norm of d logits / d input over the batch.

    One backward pass per output dimension; normalization layers contribute
    their frozen (eval-mode) diagonal scaling.
    """
    caches = _forward_caches(net, batch, "eval")
    total = 0.0
    for k in range(net.output_dim):
        g = _input_gradients(net, caches, k)
        total += float(np.mean(np.sum(g * g, axis=1)))
    return total


def _jacobian_grads(net: DenseNet, x) -> tuple[float, dict]:
    """Jacobian-norm value and exact parameter gradients (eval-mode network).

    For each output k: a reverse pass yields c = d logits_k / d input; a
    forward tangent pass along the constant direction c reproduces ||c||^2 as
    the directional derivative of logits_k; reversing over that joint
    primal+tangent computation and doubling gives d/d(theta) of ||c(theta)||^2.
    """
    caches = _forward_caches(net, x, "eval")
    n, n_layers = x.shape[0], len(net.layers)
    grads = _grads_zero(net)
    value = 0.0
    for k in range(net.output_dim):
        c = _input_gradients(net, caches, k)
        value += float(np.mean(np.sum(c * c, axis=1)))
        # tangent forward along constant c
        xdot = [c]  # tangent of layer inputs
        zdots, zbndots = [], []
        cur = c
        for i, layer in enumerate(net.layers):
            zdot = cur @ layer.w
            if layer.bn is not None:
                st = layer.bn
                a = st.gamma / np.sqrt(caches[i].bn_var + st.epsilon)
                zbndot = zdot * a
            else:
                zbndot = zdot
            zdots.append(zdot)
            zbndots.append(zbndot)
            if i < n_layers - 1:
                cur = zbndot * _act_prime(caches[i].z_bn, layer.activation)
            else:
                cur = zbndot  # logits tangent
            xdot.append(cur)
        # joint reverse: adjoints for tangent (ad_*) and primal (ap_*) signals
        ad_zbndot = np.zeros_like(zbndots[-1])
        ad_zbndot[:, k] = 1.0 / n
        ap_zbn = np.zeros_like(caches[-1].z_bn)
        for i in range(n_layers - 1, -1, -1):
            layer, cache = net.layers[i], caches[i]
            if layer.bn is not None:
                st = layer.bn
                std_inv = 1.0 / np.sqrt(cache.bn_var + st.epsilon)
                a = st.gamma * std_inv
                # tangent bn: zbndot = a * zdot, with a depending on gamma
                grads[(i, "gamma")] += 2.0 * (ad_zbndot * zdots[i] * std_inv).sum(axis=0)
                ad_zdot = ad_zbndot * a
                # primal bn: z_bn = a * (z - mean) + beta
                x_hat = (cache.z - cache.bn_mean) * std_inv
                grads[(i, "gamma")] += 2.0 * (ap_zbn * x_hat).sum(axis=0)
                grads[(i, "beta")] += 2.0 * ap_zbn.sum(axis=0)
                ap_z = ap_zbn * a
            else:
                ad_zdot = ad_zbndot
                ap_z = ap_zbn
            # tangent affine: zdot = xdot_in @ w
            grads[(i, "w")] += 2.0 * (xdot[i].T @ ad_zdot)
            ad_xdot_in = ad_zdot @ layer.w.T
            # primal affine: z = x_in @ w + b
            grads[(i, "w")] += 2.0 * (cache.x_in.T @ ap_z)
            grads[(i, "b")] += 2.0 * ap_z.sum(axis=0)
            ap_x_in = ap_z @ layer.w.T
            if i > 0:
                below, bcache = net.layers[i - 1], caches[i - 1]
                sp = _act_prime(bcache.z_bn, below.activation)
                spp = _act_second(bcache.z_bn, below.activation)
                # tangent activation: xdot_in = sp(z_bn) * zbndot_below
                ad_zbndot = ad_xdot_in * sp
                # primal route of the same node: depends on z_bn through sp
                ap_zbn = ap_x_in * sp + ad_xdot_in * spp * zbndots[i - 1]
            # xdot[0] = c is constant; x_in at i = 0 is the data: both drop
    return value, grads


# ---------------------------------------------------------------------------
# optimizers and the training loop
# ---------------------------------------------------------------------------

class _Optimizer:
    def __init__(self, cfg: TrainConfig, keys):
        self.lr = cfg.learning_rate
        self.kind = cfg.optimizer
        self.t = 0
        self.m = {k: None for k in keys}
        self.v = {k: None for k in keys}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for key, g in grads.items():
            p = params[key]
            if self.kind == "sgd":
                p -= self.lr * g
                continue
            if self.m[key] is None:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            b1, b2, eps = 0.9, 0.999, 1e-8
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            mhat = self.m[key] / (1 - b1 ** self.t)
            vhat = self.v[key] / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + eps)


def _param_views(net: DenseNet) -> dict:
    views = {}
    for i, layer in enumerate(net.layers):
        views[(i, "w")] = layer.w
        views[(i, "b")] = layer.b
        if layer.bn is not None:
            views[(i, "gamma")] = layer.bn.gamma
            views[(i, "beta")] = layer.bn.beta
    return views


def _train(net, x, y, cfg: TrainConfig, loss_tag):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if loss_tag == "mse":
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != n:
            raise ShapeMismatch(f"{n} inputs vs {y.shape[0]} targets")
        if y.shape[1] != net.output_dim:
            raise ShapeMismatch(f"target width {y.shape[1]} != output_dim {net.output_dim}")
    else:
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (n,):
            raise ShapeMismatch("labels must be one per row")
        if y.size and (y.min() < 0 or y.max() >= net.output_dim):
            raise UnknownLabel(f"labels outside 0..{net.output_dim - 1}")
    rng = np.random.default_rng(cfg.seed)
    params = _param_views(net)
    opt = _Optimizer(cfg, list(params))
    adaptive = cfg.task_weight == "adaptive"
    s = np.zeros(1)  # adaptive log-variance
    s_opt = _Optimizer(cfg, ["s"]) if adaptive else None
    report = LossReport()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ep_task, ep_reg, ep_total, n_batches = 0.0, 0.0, 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2 and n >= 2:
                continue  # leftover single row cannot feed train-mode statistics
            xb, yb = x[idx], y[idx]
            task, grads, caches = _task_loss_and_grads(net, xb, yb, loss_tag, "train")
            weight = float(np.exp(-s[0])) if adaptive else float(cfg.task_weight)
            for key in grads:
                grads[key] *= weight
            reg = 0.0
            if cfg.jacobian_coeff > 0.0:
                reg, jgrads = _jacobian_grads(net, xb)
                for key, g in jgrads.items():
                    grads[key] += cfg.jacobian_coeff * g
            total = weight * task + cfg.jacobian_coeff * reg + (float(s[0]) if adaptive else 0.0)
            if not np.isfinite(total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
            opt.step(params, grads)
            if adaptive:
                s_opt.step({"s": s}, {"s": np.array([1.0 - weight * task])})
            _update_running_stats(net, caches)
            ep_task += task
            ep_reg += reg
            ep_total += total
            n_batches += 1
        report.task.append(ep_task / max(n_batches, 1))
        report.regularizer.append(ep_reg / max(n_batches, 1))
        report.total.append(ep_total / max(n_batches, 1))
    return net, report


def train_regressor(net: DenseNet, x, y, cfg: TrainConfig = TrainConfig()):
    """Mini-batch MSE training; deterministic for a given cfg.seed."""
    return _train(net, x, y, cfg, "mse")


def train_classifier(net: DenseNet, x, labels, cfg: TrainConfig = TrainConfig()):
    """Mini-batch cross-entropy training, optionally Jacobian-regularized."""
    return _train(net, x, labels, cfg, "ce")


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def predict_labels(net: DenseNet, x) -> np.ndarray:
    return forward(net, x, mode="eval").argmax(axis=1)


def accuracy(net: DenseNet, x, labels) -> float:
    return float(np.mean(predict_labels(net, x) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def _full_loss(net, x, y, loss_tag, jacobian_coeff):
    if loss_tag == "mse":
        pred = forward(net, x, mode="train")
        loss = mse_loss(pred, y)
    else:
        loss = cross_entropy_loss(logits(net, x, mode="train"), y)
    if jacobian_coeff > 0.0:
        loss += jacobian_coeff * jacobian_norm(net, x)
    return loss


def grad_check(net: DenseNet, loss_tag, x, y, jacobian_coeff=0.0, h=1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    _, grads, _ = _task_loss_and_grads(net, x, y, loss_tag, "train")
    if jacobian_coeff > 0.0:
        _, jgrads = _jacobian_grads(net, x)
        for key, g in jgrads.items():
            grads[key] += jacobian_coeff * g
    params = _param_views(net)
    worst = 0.0
    for key, p in params.items():
        flat = p.ravel()
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = _full_loss(net, x, y, loss_tag, jacobian_coeff)
            flat[j] = keep - h
            down = _full_loss(net, x, y, loss_tag, jacobian_coeff)
            flat[j] = keep
            numeric = (up - down) / (2.0 * h)
            analytic = grads[key].ravel()[j]
            err = abs(analytic - numeric) / max(1e-6, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1


def save_net(net: DenseNet, path) -> None:
    """Versioned container: meta record plus flat little-endian float64 arrays."""
    meta = {
        "version": FORMAT_VERSION,
        "schema_fingerprint": net.schema_fingerprint,
        "activations": [l.activation for l in net.layers],
        "shapes": [list(l.w.shape) for l in net.layers],
        "batch_norm": [l.bn is not None for l in net.layers],
        "bn_momentum": [l.bn.momentum if l.bn else None for l in net.layers],
        "bn_epsilon": [l.bn.epsilon if l.bn else None for l in net.layers],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.w.astype("<f8")
        arrays[f"b{i}"] = layer.b.astype("<f8")
        if layer.bn is not None:
            arrays[f"gamma{i}"] = layer.bn.gamma.astype("<f8")
            arrays[f"beta{i}"] = layer.bn.beta.astype("<f8")
            arrays[f"rmean{i}"] = layer.bn.running_mean.astype("<f8")
            arrays[f"rvar{i}"] = layer.bn.running_var.astype("<f8")
    np.savez(path if hasattr(path, "write") else Path(path), **arrays)


def load_net(path, expect_fingerprint: str | None = None) -> DenseNet:
    with np.load(path if hasattr(path, "read") else Path(path)) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format version {meta['version']}")
        if expect_fingerprint is not None and meta["schema_fingerprint"] != expect_fingerprint:
            raise SchemaMismatch(
                f"model was fitted against schema {meta['schema_fingerprint'][:12]}..., "
                f"expected {expect_fingerprint[:12]}...")
        layers = []
        for i, act in enumerate(meta["activations"]):
            bn = None
            if meta["batch_norm"][i]:
                bn = BatchNormState(data[f"gamma{i}"].copy(), data[f"beta{i}"].copy(),
                                    data[f"rmean{i}"].copy(), data[f"rvar{i}"].copy(),
                                    meta["bn_momentum"][i], meta["bn_epsilon"][i])
            layers.append(Layer(data[f"w{i}"].copy(), data[f"b{i}"].copy(), act, bn))
        net = DenseNet(layers, schema_fingerprint=meta["schema_fingerprint"])
    return net
