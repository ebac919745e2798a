"""Deterministic numeric core: dense nets with hand-written gradients,
softmax / cross-entropy, Adam with decoupled weight decay, a cyclical
learning-rate schedule, Glorot init, and a finite-difference checker.

Everything is double precision and seeded; repeated runs are bit-identical.
"""

import numpy as np

_ACTIVATIONS = ("relu", "identity")


class DenseLayer:
    """One affine layer y = act(W x + b), W is [out, in]."""

    def __init__(self, w, b, activation="relu"):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(
                f"layer shapes inconsistent: W {w.shape}, b {b.shape}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        self.w = w
        self.b = b
        self.activation = activation

    @property
    def in_dim(self):
        return self.w.shape[1]

    @property
    def out_dim(self):
        return self.w.shape[0]


class DenseNet:
    """Stack of DenseLayers with chained dimensions."""

    def __init__(self, layers, seed=0):
        if not layers:
            raise ValueError("need at least one layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ValueError(
                    f"layer {k} expects input dim {layers[k].in_dim}, "
                    f"layer {k - 1} produces {layers[k - 1].out_dim}")
        self.layers = list(layers)
        self.seed = seed

    @classmethod
    def init(cls, dims, seed, out_activation="identity"):
        """Glorot-initialized net: hidden layers relu, final `out_activation`.

        dims = [in, hidden..., out]; biases start at zero.
        """
        if len(dims) < 2:
            raise ValueError("dims must list input and output sizes")
        layers = []
        for k in range(len(dims) - 1):
            act = out_activation if k == len(dims) - 2 else "relu"
            w = glorot_init((dims[k + 1], dims[k]), seed + k)
            layers.append(DenseLayer(w, np.zeros(dims[k + 1]), act))
        return cls(layers, seed=seed)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def params(self):
        """Live parameter arrays, [w0, b0, w1, b1, ...]."""
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out


class ForwardCache:
    """Activations recorded by dense_forward, consumed by dense_backward."""

    def __init__(self, net, inputs, pre, post, batched):
        self.net = net
        self.inputs = inputs      # per-layer inputs, inputs[0] is x
        self.pre = pre            # pre-activation z per layer
        self.post = post          # post-activation per layer
        self.batched = batched


def dense_forward(net, x):
    """Run the net; returns (output, cache).

    x may be a single vector or a [batch, in] matrix; the output and any
    later grad_out follow the same shape.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2):
        raise ValueError(f"input must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[-1] != net.in_dim:
        raise ValueError(
            f"input dim {x.shape[-1]} does not match net input {net.in_dim}")
    h = x if batched else x[None, :]
    inputs, pre, post = [h], [], []
    for layer in net.layers:
        z = h @ layer.w.T + layer.b
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        pre.append(z)
        post.append(h)
        inputs.append(h)
    cache = ForwardCache(net, inputs, pre, post, batched)
    out = h if batched else h[0]
    return out, cache


def dense_backward(net, cache, grad_out):
    """Backprop through a recorded forward pass.

    Returns (grads, grad_in) where grads matches net.params() order.
    """
    if not isinstance(cache, ForwardCache) or cache.net is not net:
        raise ValueError("cache does not belong to this net")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.batched:
        if g.shape != cache.post[-1].shape:
            raise ValueError(
                f"grad_out shape {g.shape} != output {cache.post[-1].shape}")
    else:
        if g.shape != (net.out_dim,):
            raise ValueError(
                f"grad_out shape {g.shape} != output ({net.out_dim},)")
        g = g[None, :]
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            g = g * (cache.pre[k] > 0.0)
        grads[2 * k] = g.T @ cache.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ layer.w
    grad_in = g if cache.batched else g[0]
    return grads, grad_in


def softmax(z):
    """Stable softmax along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(z)):
        raise ValueError("softmax input contains NaN")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    """log(softmax(z)) along the last axis, computed without underflow."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(z)):
        raise ValueError("log_softmax input contains NaN")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(log_probs, label):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < log_probs.shape[-1]:
        raise ValueError(
            f"label {label} out of range for {log_probs.shape[-1]} classes")
    return float(-log_probs[label])


class OptimizerState:
    """Adam moments plus step counter and decay settings."""

    def __init__(self, m, v, t=0, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 weight_decay=2e-5):
        self.m = m
        self.v = v
        self.t = t
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay

    @classmethod
    def for_params(cls, params, **kwargs):
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        return cls(m, v, **kwargs)


def adam_step(params, grads, state, lr):
    """One in-place Adam update with decoupled weight decay.

    Decay is applied directly to the parameters (param -= lr*wd*param)
    before the moment-based step, so the moments never see it.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p -= lr * state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


class LrSchedule:
    def __init__(self, base_lr=1e-8, max_lr=1e-2, step_size=1,
                 mode="triangular2"):
        if mode not in ("triangular2", "constant"):
            raise ValueError(f"unknown schedule mode {mode!r}")
        if step_size < 1:
            raise ValueError("step_size must be >= 1")
        if max_lr < base_lr:
            raise ValueError("max_lr must be >= base_lr")
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.step_size = int(step_size)
        self.mode = mode


def cyclical_lr(schedule, batch_index):
    """Learning rate at global batch t.

    triangular2: rises base->max over step_size batches, falls back over
    the next step_size, and the peak amplitude halves every full cycle.
    Integer arithmetic in the phase so lr(2k*step_size) == base_lr exactly.
    """
    t = int(batch_index)
    if t < 0:
        raise ValueError("batch_index must be >= 0")
    if schedule.mode == "constant":
        return schedule.base_lr
    ss = schedule.step_size
    cycle = t // (2 * ss)
    pos = t % (2 * ss)
    tri = 1.0 - abs(pos - ss) / ss
    return schedule.base_lr + (schedule.max_lr - schedule.base_lr) * tri * (0.5 ** cycle)


def glorot_init(shape, seed):
    """Uniform Glorot matrix, bound sqrt(6/(fan_in+fan_out))."""
    out_dim, in_dim = int(shape[0]), int(shape[1])
    if out_dim <= 0 or in_dim <= 0:
        raise ValueError(f"dims must be positive, got {shape}")
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def finite_diff_check(loss_and_grad, params, eps=1e-5, floor_scale=1e-4):
    """Max relative error between analytic and central-difference gradients.

    loss_and_grad(params) -> (loss, grads), grads shaped like params.
    The relative error denominator is floored at floor_scale * the overall
    gradient magnitude so coordinates that happen to sit near zero do not
    blow the ratio up on finite-difference noise.
    """
    loss0, grads = loss_and_grad(params)
    if not np.isfinite(loss0):
        raise ValueError("loss is not finite at the given parameters")
    gmax = max((float(np.max(np.abs(g))) for g in grads), default=0.0)
    floor = floor_scale * max(1.0, gmax)
    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        gflat = np.asarray(grads[k]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_and_grad(params)[0]
            flat[i] = orig - eps
            lm = loss_and_grad(params)[0]
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError("loss is not finite near the given parameters")
            fd = (lp - lm) / (2.0 * eps)
            an = gflat[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), floor)
            worst = max(worst, rel)
    return worst
