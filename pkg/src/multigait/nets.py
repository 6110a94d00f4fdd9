"""Minimal float64 MLP with manual backprop, Adam, and the double-backprop
path needed to differentiate an input-gradient penalty.

Everything is numpy; weights are (fan_out, fan_in) and activations run
row-major over a batch.  The input-gradient machinery assumes ReLU hidden
units so the second derivative of the activation vanishes almost everywhere
and the penalty gradient has a closed form.
"""

import numpy as np


def orthogonal(rng, shape, gain=1.0):
    """Orthogonal weight init (QR of a Gaussian, sign-fixed), scaled by gain."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def elu(x):
    # expm1 only sees the negative branch so large inputs cannot overflow
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0.0).astype(np.float64)


_ACTIVATIONS = {"elu": (elu, elu_grad), "relu": (relu, relu_grad)}


class MLP:
    """Fully connected net with a linear output layer.

    layer_sizes = (in, hidden..., out).  Hidden layers share one activation;
    hidden weights start orthogonal with gain sqrt(2), the output layer with
    `out_gain` (small for policy means, 1 for value heads).
    """

    def __init__(self, layer_sizes, activation="elu", out_gain=1.0, rng=None):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = np.random.default_rng() if rng is None else rng
        self.sizes = tuple(int(s) for s in layer_sizes)
        self.activation = activation
        self.act, self.act_grad = _ACTIVATIONS[activation]
        self.weights = []
        self.biases = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            gain = out_gain if i == n_layers - 1 else np.sqrt(2.0)
            self.weights.append(orthogonal(rng, (self.sizes[i + 1], self.sizes[i]), gain))
            self.biases.append(np.zeros(self.sizes[i + 1]))

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params):
        for i, (w, b) in enumerate(zip(params[0::2], params[1::2])):
            self.weights[i][:] = w
            self.biases[i][:] = b

    def forward(self, x, want_cache=False):
        """Run the net; with want_cache=True also return what backward needs."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        pre, post = [], []
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w.T + b
            pre.append(z)
            h = self.act(z)
            post.append(h)
        y = h @ self.weights[-1].T + self.biases[-1]
        if want_cache:
            return y, {"x": x, "pre": pre, "post": post}
        return y

    def __call__(self, x):
        return self.forward(x)

    def backward(self, cache, grad_out):
        """Backprop a loss gradient through the cached forward pass.

        grad_out is dL/dy (batch rows); returns (param_grads, input_grad)
        where param_grads matches the `params` ordering and sums over the
        batch (callers fold in any 1/N themselves).
        """
        grad_out = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        acts = [cache["x"]] + cache["post"]
        grads = [None] * (2 * len(self.weights))
        up = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = up.T @ acts[i]
            grads[2 * i + 1] = up.sum(axis=0)
            up = up @ self.weights[i]
            if i > 0:
                up = up * self.act_grad(cache["pre"][i - 1])
        return grads, up

    def input_gradient(self, cache):
        """d(output)/d(input) rows for a scalar-output net."""
        if self.sizes[-1] != 1:
            raise ValueError("input_gradient expects a scalar output head")
        n = cache["x"].shape[0]
        _, g = self.backward(cache, np.ones((n, 1)))
        return g

    def zeros_like_params(self):
        return [np.zeros_like(p) for p in self.params]


def gradient_penalty(net, x):
    """Mean squared input-gradient of a scalar-output ReLU net, with its
    exact parameter gradient.

    Returns (per-sample penalty values, param grads of the batch mean).  The
    parameter gradient treats the ReLU gating pattern as locally constant,
    which is exact away from the (measure-zero) kinks; bias gradients are
    identically zero because the input gradient never sees them.
    """
    if net.activation != "relu":
        raise ValueError("gradient penalty backward requires relu hidden units")
    if net.sizes[-1] != 1:
        raise ValueError("gradient penalty expects a scalar output head")
    _, cache = net.forward(x, want_cache=True)
    n = cache["x"].shape[0]
    masks = [relu_grad(z) for z in cache["pre"]]
    n_layers = len(net.weights)

    # reverse sweep: u_k = d(output)/d(pre-activation k), with masks frozen
    us = [None] * n_layers
    u = np.ones((n, 1))
    us[n_layers - 1] = u
    for i in range(n_layers - 2, -1, -1):
        u = (u @ net.weights[i + 1]) * masks[i]
        us[i] = u
    g = us[0] @ net.weights[0]
    values = np.sum(g * g, axis=1)

    # tangent sweep: push g forward through the frozen-mask linearization
    grads = net.zeros_like_params()
    t = g
    for k in range(n_layers):
        grads[2 * k] = (2.0 / n) * np.einsum("na,nb->ab", us[k], t)
        if k < n_layers - 1:
            t = (t @ net.weights[k].T) * masks[k]
    return values, grads


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def flatten_params(params):
    """Concatenate arrays into one vector (for finite-difference checks)."""
    return np.concatenate([p.reshape(-1) for p in params])


def unflatten_params(vector, like):
    """Split a flat vector back into arrays shaped like `like`."""
    out, pos = [], 0
    for p in like:
        out.append(np.asarray(vector[pos:pos + p.size]).reshape(p.shape))
        pos += p.size
    if pos != len(vector):
        raise ValueError("vector length does not match parameter shapes")
    return out
