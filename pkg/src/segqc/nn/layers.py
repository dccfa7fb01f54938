"""Layer objects with explicit forward/backward passes.

Each layer caches what its backward needs during forward; ``backward(dy)``
returns the input gradient and accumulates parameter gradients into
``Parameter.grad``.  Activations are batched channel-first arrays.

Weight init is Kaiming-uniform (bound sqrt(6 / fan_in)); biases and batch
norm shifts start at zero, batch norm scales at one.
"""

import numpy as np

from . import ops


class Parameter:
    """A named tensor with an accumulated gradient."""

    def __init__(self, value, name, trainable=True):
        self.value = np.asarray(value)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    @property
    def size(self):
        return self.value.size


class Layer:
    def params(self):
        return []

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv(Layer):
    """2D/3D convolution (cross-correlation), padding 0 <= p <= k-1."""

    def __init__(self, d, c_in, c_out, kernel, stride=1, padding=0, bias=True,
                 rng=None, dtype=np.float32, name="conv"):
        rng = rng or np.random.default_rng()
        self.d = d
        kernel = ops._as_tuple(kernel, d, "kernel")
        self.stride = ops._as_tuple(stride, d, "stride")
        self.padding = ops._as_tuple(padding, d, "padding")
        fan_in = c_in * int(np.prod(kernel))
        self.weight = Parameter(
            _kaiming_uniform(rng, (c_out, c_in) + kernel, fan_in, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), f"{name}.bias") if bias else None
        self._x = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def forward(self, x, train=False):
        self._x = x
        return ops.conv_forward(x, self.weight.value,
                                self.bias.value if self.bias else None,
                                self.stride, self.padding)

    def backward(self, dy):
        x = self._x
        self.weight.grad += ops.conv_weight_grad(x, dy, self.stride, self.padding,
                                                 self.weight.value.shape[2:])
        if self.bias:
            self.bias.grad += dy.sum(axis=(0,) + tuple(range(2, dy.ndim)))
        return ops.conv_input_grad(dy, self.weight.value, self.stride, self.padding,
                                   x.shape[2:])


class ConvTranspose(Layer):
    """Stride-s transposed convolution; exact adjoint of Conv.

    Weight layout is (c_in, c_out, *K); output extent per axis is
    (in - 1) * s - 2p + k + output_padding with output_padding < s.
    """

    def __init__(self, d, c_in, c_out, kernel, stride=2, padding=1, output_padding=0,
                 bias=True, rng=None, dtype=np.float32, name="convT"):
        rng = rng or np.random.default_rng()
        self.d = d
        kernel = ops._as_tuple(kernel, d, "kernel")
        self.stride = ops._as_tuple(stride, d, "stride")
        self.padding = ops._as_tuple(padding, d, "padding")
        self.output_padding = ops._as_tuple(output_padding, d, "output_padding")
        if any(o < 0 or o >= s for o, s in zip(self.output_padding, self.stride)):
            raise ValueError(
                f"output_padding must satisfy 0 <= op < stride, got {self.output_padding}")
        fan_in = c_out * int(np.prod(kernel))
        self.weight = Parameter(
            _kaiming_uniform(rng, (c_in, c_out) + kernel, fan_in, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), f"{name}.bias") if bias else None
        self._x = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def out_spatial(self, in_spatial):
        return tuple(
            (n - 1) * s - 2 * p + k + o
            for n, s, p, k, o in zip(in_spatial, self.stride, self.padding,
                                     self.weight.value.shape[2:], self.output_padding)
        )

    def forward(self, x, train=False):
        if x.shape[1] != self.weight.value.shape[0]:
            raise ValueError(
                f"channel mismatch: input {x.shape} vs weight {self.weight.value.shape}")
        self._x = x
        y = ops.conv_input_grad(x, self.weight.value, self.stride, self.padding,
                                self.out_spatial(x.shape[2:]))
        if self.bias:
            y = y + self.bias.value.reshape((1, -1) + (1,) * self.d)
        return y

    def backward(self, dy):
        x = self._x
        self.weight.grad += ops.conv_weight_grad(dy, x, self.stride, self.padding,
                                                 self.weight.value.shape[2:])
        if self.bias:
            self.bias.grad += dy.sum(axis=(0,) + tuple(range(2, dy.ndim)))
        return ops.conv_forward(dy, self.weight.value, None, self.stride, self.padding)


class Dense(Layer):
    def __init__(self, n_in, n_out, bias=True, rng=None, dtype=np.float32, name="dense"):
        rng = rng or np.random.default_rng()
        self.weight = Parameter(_kaiming_uniform(rng, (n_in, n_out), n_in, dtype),
                                f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out, dtype=dtype), f"{name}.bias") if bias else None
        self._x = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[0]:
            raise ValueError(
                f"dense expects (N, {self.weight.value.shape[0]}), got {x.shape}")
        self._x = x
        y = x @ self.weight.value
        if self.bias:
            y = y + self.bias.value
        return y

    def backward(self, dy):
        self.weight.grad += self._x.T @ dy
        if self.bias:
            self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value.T


class BatchNorm(Layer):
    """Per-channel batch normalization over (N, *spatial).

    Train mode uses biased batch statistics and updates the running estimates
    as ``running = momentum * running + (1 - momentum) * batch``; eval mode
    normalizes with the running estimates.  Train mode requires batch >= 2.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32, name="bn"):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta")
        self.running_mean = Parameter(np.zeros(channels, dtype=dtype),
                                      f"{name}.running_mean", trainable=False)
        self.running_var = Parameter(np.ones(channels, dtype=dtype),
                                     f"{name}.running_var", trainable=False)
        self._ctx = None

    def params(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]

    def _shape(self, x):
        if x.ndim < 2 or x.shape[1] != self.gamma.size:
            raise ValueError(f"batch norm over {self.gamma.size} channels got shape {x.shape}")
        return (1, -1) + (1,) * (x.ndim - 2)

    def forward(self, x, train=False):
        bshape = self._shape(x)
        axes = (0,) + tuple(range(2, x.ndim))
        if train:
            if x.shape[0] < 2:
                raise ValueError(
                    f"batch norm train mode requires batch size >= 2, got {x.shape[0]}")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean.value = (m * self.running_mean.value
                                       + (1.0 - m) * mean).astype(x.dtype)
            self.running_var.value = (m * self.running_var.value
                                      + (1.0 - m) * var).astype(x.dtype)
        else:
            mean = self.running_mean.value
            var = self.running_var.value
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._ctx = (xhat, inv_std, train, axes, bshape)
        return self.gamma.value.reshape(bshape) * xhat + self.beta.value.reshape(bshape)

    def backward(self, dy):
        xhat, inv_std, train, axes, bshape = self._ctx
        dbeta = dy.sum(axis=axes)
        dgamma = (dy * xhat).sum(axis=axes)
        self.beta.grad += dbeta
        self.gamma.grad += dgamma
        g = (self.gamma.value * inv_std).reshape(bshape)
        if not train:
            return dy * g
        m = dy.size // dy.shape[1]
        return g * (dy - dbeta.reshape(bshape) / m - xhat * dgamma.reshape(bshape) / m)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class LeakyReLU(Layer):
    def __init__(self, alpha=0.2):
        self.alpha = alpha

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, self.alpha * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.alpha * dy)


class Tanh(Layer):
    def forward(self, x, train=False):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y ** 2)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class GlobalAvgPool(Layer):
    """Mean over all spatial axes: (N, C, *S) -> (N, C)."""

    def forward(self, x, train=False):
        if x.ndim < 3:
            raise ValueError(f"global average pool expects spatial axes, got shape {x.shape}")
        self._in_shape = x.shape
        return x.mean(axis=tuple(range(2, x.ndim)))

    def backward(self, dy):
        shape = self._in_shape
        m = int(np.prod(shape[2:]))
        return np.broadcast_to(
            dy.reshape(shape[:2] + (1,) * (len(shape) - 2)), shape
        ).copy() / m


class Affine(Layer):
    """Fixed elementwise y = a*x + b (e.g. tanh output -> [0,1] with a=b=0.5)."""

    def __init__(self, a=0.5, b=0.5):
        self.a = a
        self.b = b

    def forward(self, x, train=False):
        return self.a * x + self.b

    def backward(self, dy):
        return self.a * dy


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()
