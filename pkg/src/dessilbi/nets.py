"""Small deterministic feed-forward networks on float64 numpy arrays.

Everything here is plain batch-first dense tensor math: no autograd tape,
no views shared across calls.  Layers expose ``forward`` returning a cache
and ``backward`` consuming it, and the module-level ``forward`` /
``backward`` / ``finite_diff_grad`` functions operate on whole networks so
gradient code can be checked against central differences coordinate by
coordinate.
"""

from __future__ import annotations

import numpy as np

SMOOTH_ACTIVATIONS = ("softplus", "sigmoid", "tanh")
ACTIVATIONS = ("relu",) + SMOOTH_ACTIVATIONS
LOSSES = ("mse", "softmax_cross_entropy")


class ShapeError(ValueError):
    """Raised when tensors fed to a network do not compose."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or infinity."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# layers


class Dense:
    """Affine map ``y = x @ W.T + b`` with W of shape (n_out, n_in)."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, bias: bool = True):
        if n_in < 1 or n_out < 1:
            raise ShapeError(f"dense layer needs positive sizes, got ({n_in}, {n_out})")
        self.n_in = n_in
        self.n_out = n_out
        self.has_bias = bias
        self.params = [np.zeros((n_out, n_in))]
        if bias:
            self.params.append(np.zeros(n_out))

    def fan_in(self) -> int:
        return self.n_in

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeError(
                f"dense layer expects input shape ({self.n_in},), got {in_shape}"
            )
        return (self.n_out,)

    def forward(self, x):
        w = self.params[0]
        y = x @ w.T
        if self.has_bias:
            y = y + self.params[1]
        return y, x

    def backward(self, cache, dy):
        x = cache
        w = self.params[0]
        dw = dy.T @ x
        dx = dy @ w
        grads = [dw]
        if self.has_bias:
            grads.append(dy.sum(axis=0))
        return dx, grads


class Conv2d:
    """2-d convolution, stride 1, zero padding chosen to preserve H and W.

    Weight shape is (c_out, c_in, k, k).  The kernel size must be odd so
    that symmetric padding keeps the spatial size; the direct loop over
    kernel offsets keeps accumulation order fixed, so results are
    bit-reproducible run to run.
    """

    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int, size: int, bias: bool = True):
        if size < 1 or size % 2 == 0:
            raise ShapeError(f"conv kernel size must be odd and positive, got {size}")
        if c_in < 1 or c_out < 1:
            raise ShapeError(f"conv layer needs positive channel counts, got ({c_in}, {c_out})")
        self.c_in = c_in
        self.c_out = c_out
        self.size = size
        self.has_bias = bias
        self.params = [np.zeros((c_out, c_in, size, size))]
        if bias:
            self.params.append(np.zeros(c_out))

    def fan_in(self) -> int:
        return self.c_in * self.size * self.size

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ShapeError(
                f"conv layer expects input shape ({self.c_in}, H, W), got {in_shape}"
            )
        return (self.c_out,) + in_shape[1:]

    def _pad(self, x):
        p = self.size // 2
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, x):
        w = self.params[0]
        n, _, h, wid = x.shape
        xp = self._pad(x)
        y = np.zeros((n, self.c_out, h, wid))
        for di in range(self.size):
            for dj in range(self.size):
                patch = xp[:, :, di : di + h, dj : dj + wid]
                y += np.einsum("bcij,oc->boij", patch, w[:, :, di, dj])
        if self.has_bias:
            y += self.params[1][None, :, None, None]
        return y, x

    def backward(self, cache, dy):
        x = cache
        w = self.params[0]
        n, _, h, wid = x.shape
        p = self.size // 2
        xp = self._pad(x)
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        for di in range(self.size):
            for dj in range(self.size):
                patch = xp[:, :, di : di + h, dj : dj + wid]
                dw[:, :, di, dj] = np.einsum("boij,bcij->oc", dy, patch)
                dxp[:, :, di : di + h, dj : dj + wid] += np.einsum(
                    "boij,oc->bcij", dy, w[:, :, di, dj]
                )
        dx = dxp[:, :, p : p + h, p : p + wid] if p else dxp
        grads = [dw]
        if self.has_bias:
            grads.append(dy.sum(axis=(0, 2, 3)))
        return dx, grads


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Activation:
    """Elementwise nonlinearity: relu, softplus (sharpness c), sigmoid, tanh.

    softplus computes ``log(1 + exp(c x)) / c``, which deviates from relu by
    at most ``log(2) / c`` and is smooth for any c > 0.
    """

    kind = "activation"
    params: list = []

    def __init__(self, name: str, sharpness: float = 1.0):
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}, expected one of {ACTIVATIONS}")
        if name == "softplus" and not sharpness > 0:
            raise ValueError(f"softplus sharpness must be positive, got {sharpness}")
        self.name = name
        self.sharpness = float(sharpness)
        self.params = []

    @property
    def smooth(self) -> bool:
        return self.name in SMOOTH_ACTIVATIONS

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        if self.name == "relu":
            return np.maximum(x, 0.0), x
        if self.name == "softplus":
            c = self.sharpness
            y = np.log1p(np.exp(-np.abs(c * x))) / c + np.maximum(x, 0.0)
            return y, x
        if self.name == "sigmoid":
            s = _sigmoid(x)
            return s, s
        t = np.tanh(x)
        return t, t

    def backward(self, cache, dy):
        if self.name == "relu":
            return dy * (cache > 0), []
        if self.name == "softplus":
            return dy * _sigmoid(self.sharpness * cache), []
        if self.name == "sigmoid":
            s = cache
            return dy * s * (1.0 - s), []
        t = cache
        return dy * (1.0 - t * t), []


class MaxPool:
    """2x2 max pooling with stride 2; ties resolve to the first window entry."""

    kind = "maxpool"
    params: list = []

    def __init__(self):
        self.params = []

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool needs even spatial dims, got {h}x{w}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1)  # argmax takes the first maximum
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, cache, dy):
        (n, c, h, w), idx = cache
        dwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(n, c, h, w), []


class Flatten:
    kind = "flatten"
    params: list = []

    def __init__(self):
        self.params = []

    def out_shape(self, in_shape):
        size = 1
        for d in in_shape:
            size *= d
        return (size,)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), []


# ---------------------------------------------------------------------------
# losses


def _mse(out, y):
    y = _as_f64(y)
    if out.shape != y.shape:
        raise ShapeError(f"mse targets have shape {y.shape}, outputs {out.shape}")
    n = out.shape[0]
    diff = out - y
    loss = 0.5 * float(np.sum(diff * diff)) / n
    return loss, diff / n


def _softmax_cross_entropy(out, y):
    if out.ndim != 2:
        raise ShapeError(f"cross entropy expects (n, k) logits, got shape {out.shape}")
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != out.shape[0]:
        raise ShapeError(f"labels have shape {y.shape}, expected ({out.shape[0]},)")
    if not np.issubdtype(y.dtype, np.integer):
        raise ShapeError("cross entropy labels must be integers")
    k = out.shape[1]
    if y.min() < 0 or y.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    n = out.shape[0]
    z = out - out.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logz - z[np.arange(n), y]))
    soft = np.exp(z - logz[:, None])
    soft[np.arange(n), y] -= 1.0
    return loss, soft / n


_LOSS_FNS = {"mse": _mse, "softmax_cross_entropy": _softmax_cross_entropy}


# ---------------------------------------------------------------------------
# network


class Network:
    """An ordered layer stack plus a loss, validated at construction.

    Parameters live in ``layers[i].params`` and are addressed by a flat
    index across layers; ``param_info`` reports which layer and slot each
    flat index belongs to.
    """

    def __init__(self, layers, loss: str, input_shape):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}, expected one of {LOSSES}")
        self.layers = list(layers)
        self.loss = loss
        self.input_shape = tuple(int(d) for d in input_shape)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        self.output_shape = shape
        if loss == "softmax_cross_entropy" and len(shape) != 1:
            raise ShapeError(f"cross entropy needs a flat output, network ends with {shape}")

    @property
    def smooth(self) -> bool:
        """True when every piece is differentiable (no relu, no maxpool)."""
        for layer in self.layers:
            if layer.kind == "maxpool":
                return False
            if layer.kind == "activation" and not layer.smooth:
                return False
        return True

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def param_info(self):
        """(layer_index, slot_name, layer_kind) for each flat parameter index."""
        info = []
        for li, layer in enumerate(self.layers):
            for si in range(len(layer.params)):
                slot = "W" if si == 0 else "b"
                info.append((li, slot, layer.kind))
        return info

    def weight_index(self, layer_index: int) -> int:
        """Flat parameter index of the weight tensor of a dense/conv layer."""
        flat = 0
        for li, layer in enumerate(self.layers):
            if li == layer_index:
                if layer.kind not in ("dense", "conv2d"):
                    raise ValueError(f"layer {layer_index} ({layer.kind}) has no weight tensor")
                return flat
            flat += len(layer.params)
        raise IndexError(f"no layer {layer_index} in a {len(self.layers)}-layer network")

    def set_param(self, flat_index: int, value: np.ndarray) -> None:
        i = flat_index
        for layer in self.layers:
            if i < len(layer.params):
                if layer.params[i].shape != value.shape:
                    raise ShapeError(
                        f"parameter {flat_index} has shape {layer.params[i].shape}, "
                        f"got {value.shape}"
                    )
                layer.params[i] = value
                return
            i -= len(layer.params)
        raise IndexError(f"no parameter {flat_index}")

    def clone(self) -> "Network":
        net = Network.__new__(Network)
        net.loss = self.loss
        net.input_shape = self.input_shape
        net.output_shape = self.output_shape
        net.layers = []
        for layer in self.layers:
            cp = layer.__class__.__new__(layer.__class__)
            cp.__dict__.update(layer.__dict__)
            cp.params = [p.copy() for p in layer.params]
            net.layers.append(cp)
        return net

    def _check_input(self, x):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"batch has per-sample shape {x.shape[1:]}, network expects {self.input_shape}"
            )


def build_network(input_shape, layer_specs, loss: str) -> Network:
    """Construct a network from compact textual layer specs.

    Specs: ``dense:OUT``, ``conv:C_OUT:K`` (odd K), ``relu``, ``sigmoid``,
    ``tanh``, ``softplus`` or ``softplus:C``, ``maxpool``, ``flatten``.
    Append ``:nobias`` to dense/conv to drop the bias.  Input sizes are
    inferred by folding shapes front to back.
    """
    shape = tuple(int(d) for d in input_shape)
    layers = []
    for spec in layer_specs:
        parts = [s.strip() for s in str(spec).split(":")]
        name, args = parts[0], parts[1:]
        bias = True
        if args and args[-1] == "nobias":
            bias = False
            args = args[:-1]
        if name == "dense":
            if len(args) != 1:
                raise ValueError(f"dense spec needs one size, got {spec!r}")
            if len(shape) != 1:
                raise ShapeError(
                    f"dense layer after shape {shape}; add a flatten first"
                )
            layer = Dense(shape[0], int(args[0]), bias=bias)
        elif name == "conv":
            if len(args) != 2:
                raise ValueError(f"conv spec needs channels and kernel, got {spec!r}")
            if len(shape) != 3:
                raise ShapeError(f"conv layer needs a (C, H, W) input, got {shape}")
            layer = Conv2d(shape[0], int(args[0]), int(args[1]), bias=bias)
        elif name in ACTIVATIONS:
            if name == "softplus" and len(args) == 1:
                layer = Activation(name, sharpness=float(args[0]))
            elif args:
                raise ValueError(f"activation spec takes no arguments, got {spec!r}")
            else:
                layer = Activation(name)
        elif name == "maxpool":
            layer = MaxPool()
        elif name == "flatten":
            layer = Flatten()
        else:
            raise ValueError(f"unknown layer spec {spec!r}")
        shape = layer.out_shape(shape)
        layers.append(layer)
    return Network(layers, loss, input_shape)


def he_init(net: Network, seed: int) -> Network:
    """Return a copy of ``net`` with Gaussian fan-in-scaled weights.

    Weights of dense and conv layers draw from N(0, 2 / fan_in); biases are
    zero.  The same seed always produces bit-identical parameters because
    draws happen in fixed layer order from one generator.
    """
    rng = np.random.default_rng(seed)
    out = net.clone()
    for layer in out.layers:
        if layer.kind in ("dense", "conv2d"):
            std = np.sqrt(2.0 / layer.fan_in())
            layer.params[0] = rng.normal(0.0, std, size=layer.params[0].shape)
            if layer.has_bias:
                layer.params[1] = np.zeros_like(layer.params[1])
    return out


def forward(net: Network, x, y) -> tuple[float, np.ndarray]:
    """Loss and network outputs on a batch; raises on non-finite values."""
    x = _as_f64(x)
    net._check_input(x)
    h = x
    for i, layer in enumerate(net.layers):
        h, _ = layer.forward(h)
        _require_finite(h, f"outputs of layer {i} ({layer.kind})")
    loss, _ = _LOSS_FNS[net.loss](h, y)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return loss, h


def backward(net: Network, x, y) -> list[np.ndarray]:
    """Gradient of the batch loss for every parameter, in flat order."""
    loss, grads = loss_and_grad(net, x, y)
    return grads


def loss_and_grad(net: Network, x, y) -> tuple[float, list[np.ndarray]]:
    x = _as_f64(x)
    net._check_input(x)
    h = x
    caches = []
    for i, layer in enumerate(net.layers):
        h, cache = layer.forward(h)
        _require_finite(h, f"outputs of layer {i} ({layer.kind})")
        caches.append(cache)
    loss, dh = _LOSS_FNS[net.loss](h, y)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    grads_rev = []
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        dh, dparams = layer.backward(cache, dh)
        grads_rev.extend(reversed(dparams))
    grads = list(reversed(grads_rev))
    for g, (li, slot, kind) in zip(grads, net.param_info()):
        _require_finite(g, f"gradient of layer {li} ({kind}) slot {slot}")
    return loss, grads


def finite_diff_grad(net: Network, x, y, h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient, one coordinate at a time.

    Slow by design; the only consumer is gradient verification.
    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    work = net.clone()
    grads = []
    for pi, base in enumerate(work.param_arrays()):
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = forward(work, x, y)
            flat[j] = orig - h
            lm, _ = forward(work, x, y)
            flat[j] = orig
            gflat[j] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads
