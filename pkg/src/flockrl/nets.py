"""Minimal feed-forward network engine in 64-bit numpy.

Supports valid 2D convolution, dense layers, ReLU, tanh, and an affine
output-scaling layer, with exact backpropagation through all of them and
the Adam update rule. Networks are described by a NetworkSpec holding up
to three layer chains: a state chain fed by the grid input, an optional
action chain fed by the action vector, and an optional head applied to
the elementwise sum of the two chain outputs (the action-value topology).

Parameters live outside the spec in a ParameterSet: a flat, ordered,
named collection of arrays backed by one contiguous vector, which makes
the optimizer and target-blend arithmetic single-array operations.

Feature maps are handled channels-last internally for cheap patch
extraction; the public contract at the network boundary stays
channels-first (batch, channels, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


# --------------------------------------------------------------------------
# Layer descriptors


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel_size: int
    stride: int = 1


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    width: int


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class OutputScale:
    """out = x * bound + bias, elementwise per output dimension."""

    bias: tuple[float, ...]
    bound: tuple[float, ...]


LayerSpec = Conv | Relu | Flatten | Dense | Tanh | OutputScale


@dataclass(frozen=True)
class NetworkSpec:
    """Layer chains plus the input contract.

    A plain network (e.g. the actor) uses only state_layers. A two-input
    action-value network adds action_layers and head_layers; the head
    consumes the elementwise sum of the two chain outputs, so both chains
    must end at the same width.
    """

    input_shape: tuple[int, int, int]           # (channels, height, width)
    state_layers: tuple[LayerSpec, ...]
    action_dim: int = 0
    action_layers: tuple[LayerSpec, ...] = ()
    head_layers: tuple[LayerSpec, ...] = ()

    def output_dim(self) -> int:
        shape = _chain_output_shape(self.state_layers, self.input_shape)
        if self.head_layers:
            shape = _chain_output_shape(self.head_layers, shape)
        if not isinstance(shape, int):
            raise ValueError(f"network output is not a vector: {shape}")
        return shape


def _layer_output_shape(layer: LayerSpec, shape, index: int):
    """Shape propagation for one layer; raises naming the layer index."""
    if isinstance(layer, Conv):
        if isinstance(shape, int):
            raise ValueError(f"layer {index}: conv applied to flat input")
        c, h, w = shape
        oh = (h - layer.kernel_size) // layer.stride + 1
        ow = (w - layer.kernel_size) // layer.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"layer {index}: kernel {layer.kernel_size} too large for {h}x{w}"
            )
        return (layer.out_channels, oh, ow)
    if isinstance(layer, Flatten):
        if isinstance(shape, int):
            return shape
        c, h, w = shape
        return c * h * w
    if isinstance(layer, Dense):
        if not isinstance(shape, int):
            raise ValueError(f"layer {index}: dense applied to grid input {shape}")
        return layer.width
    if isinstance(layer, (Relu, Tanh)):
        return shape
    if isinstance(layer, OutputScale):
        if not isinstance(shape, int) or shape != len(layer.bias):
            raise ValueError(
                f"layer {index}: output scale of size {len(layer.bias)} on {shape}"
            )
        return shape
    raise TypeError(f"unknown layer spec: {layer!r}")


def _chain_output_shape(layers, in_shape):
    shape = in_shape
    for idx, layer in enumerate(layers):
        shape = _layer_output_shape(layer, shape, idx)
    return shape


# --------------------------------------------------------------------------
# Parameters


class ParameterSet:
    """Ordered, named parameter arrays over one contiguous float64 vector.

    `values[i]` is a view into `flat`, so elementwise arithmetic (scaling,
    blending, optimizer steps) runs on the single backing vector while the
    per-layer arrays stay addressable by name. Shapes are fixed at
    construction; two sets built from the same spec are compatible.
    """

    __slots__ = ("names", "shapes", "flat", "values")

    def __init__(self, names, shapes, flat: np.ndarray):
        self.names = tuple(names)
        self.shapes = tuple(tuple(int(d) for d in s) for s in shapes)
        if len(self.names) != len(self.shapes):
            raise ValueError("names and shapes length mismatch")
        flat = np.asarray(flat, dtype=float)
        views = []
        k = 0
        for shape in self.shapes:
            n = 1
            for d in shape:
                n *= d
            views.append(flat[k:k + n].reshape(shape))
            k += n
        if k != flat.size:
            raise ValueError(f"flat vector size {flat.size} != parameter count {k}")
        self.flat = flat
        self.values = views

    @classmethod
    def from_arrays(cls, names, arrays) -> "ParameterSet":
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        shapes = [a.shape for a in arrays]
        flat = (np.concatenate([a.ravel() for a in arrays])
                if arrays else np.zeros(0))
        return cls(names, shapes, flat)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.names, self.shapes, self.flat.copy())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(self.names, self.shapes, np.zeros_like(self.flat))

    def scale(self, a: float) -> "ParameterSet":
        return ParameterSet(self.names, self.shapes, a * self.flat)

    def add(self, other: "ParameterSet") -> "ParameterSet":
        self._check_compatible(other)
        return ParameterSet(self.names, self.shapes, self.flat + other.flat)

    def with_flat(self, vec: np.ndarray) -> "ParameterSet":
        """Rebuild a set with the same layout from a flat vector."""
        return ParameterSet(self.names, self.shapes, np.array(vec, dtype=float))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]

    def __len__(self) -> int:
        return len(self.names)

    def size(self) -> int:
        return self.flat.size

    def allclose(self, other: "ParameterSet", **kw) -> bool:
        self._check_compatible(other)
        return np.allclose(self.flat, other.flat, **kw)

    def equal(self, other: "ParameterSet") -> bool:
        self._check_compatible(other)
        return np.array_equal(self.flat, other.flat)

    def _check_compatible(self, other: "ParameterSet") -> None:
        if self.names != other.names or self.shapes != other.shapes:
            raise ValueError("parameter sets come from different architectures")


def blend(target: ParameterSet, online: ParameterSet, tau: float) -> ParameterSet:
    """Elementwise tau * online + (1 - tau) * target."""
    target._check_compatible(online)
    out = online.flat * tau
    out += (1.0 - tau) * target.flat
    return ParameterSet(target.names, target.shapes, out)


def _chain_param_shapes(chain: str, layers, in_shape):
    """Yield (name, shape, fan_in) for every parameter a chain owns."""
    shape = in_shape
    for idx, layer in enumerate(layers):
        if isinstance(layer, Conv):
            c = shape[0]
            fan_in = c * layer.kernel_size * layer.kernel_size
            yield (f"{chain}.{idx}.kernel",
                   (layer.out_channels, c, layer.kernel_size, layer.kernel_size),
                   fan_in)
            yield (f"{chain}.{idx}.bias", (layer.out_channels,), fan_in)
        elif isinstance(layer, Dense):
            fan_in = shape
            yield (f"{chain}.{idx}.w", (shape, layer.width), fan_in)
            yield (f"{chain}.{idx}.b", (layer.width,), fan_in)
        shape = _layer_output_shape(layer, shape, idx)


def _all_param_shapes(spec: NetworkSpec):
    yield from _chain_param_shapes("state", spec.state_layers, spec.input_shape)
    yield from _chain_param_shapes("action", spec.action_layers, spec.action_dim)
    if spec.head_layers:
        merged = _chain_output_shape(spec.state_layers, spec.input_shape)
        yield from _chain_param_shapes("head", spec.head_layers, merged)


def init_parameters(spec: NetworkSpec, rng: np.random.Generator) -> ParameterSet:
    """Uniform init on [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and
    biases alike."""
    names, values = [], []
    for name, shape, fan_in in _all_param_shapes(spec):
        bound = 1.0 / np.sqrt(fan_in)
        values.append(rng.uniform(-bound, bound, size=shape))
        names.append(name)
    return ParameterSet.from_arrays(names, values)


# --------------------------------------------------------------------------
# Forward / backward
#
# Feature maps flow through the chains channels-last (B, H, W, C). A valid
# convolution is evaluated as k*k offset GEMMs: for every kernel offset the
# corresponding input window is copied once into a contiguous (B*OH*OW, C)
# block (cached for the backward pass) and multiplied by that offset's
# (C, OC) weight slice. This keeps every GEMM operand contiguous, which is
# what the memory system wants.


def _offset_blocks(x: np.ndarray, k: int, stride: int):
    """Contiguous (B*OH*OW, C) window copies for each of the k*k offsets."""
    b, h, w, c = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    n = b * oh * ow
    blocks = [
        np.ascontiguousarray(
            x[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride, :]
        ).reshape(n, c)
        for ki in range(k)
        for kj in range(k)
    ]
    return blocks, oh, ow


def _conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                  k: int, stride: int):
    blocks, oh, ow = _offset_blocks(x, k, stride)
    # Contiguous (k*k, C, OC) weight slices so every GEMM stays on the
    # BLAS fast path.
    wk = np.ascontiguousarray(kernel.transpose(2, 3, 1, 0)).reshape(
        k * k, kernel.shape[1], kernel.shape[0])
    b = x.shape[0]
    oc = kernel.shape[0]
    out = np.empty((b * oh * ow, oc))
    out[:] = bias
    scratch = np.empty_like(out)
    for o, blk in enumerate(blocks):
        np.matmul(blk, wk[o], out=scratch)
        out += scratch
    return out.reshape(b, oh, ow, oc), (blocks, wk, x.shape, oh, ow)


def _conv_backward(d: np.ndarray, cache, kernel: np.ndarray, k: int, stride: int,
                   need_param_grads: bool, need_input_grad: bool):
    blocks, wk, x_shape, oh, ow = cache
    oc = kernel.shape[0]
    d_f = np.ascontiguousarray(d.reshape(-1, oc))
    dkernel = None
    dbias = None
    if need_param_grads:
        dkernel = np.empty_like(kernel)
        for o, blk in enumerate(blocks):
            dkernel[:, :, o // k, o % k] = (blk.T @ d_f).T
        dbias = d_f.sum(axis=0)
    dx = None
    if need_input_grad:
        b, _, _, c = x_shape
        dx = np.zeros(x_shape)
        contrib = np.empty((d_f.shape[0], c))
        for o in range(k * k):
            np.matmul(d_f, wk[o].T, out=contrib)
            ki, kj = o // k, o % k
            dx[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride, :] += (
                contrib.reshape(b, oh, ow, c)
            )
    return dkernel, dbias, dx


def _chain_forward(layers, values, pidx, x, chain_name):
    """Run one chain; returns (output, caches, next parameter index).
    4D activations are channels-last."""
    caches = []
    for idx, layer in enumerate(layers):
        if isinstance(layer, Conv):
            kernel = values[pidx]
            bias = values[pidx + 1]
            pidx += 2
            if x.ndim != 4 or x.shape[3] != kernel.shape[1]:
                raise ValueError(
                    f"{chain_name} layer {idx}: conv input {x.shape} does not "
                    f"match kernel {kernel.shape}"
                )
            x, cache = _conv_forward(x, kernel, bias, layer.kernel_size,
                                     layer.stride)
            caches.append(cache)
        elif isinstance(layer, Relu):
            x = np.maximum(x, 0.0)
            caches.append(x)
        elif isinstance(layer, Flatten):
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dense):
            w = values[pidx]
            b_ = values[pidx + 1]
            pidx += 2
            if x.ndim != 2 or x.shape[1] != w.shape[0]:
                raise ValueError(
                    f"{chain_name} layer {idx}: dense input {x.shape} does not "
                    f"match weight {w.shape}"
                )
            caches.append(x)
            out = x @ w
            out += b_
            x = out
        elif isinstance(layer, Tanh):
            x = np.tanh(x)
            caches.append(x)
        elif isinstance(layer, OutputScale):
            caches.append(None)
            x = x * np.asarray(layer.bound) + np.asarray(layer.bias)
        else:
            raise TypeError(f"unknown layer spec: {layer!r}")
    return x, caches, pidx


def _chain_backward(layers, values, pidx_end, caches, dout, grad_values,
                    need_param_grads, need_input_grad):
    """Backpropagate one chain; fills grad_values (aligned with values) and
    returns the gradient w.r.t. the chain input (None when skipped)."""
    pidx = pidx_end
    d = dout
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        cache = caches[idx]
        stop_input = idx == 0 and not need_input_grad
        if isinstance(layer, Conv):
            pidx -= 2
            kernel = values[pidx]
            dkernel, dbias, dx = _conv_backward(
                d, cache, kernel, layer.kernel_size, layer.stride,
                need_param_grads, not stop_input)
            if need_param_grads:
                grad_values[pidx] = dkernel
                grad_values[pidx + 1] = dbias
            if stop_input:
                d = None
                break
            d = dx
        elif isinstance(layer, Relu):
            d = d * (cache > 0)
        elif isinstance(layer, Flatten):
            d = d.reshape(cache)
        elif isinstance(layer, Dense):
            pidx -= 2
            w = values[pidx]
            x = cache
            if need_param_grads:
                grad_values[pidx] = x.T @ d
                grad_values[pidx + 1] = d.sum(axis=0)
            if stop_input:
                d = None
                break
            d = d @ w.T
        elif isinstance(layer, Tanh):
            d = d * (1.0 - cache * cache)
        elif isinstance(layer, OutputScale):
            d = d * np.asarray(layer.bound)
    return d


def _count_chain_params(layers) -> int:
    return sum(2 for layer in layers if isinstance(layer, (Conv, Dense)))


def forward(spec: NetworkSpec, params: ParameterSet, grid_input: np.ndarray,
            action: np.ndarray | None = None):
    """Batched forward pass; returns (output, cache).

    grid_input is (batch, C, H, W); action, when the spec has an action
    chain, is (batch, action_dim). The cache holds everything backward
    needs for exact gradients.
    """
    x = np.asarray(grid_input, dtype=float)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise ValueError(
            f"input shape {x.shape[1:]} does not match spec {spec.input_shape}"
        )
    x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    values = params.values
    out, state_caches, pidx = _chain_forward(spec.state_layers, values, 0, x, "state")

    action_caches = None
    if spec.action_layers:
        if action is None:
            raise ValueError("spec has an action chain but no action was given")
        a = np.asarray(action, dtype=float)
        if a.ndim == 1:
            a = a[None]
        if a.shape != (x.shape[0], spec.action_dim):
            raise ValueError(
                f"action shape {a.shape} does not match (batch, {spec.action_dim})"
            )
        a_out, action_caches, pidx = _chain_forward(
            spec.action_layers, values, pidx, a, "action")
        out = out + a_out

    head_caches = None
    if spec.head_layers:
        out, head_caches, pidx = _chain_forward(spec.head_layers, values, pidx,
                                                out, "head")

    cache = (state_caches, action_caches, head_caches, x.shape[0])
    if out.ndim == 4:
        out = out.transpose(0, 3, 1, 2)
    return out, cache


def backward(spec: NetworkSpec, params: ParameterSet, cache, dout: np.ndarray,
             need_param_grads: bool = True, need_input_grad: bool = True,
             need_action_grad: bool = True):
    """Exact gradients of the scalar objective whose output gradient is
    dout; returns (parameter gradients or None, d_grid_input, d_action).

    The three flags prune work: parameter gradients, the gradient into the
    grid input, and the gradient into the action input are each only
    computed when requested.
    """
    state_caches, action_caches, head_caches, batch = cache
    if state_caches is None:
        raise ValueError("stale or incomplete forward cache")
    d = np.asarray(dout, dtype=float)
    if d.ndim == 1:
        d = d[None]
    if d.shape[0] != batch:
        raise ValueError(f"output gradient batch {d.shape[0]} != cached batch {batch}")
    if d.ndim == 4:
        d = d.transpose(0, 2, 3, 1)

    values = params.values
    grad_values: list = [None] * len(values)
    n_state = _count_chain_params(spec.state_layers)
    n_action = _count_chain_params(spec.action_layers)
    n_head = _count_chain_params(spec.head_layers)
    if n_state + n_action + n_head != len(values):
        raise ValueError("parameter set does not match spec")

    if spec.head_layers:
        # The head's input feeds both chains, so its input grad is always
        # needed as long as anything below it is.
        d = _chain_backward(spec.head_layers, values, n_state + n_action + n_head,
                            head_caches, d, grad_values,
                            need_param_grads, need_input_grad=True)

    d_action = None
    if spec.action_layers and (need_param_grads or need_action_grad):
        # The merge is an elementwise sum: both chains receive d as-is.
        d_action = _chain_backward(spec.action_layers, values, n_state + n_action,
                                   action_caches, d, grad_values,
                                   need_param_grads, need_action_grad)

    d_input = None
    if need_param_grads or need_input_grad:
        d_input = _chain_backward(spec.state_layers, values, n_state,
                                  state_caches, d, grad_values,
                                  need_param_grads, need_input_grad)
        if d_input is not None and d_input.ndim == 4:
            d_input = d_input.transpose(0, 3, 1, 2)

    grads = (ParameterSet.from_arrays(params.names, grad_values)
             if need_param_grads else None)
    return grads, d_input, d_action


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for one network."""

    m: ParameterSet
    v: ParameterSet
    step: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initial(cls, params: ParameterSet, learning_rate: float = 1e-3,
                beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), step=0,
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(params: ParameterSet, grads: ParameterSet,
                state: AdamState) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam step along -grads."""
    params._check_compatible(grads)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    g = grads.flat
    m = state.m.flat * b1
    m += (1.0 - b1) * g
    v = state.v.flat * b2
    v += (1.0 - b2) * (g * g)
    denom = np.sqrt(v / c2)
    denom += state.eps
    upd = m / c1
    upd /= denom
    new_flat = params.flat - state.learning_rate * upd
    names, shapes = params.names, params.shapes
    return (
        ParameterSet(names, shapes, new_flat),
        AdamState(m=ParameterSet(names, shapes, m),
                  v=ParameterSet(names, shapes, v),
                  step=t, learning_rate=state.learning_rate,
                  beta1=state.beta1, beta2=state.beta2, eps=state.eps),
    )


# --------------------------------------------------------------------------
# Spec (de)serialization for checkpoints


def layer_to_json(layer: LayerSpec) -> dict:
    if isinstance(layer, Conv):
        return {"type": "conv", "out_channels": layer.out_channels,
                "kernel_size": layer.kernel_size, "stride": layer.stride}
    if isinstance(layer, Relu):
        return {"type": "relu"}
    if isinstance(layer, Flatten):
        return {"type": "flatten"}
    if isinstance(layer, Dense):
        return {"type": "dense", "width": layer.width}
    if isinstance(layer, Tanh):
        return {"type": "tanh"}
    if isinstance(layer, OutputScale):
        return {"type": "output_scale", "bias": list(layer.bias),
                "bound": list(layer.bound)}
    raise TypeError(f"unknown layer spec: {layer!r}")


def layer_from_json(obj: dict) -> LayerSpec:
    t = obj["type"]
    if t == "conv":
        return Conv(obj["out_channels"], obj["kernel_size"], obj["stride"])
    if t == "relu":
        return Relu()
    if t == "flatten":
        return Flatten()
    if t == "dense":
        return Dense(obj["width"])
    if t == "tanh":
        return Tanh()
    if t == "output_scale":
        return OutputScale(tuple(obj["bias"]), tuple(obj["bound"]))
    raise ValueError(f"unknown layer type in checkpoint: {t!r}")


def spec_to_json(spec: NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "state_layers": [layer_to_json(l) for l in spec.state_layers],
        "action_dim": spec.action_dim,
        "action_layers": [layer_to_json(l) for l in spec.action_layers],
        "head_layers": [layer_to_json(l) for l in spec.head_layers],
    }


def spec_from_json(obj: dict) -> NetworkSpec:
    return NetworkSpec(
        input_shape=tuple(obj["input_shape"]),
        state_layers=tuple(layer_from_json(l) for l in obj["state_layers"]),
        action_dim=obj["action_dim"],
        action_layers=tuple(layer_from_json(l) for l in obj["action_layers"]),
        head_layers=tuple(layer_from_json(l) for l in obj["head_layers"]),
    )


def save_network(path, spec: NetworkSpec, params: ParameterSet,
                 adam: AdamState | None = None) -> None:
    """Checkpoint one network (spec, parameters, optional optimizer state)."""
    from .checkpoint import save_checkpoint
    meta = {
        "kind": "network",
        "spec": spec_to_json(spec),
        "names": list(params.names),
        "adam": None if adam is None else {
            "step": adam.step, "learning_rate": adam.learning_rate,
            "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
        },
    }
    arrays = {f"params/{n}": v for n, v in zip(params.names, params.values)}
    if adam is not None:
        arrays.update({f"adam_m/{n}": v for n, v in zip(adam.m.names, adam.m.values)})
        arrays.update({f"adam_v/{n}": v for n, v in zip(adam.v.names, adam.v.values)})
    save_checkpoint(path, meta, arrays)


def load_network(path) -> tuple[NetworkSpec, ParameterSet, AdamState | None]:
    """Bit-exact restore of save_network's triple."""
    from .checkpoint import load_checkpoint
    meta, arrays = load_checkpoint(path)
    spec = spec_from_json(meta["spec"])
    names = meta["names"]
    params = ParameterSet.from_arrays(names, [arrays[f"params/{n}"] for n in names])
    adam = None
    if meta["adam"] is not None:
        a = meta["adam"]
        adam = AdamState(
            m=ParameterSet.from_arrays(names, [arrays[f"adam_m/{n}"] for n in names]),
            v=ParameterSet.from_arrays(names, [arrays[f"adam_v/{n}"] for n in names]),
            step=a["step"], learning_rate=a["learning_rate"],
            beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
        )
    return spec, params, adam
