# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a NumPy array. Operations on tensors which require
gradients record a tape node: the parent tensors and a closure mapping
the output gradient to the parent gradients. `Tensor.backward` walks
the tape in reverse topological order and accumulates `grad` on leaf
tensors that require gradients (the trainable parameters).

The operations here are exactly what the relation classifier needs:
3x3 convolutions, batch normalization, ReLU, 2x2 max pooling, affine
layers, sigmoid gates, broadcasting arithmetic, and the softmax
cross-entropy loss. Data type follows the inputs: 32-bit floats for
training, 64-bit floats for tight gradient checks.
"""

import dataclasses
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.special

from .error import TableRelationsError

# Module logger.
LOG = logging.getLogger(__name__)

# Backward closure: output gradient -> gradients of the parents.
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class TensorError(TableRelationsError):
    """Invalid tensor operation arguments."""


class ShapeError(TensorError):
    """Incompatible tensor shapes."""


class ModelStateError(TensorError):
    """Operation requires state the model does not have yet."""


class Tensor:
    """N-dimensional float array taking part in the gradient tape."""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[BackwardFn] = None,
    ):
        """Wrap `data`; `parents` and `backward` describe the tape node."""
        self.data: np.ndarray = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        """Shape and dtype summary."""
        grad = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        """Array shape."""
        return tuple(self.data.shape)

    @property
    def dtype(self):
        """Array dtype."""
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Underlying array."""
        return self.data

    def detach(self) -> "Tensor":
        """Same data without the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Forget the accumulated gradient."""
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from this tensor to all leaves.

        Args:
            grad: Gradient of the final objective w.r.t. this tensor.
                Defaults to one, which is only valid for scalars.
        """
        if grad is None:
            assert self.data.size == 1, "Implicit gradient needs a scalar tensor!"
            grad = np.ones_like(self.data)

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): grad}
        for node in reversed(order):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is not None:
                        node_grad = node.grad + node_grad
                    node.grad = node_grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad

    def __add__(self, other):
        """Broadcasting sum."""
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        """Broadcasting sum."""
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        """Broadcasting product."""
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        """Broadcasting product."""
        return mul(_as_tensor(other), self)


@dataclasses.dataclass
class RunningStats:
    """Batch normalization running statistics of one layer.

    Both arrays stay `None` until the first training-mode pass.
    """

    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    batches: int = 0


# --------------------------------------------------------------------------- OPERATIONS


def add(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting `a + b`."""
    _check_broadcast(a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting elementwise `a * b`."""
    _check_broadcast(a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Reshape keeping the data order."""
    try:
        data = a.data.reshape(shape)
    except ValueError as ex:
        raise ShapeError(f"Cannot reshape {a.shape} into {tuple(shape)}") from ex
    return _node(data, (a,), lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the batch dimension."""
    return reshape(a, (a.shape[0], -1))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the batch dimension."""
    sizes = [t.shape[0] for t in tensors]
    if len({t.shape[1:] for t in tensors}) != 1:
        raise ShapeError(f"Cannot concatenate {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[start:stop] for start, stop in zip(bounds[:-1], bounds[1:]))

    return _node(np.concatenate([t.data for t in tensors]), tuple(tensors), backward)


def split(a: Tensor, size: int) -> Tuple[Tensor, Tensor]:
    """Split along the batch dimension into `[:size]` and `[size:]`."""

    def part(start, stop):
        def backward(g):
            full = np.zeros_like(a.data)
            full[start:stop] = g
            return (full,)

        return _node(a.data[start:stop], (a,), backward)

    return part(0, size), part(size, a.shape[0])


def relu(a: Tensor) -> Tensor:
    """Elementwise `max(0, x)`."""
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    """Elementwise logistic function."""
    out = scipy.special.expit(a.data).astype(a.dtype)
    return _node(out, (a,), lambda g: (g * out * (1 - out),))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map `x @ weight.T + bias` for `x` of shape `[N, D]`."""
    if x.data.ndim != 2 or weight.shape[1:] != x.shape[1:] or bias.shape != (
        weight.shape[0],
    ):
        raise ShapeError(
            f"Linear layer mismatch: input {x.shape}, weight {weight.shape}, "
            f"bias {bias.shape}"
        )
    return _node(
        x.data @ weight.data.T + bias.data,
        (x, weight, bias),
        lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)),
    )


def conv2d(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 1
) -> Tensor:
    """Cross-correlation of `[N, C, H, W]` input with `[F, C, k, k]` filters.

    The sum is accumulated one kernel offset at a time with
    `numpy.tensordot`, which avoids materializing the im2col matrix.
    """
    if (
        x.data.ndim != 4
        or weight.data.ndim != 4
        or weight.shape[1] != x.shape[1]
        or weight.shape[2] != weight.shape[3]
        or bias.shape != (weight.shape[0],)
    ):
        raise ShapeError(
            f"Convolution mismatch: input {x.shape}, weight {weight.shape}, "
            f"bias {bias.shape}"
        )
    batch, _, height, width = x.shape
    filters, _, kernel, _ = weight.shape
    out_h = (height + 2 * pad - kernel) // stride + 1
    out_w = (width + 2 * pad - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"Input {x.shape} is too small for {kernel}x{kernel} kernels")

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    def window(i, j):
        return (
            slice(None),
            slice(None),
            slice(i, i + stride * (out_h - 1) + 1, stride),
            slice(j, j + stride * (out_w - 1) + 1, stride),
        )

    # Accumulated as [F, N, H, W] and transposed once.
    dtype = np.result_type(x.data, weight.data)
    out = np.zeros((filters, batch, out_h, out_w), dtype=dtype)
    for i in range(kernel):
        for j in range(kernel):
            taps = weight.data[:, :, i, j]
            out += np.tensordot(taps, padded[window(i, j)], axes=(1, 1))
    out = out.transpose(1, 0, 2, 3) + bias.data[None, :, None, None]

    def backward(g):
        g_t = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        grad_padded = np.zeros_like(padded)
        grad_weight = np.zeros_like(weight.data)
        for i in range(kernel):
            for j in range(kernel):
                region = window(i, j)
                grad_weight[:, :, i, j] = np.tensordot(
                    g_t, padded[region], axes=([1, 2, 3], [0, 2, 3])
                )
                grad_padded[region] += np.tensordot(
                    weight.data[:, :, i, j], g_t, axes=(0, 0)
                ).transpose(1, 0, 2, 3)
        grad_x = grad_padded[:, :, pad : pad + height, pad : pad + width]
        return grad_x, grad_weight, g.sum(axis=(0, 2, 3))

    return _node(np.ascontiguousarray(out), (x, weight, bias), backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    running: Optional[RunningStats] = None,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization of `[N, C, H, W]` input.

    Training mode normalizes by the batch statistics and, when
    `running` is given, updates it in place. Evaluation mode uses the
    running statistics.

    Raises:
        ModelStateError: Evaluation mode before any training pass.
    """
    channels = x.shape[1] if x.data.ndim == 4 else -1
    if channels < 0 or gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"Batch norm mismatch: input {x.shape}, gamma {gamma.shape}, "
            f"beta {beta.shape}"
        )
    axes = (0, 2, 3)
    count = x.data.size // channels

    def per_channel(values):
        return values[None, :, None, None]

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            if running.mean is None or running.var is None:
                running.mean = np.zeros_like(mean)
                running.var = np.ones_like(var)
            unbiased = var * count / max(count - 1, 1)
            running.mean = (1 - momentum) * running.mean + momentum * mean
            running.var = (1 - momentum) * running.var + momentum * unbiased
            running.batches += 1
    else:
        if running is None or running.mean is None or running.var is None:
            raise ModelStateError(
                "Batch norm has no running statistics, run a training pass first"
            )
        mean = running.mean.astype(x.dtype)
        var = running.var.astype(x.dtype)

    inv_std = (1 / np.sqrt(var + eps)).astype(x.dtype)
    x_hat = (x.data - per_channel(mean)) * per_channel(inv_std)
    out = per_channel(gamma.data) * x_hat + per_channel(beta.data)

    def backward(g):
        grad_gamma = (g * x_hat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        grad_x_hat = g * per_channel(gamma.data)
        if training:
            grad_x = per_channel(inv_std / count) * (
                count * grad_x_hat
                - per_channel(grad_x_hat.sum(axis=axes))
                - x_hat * per_channel((grad_x_hat * x_hat).sum(axis=axes))
            )
        else:
            grad_x = grad_x_hat * per_channel(inv_std)
        return grad_x, grad_gamma, grad_beta

    return _node(out.astype(x.dtype), (x, gamma, beta), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns dropped.

    The gradient is routed to the first maximum of each window.
    """
    if x.data.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"Max pooling needs [N, C, H>=2, W>=2] input, got {x.shape}")
    batch, channels, height, width = x.shape
    out_h, out_w = height // 2, width // 2
    windows = (
        x.data[:, :, : out_h * 2, : out_w * 2]
        .reshape(batch, channels, out_h, 2, out_w, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h, out_w, 4)
    )
    winners = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winners[..., None], axis=-1)[..., 0]

    def backward(g):
        routed = np.zeros(windows.shape, dtype=g.dtype)
        np.put_along_axis(routed, winners[..., None], g[..., None], axis=-1)
        grad = np.zeros_like(x.data)
        grad[:, :, : out_h * 2, : out_w * 2] = (
            routed.reshape(batch, channels, out_h, out_w, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, channels, out_h * 2, out_w * 2)
        )
        return (grad,)

    return _node(out, (x,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, max-subtracted."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor, labels: np.ndarray, class_weights: Optional[np.ndarray] = None
) -> Tensor:
    """Mean negative log-likelihood of `labels` under softmax(`logits`).

    With `class_weights` the mean is weighted by the weight of each
    sample's true class.

    Raises:
        TensorError: A label is outside `[0, classes)`.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"Loss mismatch: logits {logits.shape}, labels {labels.shape}")
    classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise TensorError(f"Labels must lie in [0, {classes}), got {labels.tolist()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted[np.arange(labels.size), labels] - log_norm
    weights = (
        np.ones(labels.size, dtype=logits.dtype)
        if class_weights is None
        else np.asarray(class_weights, dtype=logits.dtype)[labels]
    )
    total = weights.sum()
    loss = -(weights * log_prob).sum() / total

    def backward(g):
        grad = softmax(logits.data)
        grad[np.arange(labels.size), labels] -= 1
        return (grad * (weights / total)[:, None] * g,)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def grad_check(
    func: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-3,
    promote: bool = True,
) -> float:
    """Compare the tape gradients with central finite differences.

    `func` computes a scalar from `tensors` (and anything it closes
    over). The analytic gradient is computed in the tensors' own
    precision. The finite differences are computed in 64-bit floats
    when `promote` is set, so they are a sharp reference for 32-bit
    tensors too.

    The error of each element is `|analytic - numeric|` divided by
    `max(|analytic|, |numeric|, 1e-3 * scale)`, where `scale` is the
    largest numeric gradient of the same tensor.

    Returns:
        Maximum relative error over all elements of all `tensors`.
    """
    for tensor in tensors:
        tensor.zero_grad()
    func().backward()
    analytic = [
        np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        for t in tensors
    ]

    originals = [t.data for t in tensors]
    if promote:
        for tensor in tensors:
            tensor.data = tensor.data.astype(np.float64)

    worst = 0.0
    try:
        for tensor, grad in zip(tensors, analytic):
            numeric = np.zeros(tensor.shape)
            flat = tensor.data.reshape(-1)
            for index in range(flat.size):
                saved = flat[index]
                flat[index] = saved + eps
                upper = float(func().data)
                flat[index] = saved - eps
                lower = float(func().data)
                flat[index] = saved
                numeric.reshape(-1)[index] = (upper - lower) / (2 * eps)
            floor = 1e-3 * max(float(np.abs(numeric).max(initial=0.0)), 1e-12)
            scale = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), floor)
            worst = max(worst, float((np.abs(grad - numeric) / scale).max(initial=0.0)))
    finally:
        for tensor, original in zip(tensors, originals):
            tensor.data = original
            tensor.zero_grad()
    return worst


# ----------------------------------------------------------------------- IMPLEMENTATION


def _node(
    data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn
) -> Tensor:
    """Create an operation result, recording the tape node if needed."""
    if any(parent.requires_grad for parent in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _as_tensor(value) -> Tensor:
    """Wrap constants."""
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value))


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    """Fail early on shapes which do not broadcast."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as ex:
        raise ShapeError(f"Shapes {a.shape} and {b.shape} do not broadcast") from ex


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum the gradient over the axes broadcasting added or stretched."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad
