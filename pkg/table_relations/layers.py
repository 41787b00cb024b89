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

"""Trainable layers built on top of the tensor operations.

A `Module` owns `Param`s and child modules as plain attributes (lists
of modules are allowed). Parameter names are the attribute paths, e.g.
`cell_embedder.blocks.0.conv.weight`, so they are deterministic for a
given architecture. Weights use Kaiming-uniform fan-in initialization
from the generator passed in, biases start at zero, batch norm at
gamma = 1 and beta = 0.
"""

import logging
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from . import tensor as T

# Module logger.
LOG = logging.getLogger(__name__)


class Param:
    """Trainable tensor with the AdamW moment buffers."""

    def __init__(self, data: np.ndarray, name: str = ""):
        """Wrap `data` into a tensor which requires gradients."""
        self.name = name
        self.tensor = T.Tensor(data, requires_grad=True)
        self.moment1 = np.zeros_like(data)
        self.moment2 = np.zeros_like(data)

    def __repr__(self):
        """Name and shape."""
        return f"Param({self.name!r}, shape={self.shape})"

    @property
    def data(self) -> np.ndarray:
        """Current value."""
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray):
        """Replace the value keeping shape and dtype."""
        assert value.shape == self.tensor.data.shape, (
            f"Parameter {self.name} expects shape {self.tensor.data.shape},"
            f" got {value.shape}!"
        )
        self.tensor.data = value.astype(self.tensor.data.dtype, copy=False)

    @property
    def grad(self):
        """Accumulated gradient or `None`."""
        return self.tensor.grad

    @property
    def shape(self) -> Tuple[int, ...]:
        """Parameter shape."""
        return self.tensor.shape


class Module:
    """Base class of layers and models."""

    training = True

    def named_params(self, prefix: str = "") -> Iterator[Tuple[str, Param]]:
        """Parameters with their attribute paths, in definition order."""
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Param):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_params(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{path}.{index}.")

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        """This module and all descendants with their paths, depth first."""
        yield prefix.rstrip("."), self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{index}.")

    def modules(self) -> Iterator["Module"]:
        """This module and all descendants, depth first."""
        return (module for _, module in self.named_modules())

    def params(self) -> List[Param]:
        """All parameters in definition order."""
        return [param for _, param in self.named_params()]

    def train(self, mode: bool = True) -> "Module":
        """Switch this module and its descendants to training mode."""
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        """Switch to evaluation mode."""
        return self.train(False)

    def zero_grad(self) -> None:
        """Forget accumulated gradients."""
        for param in self.params():
            param.tensor.zero_grad()


def kaiming_uniform(
    rng: np.random.Generator, shape: Sequence[int], fan_in: int, dtype
) -> np.ndarray:
    """Uniform weights in `+-sqrt(6 / fan_in)`."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype)


class Conv2d(Module):
    """3x3 convolution, stride 1, padding 1."""

    KERNEL = 3

    def __init__(self, in_channels: int, out_channels: int, rng, dtype=np.float32):
        """Initialize the filters."""
        fan_in = in_channels * self.KERNEL * self.KERNEL
        shape = (out_channels, in_channels, self.KERNEL, self.KERNEL)
        self.weight = Param(kaiming_uniform(rng, shape, fan_in, dtype))
        self.bias = Param(np.zeros(out_channels, dtype=dtype))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Convolve."""
        return T.conv2d(x, self.weight.tensor, self.bias.tensor, stride=1, pad=1)


class BatchNorm2d(Module):
    """Batch normalization owning its running statistics."""

    MOMENTUM = 0.1
    EPS = 1e-5

    def __init__(self, channels: int, dtype=np.float32):
        """Start with gamma = 1, beta = 0 and no running statistics."""
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running = T.RunningStats()

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Normalize according to the current mode."""
        return T.batchnorm2d(
            x,
            self.gamma.tensor,
            self.beta.tensor,
            training=self.training,
            running=self.running,
            momentum=self.MOMENTUM,
            eps=self.EPS,
        )


class Linear(Module):
    """Fully connected layer."""

    def __init__(self, in_features: int, out_features: int, rng, dtype=np.float32):
        """Initialize the weight matrix `[out, in]`."""
        self.weight = Param(
            kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
        )
        self.bias = Param(np.zeros(out_features, dtype=dtype))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Apply the affine map."""
        return T.linear(x, self.weight.tensor, self.bias.tensor)


class ConvBlock(Module):
    """conv - batch norm - relu - 2x2 max pool."""

    def __init__(self, in_channels: int, out_channels: int, rng, dtype=np.float32):
        """Create the convolution and its normalization."""
        self.conv = Conv2d(in_channels, out_channels, rng, dtype)
        self.norm = BatchNorm2d(out_channels, dtype)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Run the block."""
        return T.maxpool2(T.relu(self.norm(self.conv(x))))


class ConvEmbedder(Module):
    """Stack of `depth` convolution blocks on single-channel images."""

    def __init__(self, depth: int, channels: int, rng, dtype=np.float32):
        """Create the blocks."""
        self.blocks = [
            ConvBlock(1 if index == 0 else channels, channels, rng, dtype)
            for index in range(depth)
        ]

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Embed `[N, 1, S, S]` images into `[N, channels, s, s]` maps."""
        for block in self.blocks:
            x = block(x)
        return x


class Mlp(Module):
    """Linear layers with relu in between (none after the last one)."""

    def __init__(self, sizes: Sequence[int], rng, dtype=np.float32):
        """Create `len(sizes) - 1` linear layers."""
        assert len(sizes) >= 2, "Perceptron needs input and output sizes!"
        self.layers = [
            Linear(size_in, size_out, rng, dtype)
            for size_in, size_out in zip(sizes[:-1], sizes[1:])
        ]

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Run the perceptron."""
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1:
                x = T.relu(x)
        return x
