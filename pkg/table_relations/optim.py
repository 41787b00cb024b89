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

"""AdamW with decoupled weight decay.

The weights are first shrunk by `1 - lr * weight_decay` and then moved
by the bias-corrected Adam update. Moment buffers live on the `Param`
objects, the step counter on the optimizer; both are stored in
checkpoints.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from .layers import Param

# Module logger.
LOG = logging.getLogger(__name__)


def adamw_step(
    params: Sequence[Param],
    step: int,
    lr: float = 0.001,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """Update `params` in place from their accumulated gradients.

    Args:
        params: Parameters; a missing gradient counts as zero.
        step: One-based index of this update, used for bias correction.
        lr: Learning rate.
        betas: Decay rates of the first and second moments.
        eps: Denominator term.
        weight_decay: Decoupled decay coefficient.
    """
    assert step >= 1, f"Adam steps are counted from one, got {step}!"
    beta1, beta2 = betas
    correction1 = 1 - beta1**step
    correction2 = 1 - beta2**step
    for param in params:
        data = param.data
        kind = data.dtype.type
        grad = np.zeros_like(data) if param.grad is None else param.grad
        param.moment1 = kind(beta1) * param.moment1 + kind(1 - beta1) * grad
        param.moment2 = kind(beta2) * param.moment2 + kind(1 - beta2) * grad * grad
        decayed = data * kind(1 - lr * weight_decay)
        update = (param.moment1 / kind(correction1)) / (
            np.sqrt(param.moment2 / kind(correction2)) + kind(eps)
        )
        param.data = decayed - kind(lr) * update


class AdamW:
    """Optimizer state around `adamw_step`."""

    def __init__(
        self,
        params: Sequence[Param],
        lr: float = 0.001,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        """Remember the parameters and hyperparameters."""
        assert lr > 0, f"Learning rate must be positive, got {lr}!"
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0

    def zero_grad(self) -> None:
        """Forget accumulated gradients."""
        for param in self.params:
            param.tensor.zero_grad()

    def step(self) -> None:
        """Apply one update."""
        self.steps += 1
        adamw_step(
            self.params,
            self.steps,
            lr=self.lr,
            betas=self.betas,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )
