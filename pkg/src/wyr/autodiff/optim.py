"""Adam over named parameters, refusing to step frozen tensors."""

from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np

from wyr.autodiff.tensor import Tensor
from wyr.errors import FrozenParameterError

logger = logging.getLogger(__name__)


class Adam:
    """
    Adam optimiser with optional L2 weight decay.

    Examples:
        >>> p = Tensor([1.0], requires_grad=True)
        >>> optimiser = Adam([("p", p)], lr=0.1)
        >>> (p * p).sum().backward()
        >>> optimiser.step()
        >>> round(float(p.data[0]), 6)
        0.9
    """

    def __init__(
        self,
        named_parameters: Sequence[Tuple[str, Tensor]],
        lr: float = 2e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.named_parameters: List[Tuple[str, Tensor]] = list(named_parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for _, p in self.named_parameters]
        self.v = [np.zeros_like(p.data) for _, p in self.named_parameters]
        self.t = 0
        self._check_trainable()

    def _check_trainable(self) -> None:
        frozen = [name for name, p in self.named_parameters if not p.requires_grad]
        if frozen:
            raise FrozenParameterError(f"optimiser was handed frozen parameters: {frozen}")

    def step(self) -> None:
        self._check_trainable()
        self.t += 1
        for i, (_, p) in enumerate(self.named_parameters):
            if p.grad is None:
                continue
            grad = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * grad**2
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters:
            p.grad = None
