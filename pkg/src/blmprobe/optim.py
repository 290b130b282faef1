"""Adam optimizer over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import ContractError


class Parameter:
    """A trainable tensor with a unique dotted name (e.g. "encoder.conv_1.weight")."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


@dataclass
class AdamState:
    """Moment buffers and step counter for one optimizer instance."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Standard Adam with bias correction.

    ``step`` consumes the gradients currently stored on the parameters and
    leaves them in place; zeroing between steps is the caller's job.
    """

    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names passed to Adam")
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for p in self.params:
            self.state.m[p.name] = np.zeros_like(p.data)
            self.state.v[p.name] = np.zeros_like(p.data)

    def step(self) -> None:
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                raise ContractError(f"parameter {p.name} has no gradient")
            m = s.m[p.name]
            v = s.v[p.name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.tensor.data -= s.lr * m_hat / (np.sqrt(v_hat) + s.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()
