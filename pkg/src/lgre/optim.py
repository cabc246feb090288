"""Adam optimizer over named parameter tensors, plus Xavier initialization."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import IntegrityError


@dataclass
class AdamState:
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Bias-corrected Adam over a {name: Tensor} parameter dict.

    step() consumes the gradients accumulated by backward() and clears them,
    so a missing gradient means the graph never reached that parameter."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    def step(self):
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params.items():
            if p.grad is None:
                raise IntegrityError(f"parameter {name!r} has no gradient; "
                                     "was backward() run before step()?")
            g = p.grad
            m = s.first_moment[name]
            v = s.second_moment[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            p.data -= s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def xavier_bound(shape):
    fan_in, fan_out = shape[0], shape[-1]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(shape, rng, requires_grad=True):
    """Uniform Xavier/Glorot tensor on [-b, b], b = sqrt(6/(fan_in+fan_out)).

    rng may be a numpy Generator or an integer seed; the draw is deterministic
    either way."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    b = xavier_bound(shape)
    return Tensor(rng.uniform(-b, b, size=shape), requires_grad=requires_grad)


def zeros(shape, requires_grad=True):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
