"""Adam optimizer and the step-decay learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Parameter


@dataclass
class StepDecaySchedule:
    """Piecewise-constant schedule: lr(i) = initial_lr / decay_factor**(i // decay_every)."""

    initial_lr: float = 1e-4
    decay_factor: float = 2.0
    decay_every: int = 128_000
    total_iters: int = 640_000

    def lr_at(self, iteration: int) -> float:
        if iteration < 0:
            raise ValueError(f"iteration must be non-negative, got {iteration}")
        return self.initial_lr / self.decay_factor ** (iteration // self.decay_every)


@dataclass
class Adam:
    """Adam with bias correction; moment buffers are keyed by parameter name.

    No weight decay and no gradient clipping. After a step every
    parameter's gradient buffer is cleared.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: list[Parameter], lr: float):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        for p in params:
            if p.grad is None:
                raise ContractError(f"parameter {p.name!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        for p in params:
            g = p.grad
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)
            v = self.v[p.name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Flat view of the moment buffers for checkpointing."""
        out = {}
        for name, buf in self.m.items():
            out[f"m.{name}"] = buf
        for name, buf in self.v.items():
            out[f"v.{name}"] = buf
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step_count: int):
        self.m.clear()
        self.v.clear()
        for name, buf in tensors.items():
            if name.startswith("m."):
                self.m[name[2:]] = buf.copy()
            elif name.startswith("v."):
                self.v[name[2:]] = buf.copy()
            else:
                raise ContractError(f"unrecognized optimizer state record {name!r}")
        self.step_count = step_count
