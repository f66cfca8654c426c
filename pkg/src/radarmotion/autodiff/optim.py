from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


class TrainingError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    kind: str
    lr: float
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


class Optimizer:
    def __init__(self, params: list[Parameter], lr: float, kind: str):
        self.params = list(params)
        for i, p in enumerate(self.params):
            if p.name is None:
                p.name = f"param{i}"
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.state = OptimizerState(kind=kind, lr=lr)

    def _check(self) -> None:
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient for parameter {p.name!r}")

    def step(self) -> None:
        self._check()
        self.state.step += 1
        for p in self.params:
            if p.grad is not None:
                self._update(p)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _update(self, p: Parameter) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr: float = 0.01):
        super().__init__(params, lr, "sgd")

    def _update(self, p: Parameter) -> None:
        p.data = p.data - self.state.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr, "adam")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def _update(self, p: Parameter) -> None:
        st = self.state
        m = st.first_moment.get(p.name)
        v = st.second_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = self.beta1 * m + (1 - self.beta1) * p.grad
        v = self.beta2 * v + (1 - self.beta2) * p.grad * p.grad
        st.first_moment[p.name] = m
        st.second_moment[p.name] = v
        m_hat = m / (1 - self.beta1 ** st.step)
        v_hat = v / (1 - self.beta2 ** st.step)
        p.data = p.data - st.lr * m_hat / (np.sqrt(v_hat) + self.eps)
