"""Parameter storage, seeded initialization and the Adam update."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

ADAM_DEFAULTS = dict(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)


def philox(seed: int, stream: int = 0, position: int = 0) -> np.random.Generator:
    """Philox4x64-10 generator keyed by ``(seed, stream)``.

    ``position`` selects an independent block of the counter space so that a
    run can be resumed at any iteration without replaying earlier draws.
    """
    bitgen = np.random.Philox(key=[seed & (2**64 - 1), stream & (2**64 - 1)],
                              counter=[0, position & (2**64 - 1), 0, 0])
    return np.random.Generator(bitgen)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ParamStore:
    """Named parameters plus Adam moment buffers and the step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for k, p in self.params.items():
            out[f"param/{k}"] = p.data
            out[f"adam_m/{k}"] = self.m[k]
            out[f"adam_v/{k}"] = self.v[k]
        out["adam_step"] = np.array([float(self.step)])
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, p in self.params.items():
            for key, target in ((f"param/{k}", None), (f"adam_m/{k}", self.m), (f"adam_v/{k}", self.v)):
                if key not in state:
                    raise KeyError(f"checkpoint lacks {key!r}")
                arr = np.asarray(state[key], dtype=np.float64)
                if arr.shape != p.shape:
                    raise ValueError(f"{key}: shape {arr.shape} does not match parameter {p.shape}")
                if target is None:
                    p.data = arr.copy()
                else:
                    target[k] = arr.copy()
        self.step = int(state["adam_step"][0])


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam; missing gradients count as zero. Clears gradients."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store.m[k] = beta1 * store.m[k] + (1.0 - beta1) * g
        v = store.v[k] = beta2 * store.v[k] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
