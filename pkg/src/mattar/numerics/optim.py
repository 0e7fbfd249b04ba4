"""Named parameter collections and the gradient-descent update rules."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamSet:
    """Ordered map of named parameters, each a Tensor carrying a gradient slot."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._opt_state: dict[str, dict] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def copy(self) -> "ParamSet":
        dup = ParamSet()
        for k, t in self._params.items():
            dup.add(k, t.data.copy())
        return dup

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, t in self._params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def optimizer_step(params: ParamSet, lr: float, mode: str = "plain"):
    """Apply one gradient step to every parameter and clear the gradient slots.

    ``plain`` is vanilla gradient descent; ``adaptive`` keeps per-parameter
    first/second moment accumulators with bias correction (Adam). Moment
    state lives on the ParamSet so repeated calls continue the same run.
    """
    if mode not in ("plain", "adaptive"):
        raise ValueError(f"unknown optimizer mode: {mode}")
    for name, t in params.items():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        if mode == "plain":
            t.data = t.data - lr * g
        else:
            st = params._opt_state.setdefault(name, {
                "m": np.zeros_like(t.data, dtype=np.float64),
                "v": np.zeros_like(t.data, dtype=np.float64),
                "t": 0,
            })
            st["t"] += 1
            st["m"] = ADAM_BETA1 * st["m"] + (1 - ADAM_BETA1) * g
            st["v"] = ADAM_BETA2 * st["v"] + (1 - ADAM_BETA2) * (g.astype(np.float64) ** 2)
            m_hat = st["m"] / (1 - ADAM_BETA1 ** st["t"])
            v_hat = st["v"] / (1 - ADAM_BETA2 ** st["t"])
            t.data = (t.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(t.data.dtype)
        t.grad = np.zeros_like(t.data)
    return params


def clip_grad_norm(param_sets, max_norm: float) -> float:
    """Scale gradients in-place so their global L2 norm is at most `max_norm`."""
    total = 0.0
    tensors = []
    for ps in param_sets:
        for _, t in ps.items():
            if t.grad is not None:
                total += float(np.sum(t.grad.astype(np.float64) ** 2))
                tensors.append(t)
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for t in tensors:
            t.grad = t.grad * scale
    return norm
