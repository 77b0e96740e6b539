"""Named trainable parameters and the Adam update rule."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ContractError

ADAM_DEFAULTS = {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


class _AdamState:
    __slots__ = ("m", "v", "step")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.step = 0


class ParamStore:
    """A map from parameter name to trainable tensor, plus Adam state.

    Parameter names are unique. Embedding-style tables can grow rows when
    new nodes appear; the new rows start with zeroed optimizer moments.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._adam: dict[str, _AdamState] = {}
        self.frozen = False

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        self._adam[name] = _AdamState(t.shape, self.dtype)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def total_count(self) -> int:
        """Sum of element counts over all parameter tensors."""
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def backward(self, loss: Tensor):
        """Reverse pass from `loss`; parameters it never touched get zero grads."""
        Tape(loss).run()
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros(t.shape, dtype=t.data.dtype)

    def grow_rows(self, name: str, new_rows: np.ndarray):
        """Append rows to a table parameter, extending Adam state with zeros."""
        t = self._params[name]
        rows = np.asarray(new_rows, dtype=t.data.dtype)
        t.data = np.concatenate([t.data, rows], axis=0)
        t.grad = None
        st = self._adam[name]
        pad = np.zeros(rows.shape, dtype=t.data.dtype)
        st.m = np.concatenate([st.m, pad], axis=0)
        st.v = np.concatenate([st.v, pad], axis=0)

    def freeze(self):
        self.frozen = True

    def adam_step(self, lr=None, beta1=None, beta2=None, eps=None):
        """One bias-corrected Adam update over every parameter.

        Requires a gradient on every parameter (run `backward` first).
        """
        if self.frozen:
            raise ContractError("cannot step a frozen parameter store")
        lr = ADAM_DEFAULTS["lr"] if lr is None else lr
        beta1 = ADAM_DEFAULTS["beta1"] if beta1 is None else beta1
        beta2 = ADAM_DEFAULTS["beta2"] if beta2 is None else beta2
        eps = ADAM_DEFAULTS["eps"] if eps is None else eps
        missing = [name for name, t in self._params.items() if t.grad is None]
        if missing:
            raise ContractError(f"adam_step with missing gradients: {missing}")
        for name, t in self._params.items():
            st = self._adam[name]
            st.step += 1
            g = t.grad
            st.m = beta1 * st.m + (1.0 - beta1) * g
            st.v = beta2 * st.v + (1.0 - beta2) * (g * g)
            m_hat = st.m / (1.0 - beta1**st.step)
            v_hat = st.v / (1.0 - beta2**st.step)
            t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameter values keyed by name (copies), for checkpointing."""
        return {name: t.numpy() for name, t in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, values in arrays.items():
            if name not in self._params:
                raise ContractError(f"unknown parameter {name!r} in checkpoint")
            t = self._params[name]
            data = np.asarray(values, dtype=t.data.dtype)
            if data.shape[1:] != t.shape[1:]:
                raise ContractError(f"shape mismatch loading {name!r}")
            if data.shape != t.shape:
                # Tables may have grown since construction.
                st = self._adam[name]
                st.m = np.zeros(data.shape, dtype=self.dtype)
                st.v = np.zeros(data.shape, dtype=self.dtype)
            t.data = data
            t.grad = None
