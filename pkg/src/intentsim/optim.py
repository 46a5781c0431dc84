"""Named parameter tables, the Adam update, and gradient verification.

The optimizer step is the one place parameter arrays are replaced; tensor
objects keep their identity so an open :class:`~intentsim.autodiff.Tape`
never observes mutation of a value it recorded.  Optimizer steps are
exclusive: callers must not run them concurrently with taped forwards that
read the same store.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientError, Tensor, record

__all__ = [
    "AdamState",
    "FdReport",
    "ParameterStore",
    "adam_step",
    "collect_gradients",
    "finite_difference_check",
]


class ParameterStore:
    """Ordered ``name -> Tensor`` table of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
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

    def total_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Snapshot of every parameter value (copies, safe to hold)."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Replace parameter values in place (names and shapes must match)."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(
                f"parameter table mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}"
                )
            t.data = arr.copy()


def collect_gradients(tape, loss, store: ParameterStore) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for every parameter in ``store``, zero-filled.

    A parameter untouched by this particular computation has a true gradient
    of zero (for example the message net on an edgeless graph), so the map
    is always complete.
    """
    by_tensor = tape.gradients(loss)
    out = {}
    for name, t in store.items():
        g = by_tensor.get(t)
        out[name] = np.zeros_like(t.data) if g is None else g
    return out


@dataclass
class AdamState:
    """First/second-moment accumulators plus the shared step counter."""

    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, lr: float = 2e-3) -> "AdamState":
        state = cls(lr=lr)
        for name, t in store.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """One Adam update over every parameter in ``store`` (in place).

    Every parameter must have a gradient entry; a missing one signals a
    broken computation graph upstream and is rejected.
    """
    missing = [name for name, _ in store.items() if name not in grads]
    if missing:
        raise GradientError(f"missing gradient for parameters: {missing}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise GradientError(
                f"gradient shape mismatch for {name!r}: {g.shape} vs {p.data.shape}"
            )
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass(frozen=True)
class FdReport:
    """Result of a finite-difference sweep."""

    max_rel_error: float
    worst_param: str
    checked: int

    def __float__(self) -> float:  # headline number
        return float(self.max_rel_error)


def finite_difference_check(fn, store: ParameterStore, step: float = 1e-5) -> FdReport:
    """Compare taped gradients of ``fn(store)`` with central differences.

    ``fn`` must be deterministic (fix any rng outside).  Every scalar entry
    of every parameter is perturbed by ``+-step``; the report carries the
    max over parameters of ``|analytic - numeric| / max(1, |numeric|)``.
    """
    with record() as tape:
        loss = fn(store)
    if not np.isfinite(loss.data):
        raise GradientError("finite_difference_check: loss is non-finite")
    analytic = collect_gradients(tape, loss, store)

    worst = 0.0
    worst_name = ""
    checked = 0
    for name, t in store.items():
        grad = analytic[name]
        if not np.all(np.isfinite(grad)):
            raise GradientError(f"non-finite analytic gradient for {name!r}")
        base = t.data
        gflat = grad.reshape(-1)
        for i in range(base.size):
            keep = base.flat[i]
            base.flat[i] = keep + step
            hi = float(fn(store).data)
            base.flat[i] = keep - step
            lo = float(fn(store).data)
            base.flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            if not np.isfinite(numeric):
                raise GradientError(f"non-finite numeric gradient for {name!r}[{i}]")
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return FdReport(max_rel_error=worst, worst_param=worst_name, checked=checked)
