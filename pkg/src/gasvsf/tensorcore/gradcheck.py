"""Central finite-difference checks of the hand-written adjoints.

The numeric side only ever evaluates forward values (no tape), so it stays an
independent oracle for the analytic gradients.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .ops import elementwise_mul, sum_all
from .tensor import Tape, Tensor

DENOM_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DENOM_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    *,
    eps: float = 1e-5,
    seed: int = 0,
    max_entries: int | None = None,
    wrt: list[str] | None = None,
) -> dict[str, float]:
    """Compare tape gradients of ``sum(fn(inputs) * R)`` with central differences.

    ``R`` is a fixed random projection so every output element matters.
    ``max_entries`` limits the probed coordinates per input (sampled with
    ``seed``); ``wrt`` restricts which inputs are differentiated.
    Returns the max relative error per input name.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    wrt = list(base) if wrt is None else wrt

    probe = fn({k: Tensor(v) for k, v in base.items()})
    proj = rng.standard_normal(probe.shape)

    def scalar(arrays) -> float:
        out = fn({k: Tensor(v) for k, v in arrays.items()})
        return float(np.sum(out.data * proj))

    leaves = {k: Tensor(v, requires_grad=k in wrt) for k, v in base.items()}
    with Tape() as tape:
        out = fn(leaves)
        loss = sum_all(elementwise_mul(out, Tensor(proj)))
    tape.backward(loss)

    errors: dict[str, float] = {}
    for name in wrt:
        analytic = tape.grad(leaves[name])
        flat_idx = np.arange(base[name].size)
        if max_entries is not None and flat_idx.size > max_entries:
            flat_idx = np.sort(rng.choice(flat_idx, size=max_entries, replace=False))
        num = np.empty(flat_idx.size)
        ana = np.empty(flat_idx.size)
        for j, fi in enumerate(flat_idx):
            idx = np.unravel_index(fi, base[name].shape)
            orig = base[name][idx]
            base[name][idx] = orig + eps
            fp = scalar(base)
            base[name][idx] = orig - eps
            fm = scalar(base)
            base[name][idx] = orig
            num[j] = (fp - fm) / (2 * eps)
            ana[j] = analytic[idx]
        errors[name] = relative_error(ana, num)
    return errors
