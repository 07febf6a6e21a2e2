"""Loss, gradient extraction, Adam and a finite-difference gradient checker.

Reverse-mode differentiation itself is torch autograd; this module pins
down the contracts the training loop relies on.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch

from meshwss.exceptions import NonFiniteGradientError, UsageError


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over vertices and components of squared differences."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def backward(loss: torch.Tensor, params) -> np.ndarray:
    """Gradients of ``loss`` for every tensor in ``params``, flattened in order (float64)."""
    params = list(params)
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise UsageError("backward() needs a loss produced by a recorded forward pass")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return np.concatenate([
        np.zeros(p.numel()) if g is None else g.detach().reshape(-1).to(torch.float64).numpy()
        for p, g in zip(params, grads)])


@dataclasses.dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float | None = None):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    ``lr`` overrides the state's rate for this step (used by schedules).
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or grads.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    bad = ~np.isfinite(grads)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise NonFiniteGradientError(
            f"{idx.size} non-finite gradient components at step {state.step + 1} "
            f"(first indices {idx[:5].tolist()}, values {grads[idx[:5]].tolist()})")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    rate = state.lr if lr is None else lr
    return params - rate * m_hat / (np.sqrt(v_hat) + state.eps), state


def finite_difference_check(fn, params: list[torch.Tensor], h: float = 1e-5,
                            max_coefficients: int | None = None, seed: int = 0):
    """Compare autograd against central differences of the scalar ``fn()``.

    ``params`` must be float64 leaf tensors used by ``fn``. Returns the worst
    relative error ``|a - n| / max(|a|, |n|, floor)``, where ``floor`` is
    ``1e-6`` of the largest gradient component so exactly-zero entries do not
    divide by zero. At most ``max_coefficients`` randomly chosen coefficients
    are probed.
    """
    for p in params:
        if p.dtype != torch.float64:
            raise ValueError("finite-difference checks need float64 parameters")
    loss = fn()
    analytic = backward(loss, params)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    probe = np.arange(total)
    if max_coefficients is not None and total > max_coefficients:
        probe = np.sort(np.random.default_rng(seed).choice(total, max_coefficients, replace=False))
    offsets = np.cumsum([0] + sizes)
    numeric = np.empty(len(probe))
    with torch.no_grad():
        for k, flat in enumerate(probe):
            j = int(np.searchsorted(offsets, flat, side="right") - 1)
            view = params[j].view(-1)
            i = int(flat - offsets[j])
            orig = view[i].item()
            view[i] = orig + h
            up = fn().item()
            view[i] = orig - h
            down = fn().item()
            view[i] = orig
            numeric[k] = (up - down) / (2 * h)
    a = analytic[probe]
    floor = 1e-6 * max(np.max(np.abs(analytic)), 1e-300)
    rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(rel.max(initial=0.0)), rel
