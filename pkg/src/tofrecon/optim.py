"""Optimizers used by the training loops.

Variance-rectified adaptive moments (with the momentum-only fallback during
the short non-rectifiable warmup), plain bias-corrected adaptive moments,
and a lookahead wrapper that periodically pulls slow weights toward the
fast ones. Implemented here rather than taken from torch.optim so the
update formulas match the published references step for step and so
non-finite gradients reject the whole step instead of poisoning state.
"""

from __future__ import annotations

import math

import torch
from torch.optim import Optimizer

from .validation import ConfigError, TrainingError


class NonFiniteGradientError(TrainingError):
    """Raised when a step sees NaN/Inf gradients; no state was modified."""


def _check_finite_grads(param_groups):
    for group in param_groups:
        for p in group["params"]:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradientError("non-finite gradient; step rejected")


class Adam(Optimizer):
    """Bias-corrected adaptive-moment estimation."""

    def __init__(self, params, lr=1e-4, betas=(0.5, 0.999), eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps))

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        _check_finite_grads(self.param_groups)
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(beta1).add_(grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                m_hat = m / (1 - beta1**t)
                v_hat = v / (1 - beta2**t)
                p.addcdiv_(m_hat, v_hat.sqrt().add_(group["eps"]), value=-group["lr"])
        return loss


class RAdam(Optimizer):
    """Rectified adaptive moments.

    While the length of the moving second-moment window is too short for the
    rectification term to exist (the first 5 steps at beta2=0.999), the
    update falls back to the bias-corrected momentum direction scaled by the
    learning rate alone; afterwards the variance-rectified adaptive step is
    applied.
    """

    def __init__(self, params, lr=1e-4, betas=(0.5, 0.999), eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps))

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        _check_finite_grads(self.param_groups)
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            rho_inf = 2 / (1 - beta2) - 1
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(beta1).add_(grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                beta2_t = beta2**t
                rho_t = rho_inf - 2 * t * beta2_t / (1 - beta2_t)
                m_hat = m / (1 - beta1**t)
                if rho_t >= 5:
                    rect = math.sqrt(
                        (rho_t - 4) * (rho_t - 2) * rho_inf
                        / ((rho_inf - 4) * (rho_inf - 2) * rho_t)
                    )
                    v_hat = (v / (1 - beta2_t)).sqrt().add_(group["eps"])
                    p.addcdiv_(m_hat, v_hat, value=-group["lr"] * rect)
                else:
                    p.add_(m_hat, alpha=-group["lr"])
        return loss


class Lookahead:
    """Slow/fast weight averaging around an inner optimizer.

    Every k inner steps: slow += alpha * (fast - slow), then the fast
    weights are reset to the slow ones. Exposes the optimizer protocol
    (step / zero_grad / state_dict / load_state_dict / param_groups).
    """

    def __init__(self, inner: Optimizer, k: int = 5, alpha: float = 0.5):
        if k < 1:
            raise ConfigError(f"lookahead k must be >= 1, got {k}")
        if not 0 < alpha <= 1:
            raise ConfigError(f"lookahead alpha must be in (0, 1], got {alpha}")
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self._counter = 0
        self.param_groups = inner.param_groups
        self._slow = [
            [p.detach().clone() for p in group["params"]] for group in inner.param_groups
        ]

    @torch.no_grad()
    def step(self, closure=None):
        loss = self.inner.step(closure)
        self._counter += 1
        if self._counter % self.k == 0:
            for group, slow_group in zip(self.inner.param_groups, self._slow):
                for p, slow in zip(group["params"], slow_group):
                    slow.add_(p - slow, alpha=self.alpha)
                    p.copy_(slow)
        return loss

    def zero_grad(self, set_to_none: bool = True):
        self.inner.zero_grad(set_to_none=set_to_none)

    def state_dict(self):
        return {
            "inner": self.inner.state_dict(),
            "counter": self._counter,
            "k": self.k,
            "alpha": self.alpha,
            "slow": [[s.clone() for s in group] for group in self._slow],
        }

    def load_state_dict(self, state):
        self.inner.load_state_dict(state["inner"])
        self._counter = state["counter"]
        self.k = state["k"]
        self.alpha = state["alpha"]
        for group, saved in zip(self._slow, state["slow"]):
            for slow, value in zip(group, saved):
                slow.copy_(value)


def build_optimizer(params, kind: str = "radam", lr: float = 1e-4,
                    betas=(0.5, 0.999), lookahead: bool = False,
                    lookahead_k: int = 5, lookahead_alpha: float = 0.5) -> Optimizer:
    """Construct the configured optimizer, optionally lookahead-wrapped."""
    params = list(params)
    if kind == "radam":
        inner = RAdam(params, lr=lr, betas=betas)
    elif kind == "adam":
        inner = Adam(params, lr=lr, betas=betas)
    else:
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    if lookahead:
        return Lookahead(inner, k=lookahead_k, alpha=lookahead_alpha)
    return inner


def set_learning_rate(optimizer: Optimizer, lr: float) -> None:
    groups = optimizer.inner.param_groups if isinstance(optimizer, Lookahead) else optimizer.param_groups
    for group in groups:
        group["lr"] = lr
