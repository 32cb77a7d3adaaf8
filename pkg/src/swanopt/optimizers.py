"""Step rules: SWAN and the baselines it is compared against.

Every step function is pure: it takes the current weight matrix (plus, for
Adam, an explicit state value) and returns the updated weights. Only Adam
carries state; the remaining kinds are stateless by construction, which is
the point of the exercise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .gradient_ops import (
    GradNormConfig,
    WhiteningConfig,
    grad_norm,
    grad_whitening,
    orthogonalize,
    rescale_update,
)
from .matrixops import as_matrix, schatten1_norm, sym_eig

__all__ = [
    "KINDS",
    "STATELESS_KINDS",
    "ABLATIONS",
    "OptimizerConfig",
    "OptimizerState",
    "init_state",
    "moment_buffer_count",
    "swan_step",
    "adam_step",
    "sgd_step",
    "signed_step",
    "gd_optimal_step",
    "newton_step",
    "whitened_gd_optimal_step",
    "whitened_optimal_learning_rate",
    "linear_warmup_decay",
]

KINDS = (
    "swan",
    "sgd",
    "adam",
    "signed_sgd",
    "gd_optimal",
    "newton",
    "whitened_gd_optimal",
)
STATELESS_KINDS = tuple(k for k in KINDS if k != "adam")
ABLATIONS = ("full", "norm_only", "whiten_only")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "swan"
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    swan_rescale: bool = True
    grad_norm_cfg: GradNormConfig = field(default_factory=GradNormConfig)
    whitening_cfg: WhiteningConfig = field(default_factory=WhiteningConfig)
    ablation: str = "full"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.adam_beta1 < 1.0:
            raise ValueError(f"adam_beta1 must be in [0, 1), got {self.adam_beta1}")
        if not 0.0 <= self.adam_beta2 <= 1.0:
            raise ValueError(f"adam_beta2 must be in [0, 1], got {self.adam_beta2}")
        if self.adam_epsilon <= 0:
            raise ValueError(f"adam_epsilon must be > 0, got {self.adam_epsilon}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")


@dataclass(frozen=True)
class OptimizerState:
    """Step counter plus (for Adam only) the two EMA moment buffers."""

    step: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None


def init_state(cfg: OptimizerConfig, shape: tuple[int, int]) -> OptimizerState:
    """Fresh state: zero moment buffers for adam, none for stateless kinds."""
    if cfg.kind == "adam":
        return OptimizerState(
            step=0,
            first_moment=np.zeros(shape),
            second_moment=np.zeros(shape),
        )
    return OptimizerState(step=0)


def moment_buffer_count(state: OptimizerState) -> int:
    return int(state.first_moment is not None) + int(state.second_moment is not None)


def swan_step(w, g, cfg: OptimizerConfig) -> np.ndarray:
    """One stateless SWAN step: normalize rows, whiten, optionally rescale.

    Inputs with more rows than columns are handled by transposing the whole
    step. Ablations: ``norm_only`` skips whitening, ``whiten_only`` skips the
    row normalization.
    """
    if cfg.kind != "swan":
        raise ValueError(f"swan_step called with kind={cfg.kind!r}")
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch: w is {w.shape}, g is {g.shape}")
    if w.shape[0] > w.shape[1]:
        return swan_step(w.T, g.T, cfg).T
    g_tilde = g if cfg.ablation == "whiten_only" else grad_norm(g, cfg.grad_norm_cfg)
    if cfg.ablation == "norm_only":
        delta = g_tilde
    else:
        delta = grad_whitening(g_tilde, cfg.whitening_cfg)
        if cfg.swan_rescale:
            delta = rescale_update(delta, g_tilde)
    return w - cfg.learning_rate * delta


def adam_step(
    w, g, state: OptimizerState, cfg: OptimizerConfig
) -> tuple[np.ndarray, OptimizerState]:
    """One Adam step with bias correction; returns updated weights and state.

    The theoretical beta2 = 1 variant freezes the second moment at the first
    squared gradient (its bias correction would divide by zero) so the update
    becomes gradient descent preconditioned by diag(|G^0|^-1).
    """
    if cfg.kind != "adam":
        raise ValueError(f"adam_step called with kind={cfg.kind!r}")
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch: w is {w.shape}, g is {g.shape}")
    if state.step > 0 and (state.first_moment is None or state.second_moment is None):
        raise ValueError(f"uninitialized adam state at step {state.step}")
    m = state.first_moment if state.first_moment is not None else np.zeros_like(w)
    nu = state.second_moment if state.second_moment is not None else np.zeros_like(w)
    if m.shape != w.shape or nu.shape != w.shape:
        raise ValueError("adam state buffers do not match the parameter shape")

    t = state.step + 1
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g
    if cfg.adam_beta2 == 1.0:
        nu = g * g if state.step == 0 else nu
        nu_hat = nu
    else:
        nu = cfg.adam_beta2 * nu + (1.0 - cfg.adam_beta2) * g * g
        nu_hat = nu / (1.0 - cfg.adam_beta2**t)
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    w_new = w - cfg.learning_rate * m_hat / (np.sqrt(nu_hat) + cfg.adam_epsilon)
    return w_new, OptimizerState(step=t, first_moment=m, second_moment=nu)


def sgd_step(w, g, cfg: OptimizerConfig) -> np.ndarray:
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch: w is {w.shape}, g is {g.shape}")
    return w - cfg.learning_rate * g


def signed_step(w, g, cfg: OptimizerConfig) -> np.ndarray:
    """Sign descent; sign(0) = 0 so exact zeros get no direction bias."""
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch: w is {w.shape}, g is {g.shape}")
    return w - cfg.learning_rate * np.sign(g)


def _spd_eigenvalues(h) -> np.ndarray:
    h = as_matrix(h, "h")
    if h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got {h.shape[0]}x{h.shape[1]}")
    vals = sym_eig(h).eigenvalues
    if vals[-1] <= 0.0:
        raise ValueError(f"matrix is not positive definite (min eigenvalue {vals[-1]:.3e})")
    return vals


def gd_optimal_step(w, h) -> np.ndarray:
    """Gradient descent on the quadratic 1/2 Tr(w^T h w) at the optimal
    constant rate 2 / (lambda_max + lambda_min)."""
    w = as_matrix(w, "w")
    vals = _spd_eigenvalues(h)
    eta = 2.0 / (vals[0] + vals[-1])
    return w - eta * (h @ w)


def newton_step(w, h, eta: float) -> np.ndarray:
    """Damped Newton step on the quadratic: ``w - eta h^{-1} (h w)``."""
    w = as_matrix(w, "w")
    dec = sym_eig(h)
    if dec.eigenvalues[-1] <= 0.0:
        raise ValueError(
            f"matrix is not positive definite (min eigenvalue {dec.eigenvalues[-1]:.3e})"
        )
    h_inv = dec.eigenvectors @ np.diag(1.0 / dec.eigenvalues) @ dec.eigenvectors.T
    return w - eta * (h_inv @ (h @ w))


def whitened_optimal_learning_rate(h, g) -> float:
    """Dynamic rate for whitened descent on the quadratic: ||h w||_* / Tr(h)."""
    return schatten1_norm(g) / float(np.trace(as_matrix(h, "h")))


_EXACT = WhiteningConfig(mode="exact_eig")


def whitened_gd_optimal_step(w, h) -> np.ndarray:
    """Whitened gradient descent on the quadratic with its optimal dynamic rate.

    The gradient h w is replaced by its orthogonal polar factor and scaled by
    ||h w||_* / Tr(h); from a row-orthonormal start this reaches the optimum in
    a single step.
    """
    w = as_matrix(w, "w")
    _spd_eigenvalues(h)
    g = h @ w
    delta = orthogonalize(g, _EXACT)
    eta = whitened_optimal_learning_rate(h, g)
    return w - eta * delta


def linear_warmup_decay(
    step: int,
    total_steps: int,
    base_lr: float,
    warmup_fraction: float = 0.0,
    floor_fraction: float = 0.1,
) -> float:
    """Linear warmup to ``base_lr`` then linear decay to ``floor_fraction * base_lr``.

    ``step`` is 0-based. With ``warmup_fraction=0`` this is plain linear decay
    to the floor, the schedule shape used when comparing against warmup runs.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    warm = warmup_fraction * total_steps
    if warm > 0 and step < warm:
        return base_lr * (step + 1) / warm
    if total_steps == warm:
        return base_lr
    frac = (step - warm) / (total_steps - warm)
    frac = min(max(frac, 0.0), 1.0)
    return base_lr * (1.0 - (1.0 - floor_fraction) * frac)


def stateless_kind(kind: str) -> bool:
    return kind in STATELESS_KINDS


def with_learning_rate(cfg: OptimizerConfig, lr: float) -> OptimizerConfig:
    return replace(cfg, learning_rate=lr)
