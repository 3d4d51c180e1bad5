"""Noise schedules, forward corruption, reverse steps, sampling and EMA."""

from dataclasses import dataclass

import numpy as np

from . import denoiser
from .errors import DivergenceError, InvariantError, ParameterError
from .image import check_same_shape, make_rng, standard_normal_field


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficient tables; index ``t - 1`` holds step ``t``."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def beta(self, t):
        return float(self.betas[self._index(t)])

    def alpha(self, t):
        return float(self.alphas[self._index(t)])

    def alpha_bar(self, t):
        """Cumulative product up to ``t``; ``alpha_bar(0)`` is 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._index(t)])

    def _index(self, t):
        if not 1 <= t <= self.T:
            raise ParameterError(f"step t={t} outside [1, {self.T}]")
        return t - 1

    def table(self):
        """Rows ``(t, beta, alpha, alpha_bar)``."""
        return [(t + 1, self.betas[t], self.alphas[t], self.alpha_bars[t]) for t in range(self.T)]


def schedule_from_betas(betas):
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ParameterError("betas must be a non-empty 1D sequence")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ParameterError("every beta must lie in (0, 1)")
    if np.any(np.diff(betas) < 0):
        raise ParameterError("betas must be nondecreasing")
    alphas = 1.0 - betas
    alpha_bars = np.empty_like(alphas)
    acc = 1.0
    for i, a in enumerate(alphas):
        acc = acc * a
        alpha_bars[i] = acc
    return NoiseSchedule(betas, alphas, alpha_bars)


def linear_beta_schedule(T=100, beta_start=1e-4, beta_end=0.02):
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return schedule_from_betas([beta_start])
    t = np.arange(T)
    return schedule_from_betas(beta_start + t / (T - 1) * (beta_end - beta_start))


def forward_step(x_prev, t, sched, rng):
    """One forward corruption step: sqrt(1 - beta_t) x + sqrt(beta_t) eps."""
    beta = sched.beta(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = rng.standard_normal(x_prev.shape)
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * eps


def forward_marginal(x0, t, eps, sched):
    """Sample of q(x_t | x_0) for a given noise draw ``eps``."""
    check_same_shape(x0, eps)
    ab = sched.alpha_bar(t) if np.ndim(t) == 0 else sched.alpha_bars[np.asarray(t) - 1]
    ab = np.reshape(ab, np.shape(ab) + (1,) * (np.ndim(x0) - np.ndim(ab)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t, t, eps_pred, sched):
    """Invert the closed-form marginal for ``x_0`` given a noise estimate."""
    check_same_shape(x_t, eps_pred)
    ab = sched.alpha_bar(t)
    return (x_t - np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(ab)


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    variance_mode: str = "beta"

    def __post_init__(self):
        if self.variance_mode not in ("beta", "beta_tilde"):
            raise ParameterError(f"variance_mode must be 'beta' or 'beta_tilde', got {self.variance_mode!r}")


def reverse_mean(x_t, t, eps_pred, sched):
    beta = sched.beta(t)
    return (x_t - beta / np.sqrt(1.0 - sched.alpha_bar(t)) * eps_pred) / np.sqrt(sched.alpha(t))


def reverse_variance(t, sched, variance_mode="beta"):
    beta = sched.beta(t)
    if variance_mode == "beta":
        return beta
    return beta * (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t))


def reverse_step(x_t, t, eps_pred, sched, cfg, rng):
    """Draw x_{t-1} from the Gaussian reverse transition; no noise is added at t = 1."""
    check_same_shape(x_t, eps_pred)
    mu = reverse_mean(np.asarray(x_t, dtype=np.float64), t, eps_pred, sched)
    if t == 1:
        return mu
    sigma = np.sqrt(reverse_variance(t, sched, cfg.variance_mode))
    return mu + sigma * rng.standard_normal(mu.shape)


def sample(params, sched, z_y, f, cfg, eps_model=None):
    """Run the full reverse chain from x_T ~ N(0, I) to x_0.

    ``f`` fixes the output resolution. ``eps_model(x_t, t)`` overrides the
    network call, which is handy for analytic tests; by default the
    denoiser with ``params`` is used.

    Raises
    ------
    DivergenceError
        If a non-finite value appears; ``err.step`` names the step.
    """
    height, width = f.shape
    rng = make_rng(cfg.seed)
    x = standard_normal_field(rng, width, height)
    if eps_model is None:
        def eps_model(x_t, t):
            return denoiser.forward(params, x_t, t, z_y, f)
    for t in range(sched.T, 0, -1):
        eps_pred = eps_model(x, t)
        x = reverse_step(x, t, eps_pred, sched, cfg, rng)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"sampling diverged at step t={t}", step=t)
    return x


def ema_update(shadow, current, decay=0.999):
    """Elementwise ``decay * shadow + (1 - decay) * current``.

    Accepts :class:`~awdiff.denoiser.DenoiserParams` or plain arrays.
    """
    if not 0.0 <= decay < 1.0:
        raise ParameterError(f"decay must lie in [0, 1), got {decay}")
    if isinstance(shadow, denoiser.DenoiserParams):
        if not shadow.same_shapes(current):
            raise InvariantError("EMA shadow and current parameters differ in shape")
        return denoiser.DenoiserParams(shadow.arch, {
            k: decay * v + (1.0 - decay) * current.blocks[k] for k, v in shadow.blocks.items()
        })
    check_same_shape(shadow, current, "EMA operands")
    return decay * np.asarray(shadow) + (1.0 - decay) * np.asarray(current)
