"""From-scratch DDPM machinery.

Cosine noise schedule, forward noising, ancestral sampling with uniform
respacing (posterior recomputed on the subsequence), an analytic Gaussian
oracle denoiser for sampler-correctness checks, and a small fully-connected
noise predictor with hand-derived gradients trained by Adam with EMA weights.

A denoiser is any callable ``eps_hat = f(x, tau, cond)`` where ``x`` is
(n, D), ``tau`` is an integer timestep shared by the batch, and ``cond`` is
(n, C) or None. All randomness flows through explicitly passed generators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative noise-retention coefficients; alpha_bar[0] == 1."""

    alpha_bar: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        abar = np.asarray(self.alpha_bar, dtype=np.float64)
        betas = np.asarray(self.betas, dtype=np.float64)
        if abar.ndim != 1 or abar.shape[0] != betas.shape[0] + 1:
            raise ValueError("alpha_bar must have one more entry than betas")
        if abar[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(np.diff(abar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if abar[-1] <= 0.0:
            raise ValueError("alpha_bar must stay positive")
        for name, arr in (("alpha_bar", abar), ("betas", betas)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0]


def cosine_schedule(num_steps: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Squared-cosine alpha_bar curve with per-step beta clipping."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if s <= 0.0:
        raise ValueError("s must be positive")
    tau = np.arange(num_steps + 1, dtype=np.float64)
    f = np.cos(((tau / num_steps + s) / (1.0 + s)) * (math.pi / 2.0)) ** 2
    abar_raw = f / f[0]
    betas = np.clip(1.0 - abar_raw[1:] / abar_raw[:-1], 0.0, max_beta)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(alpha_bar, betas)


def q_sample(x0, tau, eps, schedule: NoiseSchedule):
    """Forward noising: sqrt(abar) * x0 + sqrt(1 - abar) * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    abar = schedule.alpha_bar[tau]
    abar = np.asarray(abar, dtype=np.float64)
    if abar.ndim == 1:  # per-row timesteps
        abar = abar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def respaced_timesteps(num_steps: int, steps: int) -> np.ndarray:
    """Uniformly strided subsequence of 1..num_steps ending at num_steps."""
    if steps < 1 or steps > num_steps:
        raise ValueError("steps must lie in [1, num_steps]")
    kept = np.unique(np.round(np.arange(1, steps + 1) * num_steps / steps)).astype(int)
    return kept


def p_sample_loop(
    denoiser: Callable,
    cond,
    schedule: NoiseSchedule,
    steps: int,
    rng: np.random.Generator,
    shape,
) -> np.ndarray:
    """Ancestral sampling over a respaced timestep subsequence.

    The posterior mean and variance are recomputed on the subsequence; the
    final step adds no noise. Returns the x0 estimate with the given shape.
    """
    timesteps = respaced_timesteps(schedule.num_steps, steps)
    abar = schedule.alpha_bar
    x = rng.standard_normal(shape)
    for k in range(len(timesteps) - 1, -1, -1):
        tau = int(timesteps[k])
        tau_prev = int(timesteps[k - 1]) if k > 0 else 0
        abar_t = abar[tau]
        abar_prev = abar[tau_prev]
        alpha = abar_t / abar_prev
        eps_hat = denoiser(x, tau, cond)
        mean = (x - ((1.0 - alpha) / math.sqrt(1.0 - abar_t)) * eps_hat) / math.sqrt(alpha)
        if k > 0:
            var = (1.0 - alpha) * (1.0 - abar_prev) / (1.0 - abar_t)
            x = mean + math.sqrt(var) * rng.standard_normal(shape)
        else:
            x = mean
    return x


def oracle_gaussian_eps(x, tau: int, mu0, sigma0, schedule: NoiseSchedule):
    """Exact noise posterior mean for a Gaussian data distribution.

    For x0 ~ N(mu0, sigma0^2) the conditional mean of the injected noise
    given the noisy sample has the closed form below; feeding it to the
    sampler must reproduce the target distribution.
    """
    x = np.asarray(x, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    abar = float(schedule.alpha_bar[tau])
    var0 = sigma0**2
    gain = math.sqrt(abar) * var0 / (abar * var0 + (1.0 - abar))
    x0_mean = mu0 + gain * (x - math.sqrt(abar) * mu0)
    denom = math.sqrt(1.0 - abar) if abar < 1.0 else 1.0
    return (x - math.sqrt(abar) * x0_mean) / denom


def make_gaussian_oracle(mu0, sigma0, schedule: NoiseSchedule) -> Callable:
    """Denoiser callable wrapping :func:`oracle_gaussian_eps`."""

    def denoiser(x, tau, cond):
        return oracle_gaussian_eps(x, tau, mu0, sigma0, schedule)

    return denoiser


def make_target_oracle(target, schedule: NoiseSchedule) -> Callable:
    """Denoiser that steers sampling onto a known clean signal.

    Stands in for a trained generator when the clean output is available from
    another source (for example a ray-cast renderer).
    """
    target = np.asarray(target, dtype=np.float64)

    def denoiser(x, tau, cond):
        abar = float(schedule.alpha_bar[tau])
        return (x - math.sqrt(abar) * target) / math.sqrt(1.0 - abar)

    return denoiser


# ---------------------------------------------------------------------------
# Fully-connected noise predictor with analytic gradients
# ---------------------------------------------------------------------------


def sinusoidal_embedding(tau: int, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard transformer-style timestep embedding, shape (dim,)."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    angles = tau * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


@dataclass(frozen=True, eq=False)
class MLPDenoiser:
    """Tanh MLP predicting the injected noise from (x, tau embedding, cond)."""

    x_dim: int
    cond_dim: int
    emb_dim: int
    weights: tuple  # per layer, shape (in, out)
    biases: tuple  # per layer, shape (out,)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias width must match layer output")

    @property
    def widths(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def input_dim(self) -> int:
        return self.x_dim + self.emb_dim + self.cond_dim

    def __call__(self, x, tau, cond=None):
        return mlp_eps(self, x, tau, cond)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def with_flat_parameters(self, flat: np.ndarray) -> "MLPDenoiser":
        weights, biases = [], []
        offset = 0
        for w in self.weights:
            weights.append(flat[offset : offset + w.size].reshape(w.shape))
            offset += w.size
        for b in self.biases:
            biases.append(flat[offset : offset + b.size].reshape(b.shape))
            offset += b.size
        if offset != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
        return replace(self, weights=tuple(weights), biases=tuple(biases))


def mlp_init(
    x_dim: int,
    cond_dim: int,
    rng: np.random.Generator,
    hidden: Sequence[int] = (128, 128),
    emb_dim: int = 16,
    scale: float = 0.1,
) -> MLPDenoiser:
    """Gaussian-initialized parameters scaled by fan-in."""
    dims = [x_dim + emb_dim + cond_dim, *hidden, x_dim]
    weights, biases = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((din, dout)) * scale / math.sqrt(din))
        biases.append(np.zeros(dout))
    return MLPDenoiser(x_dim, cond_dim, emb_dim, tuple(weights), tuple(biases))


def _assemble_input(model: MLPDenoiser, x, tau, cond):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.x_dim:
        raise ValueError(f"x has width {x.shape[1]}, expected {model.x_dim}")
    n = x.shape[0]
    emb = np.broadcast_to(sinusoidal_embedding(tau, model.emb_dim), (n, model.emb_dim))
    if model.cond_dim == 0:
        cond_arr = np.zeros((n, 0))
    else:
        if cond is None:
            raise ValueError("model expects a condition input")
        cond_arr = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        if cond_arr.shape != (n, model.cond_dim):
            raise ValueError(
                f"cond has shape {cond_arr.shape}, expected {(n, model.cond_dim)}"
            )
    return np.concatenate([x, emb, cond_arr], axis=1)


def _forward(model: MLPDenoiser, inputs: np.ndarray):
    activations = [inputs]
    h = inputs
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        activations.append(h)
    return h, activations


def mlp_eps(model: MLPDenoiser, x, tau, cond=None) -> np.ndarray:
    """Forward pass; returns the predicted noise with the shape of x."""
    x_arr = np.asarray(x, dtype=np.float64)
    out, _ = _forward(model, _assemble_input(model, x_arr, tau, cond))
    return out if x_arr.ndim > 1 else out[0]


def mlp_gradients(
    model: MLPDenoiser,
    x0: np.ndarray,
    cond,
    tau,
    eps: np.ndarray,
    schedule: NoiseSchedule,
):
    """Loss and exact parameter gradients of the noise-matching objective.

    The loss is the mean squared error between the injected noise and the
    prediction at the noised input, averaged over batch rows and components.
    ``tau`` may be a scalar or one timestep per row. Returns
    ``(loss, grad_weights, grad_biases)``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    n = x0.shape[0]
    taus = np.broadcast_to(np.asarray(tau, dtype=int), (n,))

    x_tau = q_sample(x0, taus, eps, schedule)
    # Rows may carry different timesteps; assemble inputs row-group-wise.
    inputs = np.empty((n, model.input_dim))
    for t in np.unique(taus):
        rows = taus == t
        inputs[rows] = _assemble_input(
            model, x_tau[rows], int(t), None if cond is None else np.atleast_2d(cond)[rows]
        )
    out, activations = _forward(model, inputs)

    resid = out - eps
    loss = float(np.mean(resid**2))
    grad_out = 2.0 * resid / resid.size

    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    delta = grad_out
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - activations[i] ** 2)
    return loss, grad_w, grad_b


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and schedule settings; defaults follow the package config."""

    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    warmup_steps: int = 10000
    ema_decay: float = 0.995
    ema_every: int = 10
    seed: int = 0
    log_every: int = 100


@dataclass
class TrainResult:
    model: MLPDenoiser  # EMA parameters
    raw_model: MLPDenoiser
    history: list  # (step, batch loss)


def train_denoiser(
    x0: np.ndarray,
    cond,
    schedule: NoiseSchedule,
    config: TrainingConfig = TrainingConfig(),
    model: Optional[MLPDenoiser] = None,
    hidden: Sequence[int] = (128, 128),
) -> TrainResult:
    """Seeded Adam training loop returning EMA parameters and a loss log."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ValueError("dataset is empty")
    cond_arr = None
    cond_dim = 0
    if cond is not None:
        cond_arr = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        if cond_arr.shape[0] != x0.shape[0]:
            raise ValueError("cond rows must match x0 rows")
        cond_dim = cond_arr.shape[1]

    rng = np.random.default_rng(config.seed)
    if model is None:
        model = mlp_init(x0.shape[1], cond_dim, rng, hidden=hidden)
    flat = model.flat_parameters()
    ema = flat.copy()
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)

    n = x0.shape[0]
    history = []
    order = rng.permutation(n)
    cursor = 0
    for step in range(1, config.steps + 1):
        take = min(config.batch_size, n)
        if cursor + take > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + take]
        cursor += take

        taus = rng.integers(1, schedule.num_steps + 1, size=take)
        eps = rng.standard_normal((take, x0.shape[1]))
        batch_cond = None if cond_arr is None else cond_arr[idx]
        loss, grad_w, grad_b = mlp_gradients(
            model, x0[idx], batch_cond, taus, eps, schedule
        )
        grad = np.concatenate(
            [g.ravel() for g in grad_w] + [g.ravel() for g in grad_b]
        )

        lr = config.learning_rate
        if config.warmup_steps > 0:
            lr *= min(1.0, step / config.warmup_steps)
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad**2
        m_hat = m / (1.0 - config.beta1**step)
        v_hat = v / (1.0 - config.beta2**step)
        flat = flat - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        model = model.with_flat_parameters(flat)

        if step % config.ema_every == 0:
            ema = config.ema_decay * ema + (1.0 - config.ema_decay) * flat
        if step % config.log_every == 0 or step == 1 or step == config.steps:
            history.append((step, loss))

    return TrainResult(
        model=model.with_flat_parameters(ema), raw_model=model, history=history
    )


def evaluate_loss(
    model: MLPDenoiser,
    x0: np.ndarray,
    cond,
    taus,
    eps: np.ndarray,
    schedule: NoiseSchedule,
) -> float:
    """Noise-matching loss on a fixed evaluation batch (no gradients)."""
    loss, _, _ = mlp_gradients(model, x0, cond, taus, eps, schedule)
    return loss
