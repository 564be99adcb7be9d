"""1-d constraint-leakage demonstration.

Draw x uniformly on [-span, span], keep it when x plus Gaussian
execution noise lands inside C = [-bound, bound], train an unconditional
denoising model on the kept set, and measure how much of the generated
mass falls outside C. Noisier acceptance keeps more out-of-C points, so
the learned density leaks more: filtering data before training does not
confine the model to the constraint set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import Denoiser, NoiseSchedule, dataset_stats, sample_plans, train_step
from .nn import Adam


def accept_probability(x, sigma: float, bound: float = 1.0):
    """P(x + N(0, sigma^2) lands in [-bound, bound]); indicator at sigma=0."""
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0.0:
        return (np.abs(x) <= bound).astype(np.float64)
    z1 = (bound - x) / sigma
    z0 = (-bound - x) / sigma
    return 0.5 * (_erf_vec(z1 / math.sqrt(2)) - _erf_vec(z0 / math.sqrt(2)))


def _erf_vec(z):
    return np.vectorize(math.erf)(z)


def make_toy_dataset(n: int, sigma: float, rng: np.random.Generator,
                     bound: float = 1.0, span: float = 2.0) -> np.ndarray:
    """Accepted samples: x ~ U(-span, span) kept iff x + noise is in C."""
    out = []
    got = 0
    while got < n:
        x = rng.uniform(-span, span, size=2 * (n - got) + 64)
        noise = sigma * rng.standard_normal(x.shape) if sigma > 0 else 0.0
        keep = x[np.abs(x + noise) <= bound]
        out.append(keep)
        got += len(keep)
    return np.concatenate(out)[:n]


@dataclass
class ToyResult:
    sigma: float
    leakage: float              # generated mass outside C
    accepted_out_frac: float    # training-set mass outside C
    samples: np.ndarray
    data: np.ndarray
    losses: list


def toy_experiment(sigma: float, seed: int, n_train: int = 20_000,
                   n_steps: int = 50, hidden=(64, 64), train_steps: int = 3000,
                   batch: int = 128, lr: float = 1e-3, n_samples: int = 4000,
                   bound: float = 1.0, span: float = 2.0) -> ToyResult:
    """Train a 1-d model on the accepted set and measure leakage."""
    rng = np.random.default_rng(seed)
    data = make_toy_dataset(n_train, sigma, rng, bound, span)
    accepted_out = float(np.mean(np.abs(data) > bound))

    sched = NoiseSchedule(n_steps=n_steps)
    model = Denoiser(1, sched, hidden=hidden, time_dim=8, rng=rng)
    mean, std = dataset_stats(data[:, None])
    model.set_plan_stats(mean, std)
    norm = model.normalize_plan(data[:, None])
    opt = Adam(model.net, lr=lr)
    losses = []
    for _ in range(train_steps):
        idx = rng.integers(0, len(norm), size=batch)
        losses.append(train_step(model, opt, norm[idx], rng))
    samples = sample_plans(model, n_samples, rng)[:, 0]
    leakage = float(np.mean(np.abs(samples) > bound))
    return ToyResult(sigma=sigma, leakage=leakage,
                     accepted_out_frac=accepted_out,
                     samples=samples, data=data, losses=losses)
