"""Denoising diffusion over fixed-length plan vectors.

A plan here is any flat float vector (four 3-d footstep targets in the
planner, a single scalar in the toy experiment). The model predicts the
noise added by the forward process; sampling runs the reverse chain with
optional gradient guidance on the mean. Conditioning, when present, is
embedded by a small learned sub-network and concatenated to the main
net's input alongside the time embedding.
"""

from __future__ import annotations

import numpy as np

from .nn import Adam, Mlp, load_mlp, load_sidecar, save_mlp, save_sidecar, time_embed


class NoiseSchedule:
    """Cosine signal-retention schedule.

    ``alpha_bars[i]`` is the retained signal fraction after i corruption
    steps, with ``alpha_bars[0] == 1`` by convention. Betas come from
    consecutive alpha-bar ratios, clipped to at most ``beta_max``, and
    alpha-bars are rebuilt as the cumulative product of (1 - beta) so the
    telescoping identity holds exactly.
    """

    def __init__(self, n_steps: int = 20, offset: float = 0.008,
                 beta_max: float = 0.999):
        if n_steps < 1:
            raise ValueError("need at least one step")
        t = np.arange(n_steps + 1, dtype=np.float64)
        f = np.cos(((t / n_steps + offset) / (1.0 + offset)) * (np.pi / 2.0)) ** 2
        self.betas = np.minimum(1.0 - f[1:] / f[:-1], beta_max)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(self.alphas)])
        prev, cur = self.alpha_bars[:-1], self.alpha_bars[1:]
        # posterior variance of the reverse step; zero at i=1 since
        # alpha_bars[0] == 1
        self.sigma2 = (1.0 - prev) / (1.0 - cur) * self.betas
        self.sigmas = np.sqrt(self.sigma2)
        self.n_steps = n_steps
        self.offset = offset
        self.beta_max = beta_max

    # accessors take the 1-based step index i in [1, n_steps]
    def beta(self, i):
        return self.betas[np.asarray(i) - 1]

    def alpha(self, i):
        return self.alphas[np.asarray(i) - 1]

    def alpha_bar(self, i):
        return self.alpha_bars[np.asarray(i)]

    def sigma(self, i):
        return self.sigmas[np.asarray(i) - 1]

    def meta(self) -> dict:
        return {"n_steps": self.n_steps, "offset": self.offset,
                "beta_max": self.beta_max}


def forward_noise(schedule: NoiseSchedule, x0, i, eps):
    """Closed-form corruption: sqrt(ab_i) x0 + sqrt(1 - ab_i) eps.

    ``i`` may be a scalar or one index per row of ``x0``; i = 0 returns
    ``x0`` unchanged.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = schedule.alpha_bar(i)
    if np.ndim(ab) == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


class GuidanceSpec:
    """Scalar objective over plans, maximized during sampling.

    ``value_fn(plans) -> (n,)`` scores a batch of denormalized plans.
    ``grad_fn(plans) -> (n, d)`` is its gradient; when omitted the
    gradient falls back to central finite differences of ``value_fn``.
    """

    def __init__(self, value_fn, grad_fn=None, fd_step: float = 1e-4):
        self.value_fn = value_fn
        self.grad_fn = grad_fn
        self.fd_step = fd_step

    def value(self, plans):
        return np.asarray(self.value_fn(np.atleast_2d(plans)), dtype=np.float64)

    def grad(self, plans):
        plans = np.atleast_2d(np.asarray(plans, dtype=np.float64))
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(plans), dtype=np.float64)
        g = np.zeros_like(plans)
        for j in range(plans.shape[1]):
            hi = plans.copy()
            lo = plans.copy()
            hi[:, j] += self.fd_step
            lo[:, j] -= self.fd_step
            g[:, j] = (self.value(hi) - self.value(lo)) / (2.0 * self.fd_step)
        return g


class Denoiser:
    """Noise-prediction model with normalization baked in.

    The main net consumes [noisy plan | time embedding | conditioning
    embedding]; the conditioning embedding comes from a separate small
    net trained jointly. Unconditional models simply omit that block.
    Normalization statistics for plans (and conditioning) live on the
    model and ride along in its sidecar file.
    """

    def __init__(self, plan_dim: int, schedule: NoiseSchedule,
                 hidden=(256, 256, 256), time_dim: int = 32,
                 cond_dim: int | None = None, cond_embed_dim: int = 64,
                 cond_hidden=(128,), rng: np.random.Generator | None = None,
                 nets=None):
        self.plan_dim = plan_dim
        self.schedule = schedule
        self.time_dim = time_dim
        self.cond_dim = cond_dim
        self.cond_embed_dim = cond_embed_dim if cond_dim else 0
        in_dim = plan_dim + time_dim + self.cond_embed_dim
        if nets is not None:
            self.net, self.cond_net = nets
        else:
            self.net = Mlp([in_dim, *hidden, plan_dim], rng=rng)
            self.cond_net = None
            if cond_dim:
                self.cond_net = Mlp([cond_dim, *cond_hidden, cond_embed_dim], rng=rng)
        self.plan_mean = np.zeros(plan_dim)
        self.plan_std = np.ones(plan_dim)
        self.cond_mean = np.zeros(cond_dim) if cond_dim else None
        self.cond_std = np.ones(cond_dim) if cond_dim else None
        # denormalized per-coordinate clamp bounds; None disables
        self.plan_low = None
        self.plan_high = None

    def set_plan_stats(self, mean, std, low=None, high=None):
        self.plan_mean = np.asarray(mean, dtype=np.float64)
        self.plan_std = np.asarray(std, dtype=np.float64)
        self.plan_low = None if low is None else np.asarray(low, dtype=np.float64)
        self.plan_high = None if high is None else np.asarray(high, dtype=np.float64)

    def set_cond_stats(self, mean, std):
        self.cond_mean = np.asarray(mean, dtype=np.float64)
        self.cond_std = np.asarray(std, dtype=np.float64)

    def x0_bounds(self):
        """Plan coordinate bounds in normalized units, or None if unset."""
        if self.plan_low is None:
            return None
        return ((self.plan_low - self.plan_mean) / self.plan_std,
                (self.plan_high - self.plan_mean) / self.plan_std)

    def normalize_plan(self, plans):
        return (np.asarray(plans, dtype=np.float64) - self.plan_mean) / self.plan_std

    def denormalize_plan(self, plans, clamp: bool = True):
        out = np.asarray(plans, dtype=np.float64) * self.plan_std + self.plan_mean
        if clamp and self.plan_low is not None:
            out = np.clip(out, self.plan_low, self.plan_high)
        return out

    def normalize_cond(self, cond):
        return (np.asarray(cond, dtype=np.float64) - self.cond_mean) / self.cond_std

    def embed_cond(self, cond_norm):
        if self.cond_net is None:
            return None
        return self.cond_net.forward(cond_norm)

    def eps(self, x, i, cond_embed=None):
        """Predict the corruption noise for normalized noisy plans ``x``."""
        y, _ = self._eps_full(x, i, cond_embed)
        return y

    def _eps_full(self, x, i, cond_embed):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        temb = np.atleast_2d(time_embed(i, self.time_dim))
        if temb.shape[0] == 1 and x.shape[0] > 1:
            temb = np.broadcast_to(temb, (x.shape[0], self.time_dim))
        parts = [x, temb]
        if self.cond_net is not None:
            ce = np.atleast_2d(cond_embed)
            if ce.shape[0] == 1 and x.shape[0] > 1:
                ce = np.broadcast_to(ce, (x.shape[0], self.cond_embed_dim))
            parts.append(ce)
        return self.net.forward_full(np.concatenate(parts, axis=1))


def train_step(model: Denoiser, opt: Adam, plans_norm, rng: np.random.Generator,
               conds_norm=None, cond_opt: Adam | None = None) -> float:
    """One Adam step on the noise-prediction loss for one batch.

    Loss is the batch mean of the squared norm of the prediction
    residual. Conditioning, when present, is embedded with gradients
    flowing back into the embedder.
    """
    plans_norm = np.atleast_2d(np.asarray(plans_norm, dtype=np.float64))
    n = plans_norm.shape[0]
    sched = model.schedule
    i = rng.integers(1, sched.n_steps + 1, size=n)
    eps = rng.standard_normal(plans_norm.shape)
    x = forward_noise(sched, plans_norm, i, eps)

    temb = time_embed(i, model.time_dim)
    parts = [x, temb]
    cond_cache = None
    if model.cond_net is not None:
        ce, cond_cache = model.cond_net.forward_full(np.atleast_2d(conds_norm))
        parts.append(ce)
    inp = np.concatenate(parts, axis=1)
    out, cache = model.net.forward_full(inp)
    resid = out - eps
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grads, gx = model.net.backward_from(cache, (2.0 / n) * resid)
    opt.step(model.net, grads)
    if model.cond_net is not None:
        gce = gx[:, model.plan_dim + model.time_dim:]
        cgrads, _ = model.cond_net.backward_from(cond_cache, gce)
        cond_opt.step(model.cond_net, cgrads)
    return loss


def reverse_mean(model: Denoiser, x, i: int, cond_embed=None):
    """Posterior mean of the reverse step at index i for noisy plans x.

    The noise prediction is first reconciled with the plan bounds: where
    the clean-plan estimate it implies leaves the model's normalized
    coordinate bounds, it is clamped there and the prediction recomputed.
    In-bounds coordinates are untouched; out of bounds the clamp stops
    the 1/sqrt(alpha_i) amplification of prediction error at the
    high-noise steps from throwing the chain off the data scale.
    """
    sched = model.schedule
    e = model.eps(x, i, cond_embed)
    ab = sched.alpha_bar(i)
    bounds = model.x0_bounds()
    if bounds is not None:
        lo, hi = bounds
        x0 = (x - np.sqrt(1.0 - ab) * e) / np.sqrt(ab)
        clipped = np.clip(x0, lo, hi)
        # in-bounds coordinates keep the raw prediction bit for bit
        e = np.where(clipped == x0, e,
                     (x - np.sqrt(ab) * clipped) / np.sqrt(1.0 - ab))
    coeff = sched.beta(i) / np.sqrt(1.0 - ab)
    return (x - coeff * e) / np.sqrt(sched.alpha(i))


def denoise_step(model: Denoiser, x, i: int, z, cond_embed=None):
    """One unguided reverse step; pass z = 0 at i = 1."""
    return reverse_mean(model, x, i, cond_embed) + sched_sigma(model, i) * z


def guided_denoise_step(model: Denoiser, x, i: int, z, guidance: GuidanceSpec,
                        weight: float, cond_embed=None):
    """Reverse step with the mean shifted by weight * sigma_i^2 * grad J.

    The guidance objective sees denormalized (unclamped) plans; its
    gradient is mapped back to normalized coordinates through the plan
    scale. weight = 0 reproduces the unguided step bit for bit.
    """
    mean = reverse_mean(model, x, i, cond_embed)
    if weight != 0.0:
        g = guidance.grad(model.denormalize_plan(x, clamp=False))
        mean = mean + weight * model.schedule.sigma2[i - 1] * (g * model.plan_std)
    return mean + sched_sigma(model, i) * z


def sched_sigma(model: Denoiser, i: int):
    return model.schedule.sigmas[i - 1]


def sample_plans(model: Denoiser, count: int, rng: np.random.Generator,
                 cond=None, guidance: GuidanceSpec | None = None,
                 guide_weight: float = 0.0, return_normalized: bool = False):
    """Draw ``count`` plans by running the reverse chain from pure noise.

    ``cond`` is one raw (unnormalized) conditioning vector shared by all
    chains. The final plans are denormalized and clamped to the model's
    coordinate bounds.
    """
    cond_embed = None
    if model.cond_net is not None:
        if cond is None:
            raise ValueError("model is conditional; a conditioning vector is required")
        cond_embed = model.embed_cond(model.normalize_cond(cond))
    x = rng.standard_normal((count, model.plan_dim))
    for i in range(model.schedule.n_steps, 0, -1):
        z = rng.standard_normal(x.shape) if i > 1 else np.zeros_like(x)
        if guidance is not None and guide_weight != 0.0:
            x = guided_denoise_step(model, x, i, z, guidance, guide_weight, cond_embed)
        else:
            x = denoise_step(model, x, i, z, cond_embed)
    if return_normalized:
        return x
    return model.denormalize_plan(x)


def cfg_combine(eps_uncond, eps_cond, w: float):
    """Classifier-free combination: uncond + w * (cond - uncond)."""
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    return eps_uncond + w * (eps_cond - eps_uncond)


def dataset_stats(rows, floor: float = 1e-3):
    """Per-column mean and std with a floor on std for constant columns."""
    rows = np.asarray(rows, dtype=np.float64)
    return rows.mean(axis=0), np.maximum(rows.std(axis=0), floor)


def save_denoiser(path_base: str, model: Denoiser) -> None:
    """Write ``<base>.vpnn`` (+ ``<base>.cond.vpnn``) and a JSON sidecar."""
    save_mlp(path_base + ".vpnn", model.net)
    meta = {
        "kind": "denoiser",
        "plan_dim": model.plan_dim,
        "time_dim": model.time_dim,
        "cond_dim": model.cond_dim,
        "cond_embed_dim": model.cond_embed_dim,
        "schedule": model.schedule.meta(),
        "plan_mean": model.plan_mean,
        "plan_std": model.plan_std,
        "plan_low": model.plan_low,
        "plan_high": model.plan_high,
    }
    if model.cond_net is not None:
        save_mlp(path_base + ".cond.vpnn", model.cond_net)
        meta["cond_mean"] = model.cond_mean
        meta["cond_std"] = model.cond_std
    save_sidecar(path_base + ".json", meta)


def load_denoiser(path_base: str) -> Denoiser:
    meta = load_sidecar(path_base + ".json")
    if meta.get("kind") != "denoiser":
        raise ValueError(f"{path_base}.json: sidecar kind {meta.get('kind')!r}, "
                         "expected 'denoiser'")
    sched = NoiseSchedule(**meta["schedule"])
    net = load_mlp(path_base + ".vpnn")
    cond_net = None
    if meta["cond_dim"]:
        cond_net = load_mlp(path_base + ".cond.vpnn")
    model = Denoiser(meta["plan_dim"], sched, time_dim=meta["time_dim"],
                     cond_dim=meta["cond_dim"],
                     cond_embed_dim=meta["cond_embed_dim"] or 64,
                     nets=(net, cond_net))
    model.set_plan_stats(meta["plan_mean"], meta["plan_std"],
                         meta.get("plan_low"), meta.get("plan_high"))
    if meta["cond_dim"]:
        model.set_cond_stats(meta["cond_mean"], meta["cond_std"])
    expect = model.plan_dim + model.time_dim + model.cond_embed_dim
    if net.dims[0] != expect or net.dims[-1] != model.plan_dim:
        raise ValueError(f"{path_base}: net dims {net.dims} inconsistent with sidecar")
    return model
