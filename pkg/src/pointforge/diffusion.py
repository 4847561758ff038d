"""Denoising diffusion over fixed-size point sets.

State lives in schedule space: n x 6 arrays whose first three channels are
positions in [-1, 1] and whose last three are colors remapped from [0, 1]
to [-1, 1]. Time is continuous in [0, 1]; samplers own the discretization.

The forward process follows

    u_t = sqrt(abar(t)) * b * p0 + sqrt(1 - abar(t)) * eps

with input scale b, and the network-facing state renormalizes to unit
marginal variance, x_t = u_t / sqrt(b^2 abar + (1 - abar)). With b = 1 the
renormalizer is exactly 1 and x_t is the textbook state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from . import rng

T_CLAMP = 1.0 - 1e-5  # guards abar -> 0 divisions near t = 1


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Endpoint-normalized signal-retention curve abar(t) plus input scaling.

    kind selects the interpolant v(u):
      sigmoid: v(u) = 1/(1+exp(-u/tau)), u swept from start to end
      linear:  v(u) = u (start/end/tau drop out; abar = 1 - t)
      cosine:  v(u) = cos(u*pi/2)^(2*tau), meant for start=0, end=1
    and abar(t) = (v(end) - v(start + t*(end-start))) / (v(end) - v(start)),
    clipped so abar(0) = 1 and abar(1) = 0 hold exactly.
    """

    kind: str = "sigmoid"
    start: float = -3.0
    end: float = 3.0
    tau: float = 1.0
    input_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sigmoid", "linear", "cosine"):
            raise DiffusionError(f"unknown schedule kind {self.kind!r}")
        if not self.end > self.start:
            raise DiffusionError("schedule needs end > start")
        if not self.tau > 0:
            raise DiffusionError("schedule needs tau > 0")
        if not self.input_scale > 0:
            raise DiffusionError("input_scale must be positive")

    def alpha_bar(self, t):
        t = np.asarray(t, np.float64)
        if np.any(t < 0) or np.any(t > 1):
            raise DiffusionError("t outside [0, 1]")
        u = self.start + t * (self.end - self.start)
        if self.kind == "sigmoid":
            v0, v1 = expit(np.array([self.start, self.end]) / self.tau)
            raw = (v1 - expit(u / self.tau)) / (v1 - v0)
        elif self.kind == "linear":
            raw = 1.0 - t
        else:
            v0, v1 = np.cos(np.array([self.start, self.end]) * np.pi / 2) ** (2 * self.tau)
            raw = (v1 - np.cos(u * np.pi / 2) ** (2 * self.tau)) / (v1 - v0)
        raw = np.clip(raw, 0.0, 1.0)
        # endpoints exact regardless of float noise in the interpolant
        raw = np.where(t <= 0, 1.0, raw)
        raw = np.where(t >= 1, 0.0, raw)
        return raw if raw.ndim else float(raw)

    def renorm(self, t):
        """sqrt(b^2 abar + (1 - abar)): the unit-variance renormalizer."""
        if self.input_scale == 1.0:
            t = np.asarray(t, np.float64)
            out = np.ones_like(t)
            return out if out.ndim else 1.0
        ab = self.alpha_bar(t)
        return np.sqrt(self.input_scale**2 * ab + (1.0 - ab))

    def to_json(self) -> dict:
        return {"kind": self.kind, "start": self.start, "end": self.end,
                "tau": self.tau, "input_scale": self.input_scale}

    @staticmethod
    def from_json(obj: dict) -> "NoiseSchedule":
        known = {"kind", "start", "end", "tau", "input_scale"}
        extra = set(obj) - known
        if extra:
            raise DiffusionError(f"unknown schedule keys: {sorted(extra)}")
        kw = {k: obj[k] for k in known & set(obj)}
        if kw.get("kind") in ("linear", "cosine"):
            kw.setdefault("start", 0.0)
            kw.setdefault("end", 1.0)
        return NoiseSchedule(**kw)


# a Denoiser maps (x: (..., n, d) scaled state, t: scalar, cond) -> eps_hat
Denoiser = Callable[..., np.ndarray]


def forward_diffuse(p0: np.ndarray, t: float, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Noise clean data to time t with caller-supplied Gaussian eps."""
    p0 = np.asarray(p0, np.float64)
    eps = np.asarray(eps, np.float64)
    if p0.shape != eps.shape:
        raise DiffusionError(f"shape mismatch {p0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar(t)
    b = schedule.input_scale
    u = np.sqrt(ab) * b * p0 + np.sqrt(1.0 - ab) * eps
    return u / schedule.renorm(t)


def loss_simple(denoiser: Denoiser, p0: np.ndarray, t: float, eps: np.ndarray,
                schedule: NoiseSchedule, cond=None) -> float:
    """Mean squared error between true and predicted noise."""
    x = forward_diffuse(p0, t, eps, schedule)
    eps_hat = denoiser(x, t, cond)
    if eps_hat.shape != eps.shape:
        raise DiffusionError("denoiser output shape mismatch")
    return float(np.mean((eps - eps_hat) ** 2))


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float) -> np.ndarray:
    """eps_uncond + scale * (eps_cond - eps_uncond); scale 1 is conditional."""
    eps_cond = np.asarray(eps_cond, np.float64)
    eps_uncond = np.asarray(eps_uncond, np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise DiffusionError("cfg branches disagree in shape")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_step(x_t: np.ndarray, eps_hat: np.ndarray, t: float, t_prev: float,
              eta: float, schedule: NoiseSchedule,
              z: Optional[np.ndarray] = None) -> np.ndarray:
    """One reverse step t -> t_prev; eta 0 is deterministic, 1 is ancestral.

    Works in unscaled (u) space and re-applies the renormalizer at t_prev,
    so the identity holds for any input scale.
    """
    if not t_prev < t:
        raise DiffusionError("ddim_step needs t_prev < t")
    if not 0.0 <= eta <= 1.0:
        raise DiffusionError("eta outside [0, 1]")
    if eta > 0 and z is None:
        raise DiffusionError("eta > 0 requires noise z")
    x_t = np.asarray(x_t, np.float64)
    eps_hat = np.asarray(eps_hat, np.float64)
    if x_t.shape != eps_hat.shape:
        raise DiffusionError("eps_hat shape mismatch")
    t = min(t, T_CLAMP)
    ab_t = schedule.alpha_bar(t)
    ab_p = schedule.alpha_bar(t_prev)
    u = x_t * schedule.renorm(t)
    x0b = (u - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)  # = b * p0 estimate
    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(max(0.0, 1.0 - ab_t / ab_p))
    dir_coef = np.sqrt(max(0.0, 1.0 - ab_p - sigma**2))
    u_prev = np.sqrt(ab_p) * x0b + dir_coef * eps_hat
    if sigma > 0:
        u_prev = u_prev + sigma * np.asarray(z, np.float64)
    return u_prev / schedule.renorm(t_prev)


def sample_states(denoiser: Denoiser, cond=None, seed: int = 0, steps: int = 50,
                  cfg_scale: float = 1.0, eta: float = 0.0,
                  schedule: NoiseSchedule = NoiseSchedule(),
                  n: int = 512, dim: int = 6, chains: int = 1) -> np.ndarray:
    """Run the reverse chain; returns (chains, n, dim) clean states at t=0.

    Chains evolve in lockstep under one vectorized denoiser call per step,
    with all noise drawn up front from the stage-derived stream, so the
    result for a given seed does not depend on the chain count layout.
    """
    if steps < 1:
        raise DiffusionError("steps must be >= 1")
    gen = rng.generator(rng.derive_seed(seed, "diffusion/sample"))
    x = gen.standard_normal((chains, n, dim))
    ts = np.linspace(1.0, 0.0, steps + 1)
    ts[0] = min(ts[0], T_CLAMP)
    use_cfg = cond is not None and cfg_scale != 1.0
    for i in range(steps):
        t, t_prev = float(ts[i]), float(ts[i + 1])
        eps_c = denoiser(x, t, cond)
        if use_cfg:
            eps_u = denoiser(x, t, None)
            eps_hat = cfg_combine(eps_c, eps_u, cfg_scale)
        else:
            eps_hat = eps_c
        z = gen.standard_normal(x.shape) if eta > 0 else None
        x = ddim_step(x, eps_hat, t, t_prev, eta, schedule, z)
        if not np.all(np.isfinite(x)):
            raise DiffusionError(f"non-finite state at t={t_prev:.4f}")
    return x


def state_to_cloud(state: np.ndarray):
    """Map an (n, 6) schedule-space state to a PointCloud; clamps colors."""
    from .pointcloud import PointCloud

    state = np.asarray(state, np.float64)
    if state.ndim != 2 or state.shape[1] != 6:
        raise DiffusionError(f"expected (n, 6) state, got {state.shape}")
    colors = np.clip((state[:, 3:] + 1.0) / 2.0, 0.0, 1.0)
    return PointCloud(points=state[:, :3], colors=colors)


def cloud_to_state(pc) -> np.ndarray:
    """Inverse channel mapping: colors from [0, 1] back to [-1, 1]."""
    return np.concatenate([pc.points, pc.colors * 2.0 - 1.0], axis=1)


def sample(denoiser: Denoiser, cond=None, seed: int = 0, steps: int = 50,
           cfg_scale: float = 1.0, eta: float = 0.0,
           schedule: NoiseSchedule = NoiseSchedule(), n: int = 512):
    """Sample one point cloud (n x 6 channels) from the denoiser."""
    states = sample_states(denoiser, cond=cond, seed=seed, steps=steps,
                           cfg_scale=cfg_scale, eta=eta, schedule=schedule,
                           n=n, dim=6, chains=1)
    return state_to_cloud(states[0])


# --- closed-form oracle ----------------------------------------------------


@dataclass(frozen=True)
class GmmOracleDenoiser:
    """Optimal noise predictor for data drawn from a Gaussian mixture.

    means has shape (K, n, d) for a mixture over whole point sets or
    (K, 1, d) for points drawn iid per row; variances are per-component
    isotropic. With labels set, calling with cond=label restricts the
    mixture to matching components (the conditional branch); cond=None is
    the full (unconditional) mixture.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    schedule: NoiseSchedule = NoiseSchedule()
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.means, np.float64)
        if m.ndim != 3:
            raise DiffusionError("means must have shape (K, n_or_1, d)")
        v = np.asarray(self.variances, np.float64).reshape(-1)
        w = np.asarray(self.weights, np.float64).reshape(-1)
        if not (len(v) == len(w) == m.shape[0]):
            raise DiffusionError("component count mismatch")
        if np.any(v < 0):
            raise DiffusionError("variances must be non-negative")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DiffusionError("weights must be positive and sum to 1")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "weights", w)
        if self.labels is not None:
            lab = np.asarray(self.labels).reshape(-1)
            if len(lab) != m.shape[0]:
                raise DiffusionError("labels length mismatch")
            object.__setattr__(self, "labels", lab)

    @property
    def per_point(self) -> bool:
        return self.means.shape[1] == 1

    def _active(self, cond):
        if cond is None or self.labels is None:
            return self.means, self.variances, self.weights
        mask = self.labels == cond
        if not np.any(mask):
            raise DiffusionError(f"no mixture component labeled {cond!r}")
        w = self.weights[mask]
        return self.means[mask], self.variances[mask], w / w.sum()

    def __call__(self, x, t: float, cond=None) -> np.ndarray:
        means, variances, weights = self._active(cond)
        ab = self.schedule.alpha_bar(t)
        b = self.schedule.input_scale
        sab = np.sqrt(ab)
        one_m = 1.0 - ab
        if one_m <= 0:
            raise DiffusionError("oracle undefined at t=0 (no noise to predict)")
        x = np.asarray(x, np.float64)
        u = x * self.renorm_for(t)  # back to unscaled space
        k_count = len(weights)
        # component axis first, then broadcast over any chain axes of u
        bshape = (k_count,) + (1,) * (u.ndim - 2) + means.shape[1:]
        centers = (sab * b * means).reshape(bshape)
        var_k = ab * b * b * variances + one_m  # (K,)
        diff = u[None, ...] - centers
        if self.per_point:
            sq = np.sum(diff * diff, axis=-1)  # (K, ..., n)
            dof = u.shape[-1]
            tail = (None,)
        else:
            sq = np.sum(diff * diff, axis=(-1, -2))  # (K, ...)
            dof = u.shape[-1] * u.shape[-2]
            tail = (None, None)
        vk = var_k.reshape((-1,) + (1,) * (sq.ndim - 1))
        logp = np.log(weights).reshape(vk.shape) - 0.5 * dof * np.log(vk) - 0.5 * sq / vk
        logp -= logp.max(axis=0, keepdims=True)
        r = np.exp(logp)
        r /= r.sum(axis=0, keepdims=True)
        # posterior mean of b*p0 given u, component-wise linear-Gaussian
        gain = (sab * b * b * variances).reshape(vk.shape)[(...,) + tail] / vk[(...,) + tail]
        mean_k = b * means.reshape(bshape) + gain * diff
        e_bp0 = np.sum(r[(...,) + tail] * mean_k, axis=0)
        return (u - sab * e_bp0) / np.sqrt(one_m)

    def renorm_for(self, t: float):
        return self.schedule.renorm(t)

    def moments(self):
        """Closed-form per-point mean (d,) and covariance (d, d) of the mixture."""
        if not self.per_point:
            raise DiffusionError("moments helper expects a per-point mixture")
        mu = self.means[:, 0, :]  # (K, d)
        d = mu.shape[1]
        mean = self.weights @ mu
        second = np.zeros((d, d))
        for k in range(len(self.weights)):
            second += self.weights[k] * (self.variances[k] * np.eye(d) + np.outer(mu[k], mu[k]))
        return mean, second - np.outer(mean, mean)

    def draw(self, shape, seed: int) -> np.ndarray:
        """Exact samples from the mixture, shape (..., d) per-point mode."""
        if not self.per_point:
            raise DiffusionError("draw helper expects a per-point mixture")
        gen = rng.generator(rng.derive_seed(seed, "diffusion/gmm-draw"))
        lead = tuple(shape)
        k = gen.choice(len(self.weights), size=lead, p=self.weights)
        mu = self.means[:, 0, :][k]  # (..., d)
        std = np.sqrt(self.variances)[k][..., None]
        return mu + std * gen.standard_normal(mu.shape)
