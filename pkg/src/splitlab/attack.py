"""Latent-space manipulation: pick a far target, interpolate, decode.

Distances operate on the Gaussian posteriors (mu, logvar), not on
sampled z values. Two notions are available: symmetric Gaussian KL
(default) and the gap between each posterior's KL to the standard
normal prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError
from .models import ActivationTensor
from .vae import LatentCode, LatentPool, VaeModel, decode, encode

DISTANCE_MODES = ("symmetric-gaussian-kl", "kl-to-prior-gap")
INTERPOLATION_MODES = ("lerp", "slerp")
_PARALLEL_EPS = 1e-6


@dataclass
class AttackConfig:
    alpha: float = 1.0
    interpolation: str = "lerp"
    target_pool_size: int = 10
    distance: str = "symmetric-gaussian-kl"
    seed: int = 0
    latent_noise_std: float = 0.0  # optional pre-interpolation jitter

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha {self.alpha} outside [0, 1]")
        if self.interpolation not in INTERPOLATION_MODES:
            raise ConfigurationError(
                f"interpolation must be one of {INTERPOLATION_MODES}")
        if self.target_pool_size < 1:
            raise ConfigurationError("target_pool_size must be >= 1")
        if self.distance not in DISTANCE_MODES:
            raise ConfigurationError(
                f"distance must be one of {DISTANCE_MODES}")
        if self.latent_noise_std < 0:
            raise ConfigurationError("latent_noise_std must be >= 0")


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("latent parameters must be 1-D vectors")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DataError("latent parameters must be finite")
    return a, b


def kl_to_prior(mu, logvar) -> float:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), closed form."""
    mu, logvar = _check_pair(mu, logvar)
    return float(-0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar)))


def gaussian_kl(mu_a, logvar_a, mu_b, logvar_b) -> float:
    """KL(N_a || N_b) for diagonal Gaussians."""
    mu_a, logvar_a = _check_pair(mu_a, logvar_a)
    mu_b, logvar_b = _check_pair(mu_b, logvar_b)
    if mu_a.shape != mu_b.shape:
        raise ShapeError(f"dimension mismatch: {mu_a.shape} vs {mu_b.shape}")
    var_a = np.exp(logvar_a)
    var_b = np.exp(logvar_b)
    delta = mu_a - mu_b
    return float(0.5 * np.sum(
        logvar_b - logvar_a + (var_a + delta * delta) / var_b - 1.0))


def pairwise_distance(a: LatentCode, b: LatentCode,
                      mode: str = "symmetric-gaussian-kl") -> float:
    if mode == "symmetric-gaussian-kl":
        return 0.5 * (gaussian_kl(a.mu, a.logvar, b.mu, b.logvar)
                      + gaussian_kl(b.mu, b.logvar, a.mu, a.logvar))
    if mode == "kl-to-prior-gap":
        return abs(kl_to_prior(a.mu, a.logvar) - kl_to_prior(b.mu, b.logvar))
    raise ConfigurationError(f"unknown distance mode {mode!r}")


def pool_distances(code: LatentCode, pool: LatentPool,
                   mode: str = "symmetric-gaussian-kl") -> np.ndarray:
    """Distance from one code to every pool entry, vectorized."""
    mu_o = np.asarray(code.mu, dtype=np.float64)
    lv_o = np.asarray(code.logvar, dtype=np.float64)
    mu_p = np.asarray(pool.mu, dtype=np.float64)
    lv_p = np.asarray(pool.logvar, dtype=np.float64)
    if mu_o.shape[0] != mu_p.shape[1]:
        raise ShapeError(
            f"latent dim mismatch: code {mu_o.shape[0]}, pool {mu_p.shape[1]}")
    if mode == "symmetric-gaussian-kl":
        var_o = np.exp(lv_o)
        var_p = np.exp(lv_p)
        delta2 = (mu_p - mu_o) ** 2
        # 1/2 [ KL(o||p) + KL(p||o) ] with the logvar terms cancelling
        return 0.25 * ((var_o + delta2) / var_p
                       + (var_p + delta2) / var_o - 2.0).sum(axis=1)
    if mode == "kl-to-prior-gap":
        kl_o = -0.5 * np.sum(1.0 + lv_o - mu_o ** 2 - np.exp(lv_o))
        kl_p = -0.5 * (1.0 + lv_p - mu_p ** 2 - np.exp(lv_p)).sum(axis=1)
        return np.abs(kl_p - kl_o)
    raise ConfigurationError(f"unknown distance mode {mode!r}")


def select_target_index(code: LatentCode, pool: LatentPool,
                        config: AttackConfig, rng=None) -> int:
    """Index of a uniformly chosen member of the K farthest pool entries."""
    k = config.target_pool_size
    if len(pool) < k:
        raise DataError(f"pool holds {len(pool)} codes, need at least {k}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dists = pool_distances(code, pool, config.distance)
    # stable farthest-first ordering: distance descending, index ascending
    order = np.lexsort((np.arange(len(dists)), -dists))
    return int(order[rng.integers(0, k)])


def select_target(code: LatentCode, pool: LatentPool,
                  config: AttackConfig, rng=None) -> LatentCode:
    return pool.code(select_target_index(code, pool, config, rng))


def _check_interp_args(z_o, z_t, alpha):
    z_o = np.asarray(z_o)
    z_t = np.asarray(z_t)
    if z_o.shape != z_t.shape or z_o.ndim != 1:
        raise ShapeError(
            f"interpolation endpoints must be equal-length vectors; "
            f"got {z_o.shape} and {z_t.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha {alpha} outside [0, 1]")
    return z_o, z_t


def lerp(z_o, z_t, alpha: float) -> np.ndarray:
    z_o, z_t = _check_interp_args(z_o, z_t, alpha)
    return (1.0 - alpha) * z_o + alpha * z_t


def slerp(z_o, z_t, alpha: float) -> np.ndarray:
    """Great-circle interpolation; falls back to lerp when sin(omega) ~ 0."""
    z_o, z_t = _check_interp_args(z_o, z_t, alpha)
    out_dtype = np.result_type(z_o, z_t)
    a = np.asarray(z_o, dtype=np.float64)
    b = np.asarray(z_t, dtype=np.float64)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DataError("slerp endpoints must be nonzero vectors")
    cos_omega = np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0)
    omega = np.arccos(cos_omega)
    sin_omega = np.sin(omega)
    if sin_omega < _PARALLEL_EPS:
        return lerp(z_o, z_t, alpha)
    out = (np.sin((1.0 - alpha) * omega) / sin_omega) * a \
        + (np.sin(alpha * omega) / sin_omega) * b
    return out.astype(out_dtype, copy=False)


def interpolate(z_o, z_t, alpha: float, mode: str) -> np.ndarray:
    if mode == "lerp":
        return lerp(z_o, z_t, alpha)
    if mode == "slerp":
        return slerp(z_o, z_t, alpha)
    raise ConfigurationError(f"unknown interpolation mode {mode!r}")


def generate_adversarial(vae: VaeModel, h, pool: LatentPool,
                         config: AttackConfig) -> ActivationTensor:
    """encode -> select far target -> interpolate -> decode.

    With alpha = 0 and no latent noise this is exactly the VAE
    reconstruction of h; with alpha = 1 the output no longer depends on
    h's latent position (only its target draw does).
    """
    rng = np.random.default_rng(config.seed)
    code = encode(vae, h, noise="zero")
    z_o = code.z
    if config.latent_noise_std > 0:
        z_o = z_o + rng.normal(
            0.0, config.latent_noise_std, size=z_o.shape).astype(np.float32)
        code = LatentCode(mu=code.mu, logvar=code.logvar, z=z_o)
    target = select_target(code, pool, config, rng=rng)
    z_alpha = interpolate(z_o, target.z, config.alpha, config.interpolation)
    return decode(vae, np.asarray(z_alpha, dtype=np.float32))
