import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitlab import attack as attack_mod
from splitlab import vae as vae_mod
from splitlab.attack import AttackConfig
from splitlab.errors import ConfigurationError, DataError, ShapeError
from splitlab.vae import LatentCode, LatentPool


def _code(mu, logvar=None):
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.zeros_like(mu) if logvar is None else np.asarray(
        logvar, dtype=np.float64)
    return LatentCode(mu=mu, logvar=logvar, z=mu.copy())


def _random_pool(n=12, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return LatentPool(mu=rng.normal(0, 2, (n, dim)),
                      logvar=rng.normal(0, 0.5, (n, dim)))


def test_attack_config_validation():
    with pytest.raises(ConfigurationError):
        AttackConfig(alpha=1.5)
    with pytest.raises(ConfigurationError):
        AttackConfig(interpolation="cubic")
    with pytest.raises(ConfigurationError):
        AttackConfig(target_pool_size=0)
    with pytest.raises(ConfigurationError):
        AttackConfig(distance="euclidean")
    with pytest.raises(ConfigurationError):
        AttackConfig(latent_noise_std=-0.1)


def test_kl_to_prior_hand_values():
    assert attack_mod.kl_to_prior([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert attack_mod.kl_to_prior([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)
    # var = e, mu = 0: KL = 0.5 * (e - 1 - 1) per dim
    assert attack_mod.kl_to_prior([0.0], [1.0]) == pytest.approx(
        0.5 * (np.e - 2.0))


def test_gaussian_kl_hand_values():
    assert attack_mod.gaussian_kl([0.3, -1.2], [0.1, 0.4],
                                  [0.3, -1.2], [0.1, 0.4]) == 0.0
    assert attack_mod.gaussian_kl([0.0], [0.0], [1.0], [0.0]) == pytest.approx(0.5)
    assert attack_mod.gaussian_kl([0.0], [1.0], [0.0], [0.0]) == pytest.approx(
        0.5 * (np.e - 2.0))
    with pytest.raises(ShapeError):
        attack_mod.gaussian_kl([0.0], [0.0], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(DataError):
        attack_mod.gaussian_kl([np.nan], [0.0], [0.0], [0.0])


def test_gaussian_kl_monte_carlo_oracle():
    """Closed form agrees with a sampled estimate of E_a[log a(x) - log b(x)]."""
    rng = np.random.default_rng(7)
    mu_a, lv_a = rng.normal(0, 1, 3), rng.normal(0, 0.5, 3)
    mu_b, lv_b = rng.normal(0, 1, 3), rng.normal(0, 0.5, 3)
    x = mu_a + np.exp(0.5 * lv_a) * rng.standard_normal((400_000, 3))
    log_a = -0.5 * (lv_a + (x - mu_a) ** 2 / np.exp(lv_a)).sum(axis=1)
    log_b = -0.5 * (lv_b + (x - mu_b) ** 2 / np.exp(lv_b)).sum(axis=1)
    estimate = float(np.mean(log_a - log_b))
    closed = attack_mod.gaussian_kl(mu_a, lv_a, mu_b, lv_b)
    assert closed == pytest.approx(estimate, rel=0.02)


def test_pairwise_distance_modes():
    a = _code([0.0], [0.0])
    b = _code([1.0], [0.0])
    assert attack_mod.pairwise_distance(a, a) == 0.0
    assert attack_mod.pairwise_distance(a, b) == pytest.approx(0.5)
    assert attack_mod.pairwise_distance(a, b) == attack_mod.pairwise_distance(b, a)

    near_prior = _code([0.0, 0.0])
    far_prior = _code([2.0, 0.0])  # KL to prior = 2.0
    gap = attack_mod.pairwise_distance(near_prior, far_prior,
                                       mode="kl-to-prior-gap")
    assert gap == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        attack_mod.pairwise_distance(a, b, mode="cosine")


def test_pool_distances_match_pairwise_loop():
    pool = _random_pool(n=15, dim=5, seed=3)
    code = _code(np.linspace(-1, 1, 5), np.linspace(-0.5, 0.5, 5))
    for mode in attack_mod.DISTANCE_MODES:
        fast = attack_mod.pool_distances(code, pool, mode)
        slow = np.array([
            attack_mod.pairwise_distance(code, pool.code(i), mode)
            for i in range(len(pool))])
        assert fast.shape == (15,)
        assert np.allclose(fast, slow, atol=1e-10)
    with pytest.raises(ShapeError):
        attack_mod.pool_distances(_code([0.0, 0.0]), pool)


def test_select_target_in_farthest_k():
    pool = _random_pool(n=40, dim=4, seed=5)
    code = _code([0.5, -0.5, 1.0, 0.0], [0.1, 0.0, -0.1, 0.2])
    config = AttackConfig(target_pool_size=10, seed=0)
    dists = attack_mod.pool_distances(code, pool, config.distance)
    top_k = set(np.argsort(-dists)[:10].tolist())
    for seed in range(40):
        idx = attack_mod.select_target_index(
            code, pool, config, rng=np.random.default_rng(seed))
        assert idx in top_k


def test_select_target_avoids_self():
    pool = _random_pool(n=11, dim=4, seed=9)
    code = pool.code(0)  # distance zero to entry 0
    config = AttackConfig(target_pool_size=10)
    for seed in range(60):
        idx = attack_mod.select_target_index(
            code, pool, config, rng=np.random.default_rng(seed))
        assert idx != 0


def test_select_target_determinism_and_bounds():
    pool = _random_pool(n=12, dim=4)
    code = _code([1.0, 0.0, 0.0, 0.0])
    config = AttackConfig(target_pool_size=5, seed=21)
    first = attack_mod.select_target_index(code, pool, config)
    assert first == attack_mod.select_target_index(code, pool, config)
    target = attack_mod.select_target(code, pool, config)
    assert np.array_equal(target.mu, pool.mu[first])
    with pytest.raises(DataError):
        attack_mod.select_target_index(
            code, _random_pool(n=4), AttackConfig(target_pool_size=5))


def test_select_target_spreads_over_pool():
    pool = _random_pool(n=12, dim=4, seed=2)
    code = _code([0.0, 0.0, 0.0, 0.0])
    config = AttackConfig(target_pool_size=5)
    counts = np.zeros(len(pool), dtype=int)
    for seed in range(300):
        counts[attack_mod.select_target_index(
            code, pool, config, rng=np.random.default_rng(seed))] += 1
    assert (counts > 0).sum() == 5  # only the 5 farthest ever drawn
    assert counts[counts > 0].min() >= 30  # roughly uniform over those 5


def test_lerp_basics():
    a = np.array([0.0, 2.0, -4.0])
    b = np.array([1.0, 0.0, 4.0])
    assert np.array_equal(attack_mod.lerp(a, b, 0.0), a)
    assert np.array_equal(attack_mod.lerp(a, b, 1.0), b)
    assert np.allclose(attack_mod.lerp(a, b, 0.5), [0.5, 1.0, 0.0])
    with pytest.raises(ShapeError):
        attack_mod.lerp(a, b[:2], 0.5)
    with pytest.raises(ConfigurationError):
        attack_mod.lerp(a, b, 1.2)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=8),
       st.floats(0.0, 1.0))
def test_lerp_affine_form(values, alpha):
    mid = len(values) // 2 * 2
    a = np.array(values[:mid // 2])
    b = np.array(values[mid // 2:mid])
    out = attack_mod.lerp(a, b, alpha)
    assert np.allclose(out, a + alpha * (b - a), atol=1e-9)


def test_slerp_quarter_circle():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    mid = attack_mod.slerp(a, b, 0.5)
    assert np.allclose(mid, [np.sqrt(2) / 2, np.sqrt(2) / 2], atol=1e-12)
    assert np.array_equal(attack_mod.slerp(a, b, 0.0), a)
    assert np.array_equal(attack_mod.slerp(a, b, 1.0), b)


def test_slerp_preserves_norm_on_sphere():
    rng = np.random.default_rng(4)
    a = rng.standard_normal(16)
    b = rng.standard_normal(16)
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    for alpha in np.linspace(0, 1, 11):
        assert np.linalg.norm(attack_mod.slerp(a, b, alpha)) == pytest.approx(
            1.0, abs=1e-6)


def test_slerp_parallel_falls_back_to_lerp():
    a = np.array([1.0, 1.0, 0.0])
    same_dir = 2.0 * a
    out = attack_mod.slerp(a, same_dir, 0.25)
    assert np.allclose(out, attack_mod.lerp(a, same_dir, 0.25))
    opposite = -a
    out = attack_mod.slerp(a, opposite, 0.5)
    assert np.allclose(out, attack_mod.lerp(a, opposite, 0.5))


def test_slerp_zero_vector_rejected():
    with pytest.raises(DataError):
        attack_mod.slerp(np.zeros(3), np.ones(3), 0.5)
    with pytest.raises(DataError):
        attack_mod.slerp(np.ones(3), np.zeros(3), 0.5)


def test_interpolate_dispatch():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    assert np.array_equal(attack_mod.interpolate(a, b, 0.3, "lerp"),
                          attack_mod.lerp(a, b, 0.3))
    assert np.array_equal(attack_mod.interpolate(a, b, 0.3, "slerp"),
                          attack_mod.slerp(a, b, 0.3))
    with pytest.raises(ConfigurationError):
        attack_mod.interpolate(a, b, 0.3, "spline")


def test_generate_adversarial_alpha0_is_reconstruction(small_vae, captures9):
    h = captures9.samples[450]  # not in the VAE's training slice
    config = AttackConfig(alpha=0.0, seed=11)
    out = attack_mod.generate_adversarial(small_vae, h, small_vae.pool, config)
    recon = vae_mod.decode(small_vae, vae_mod.encode(small_vae, h).z)
    assert out.shape == h.shape
    assert np.allclose(out.values, recon.values, atol=1e-6)


def test_generate_adversarial_alpha1_is_target_decode(small_vae, captures9):
    h = captures9.samples[451]
    config = AttackConfig(alpha=1.0, seed=17)
    out = attack_mod.generate_adversarial(small_vae, h, small_vae.pool, config)
    code = vae_mod.encode(small_vae, h)
    expected_idx = attack_mod.select_target_index(
        code, small_vae.pool, config, rng=np.random.default_rng(17))
    expected = vae_mod.decode(
        small_vae, small_vae.pool.mu[expected_idx].astype(np.float32))
    assert np.array_equal(out.values, expected.values)


def test_generate_adversarial_deterministic(small_vae, captures9):
    h = captures9.samples[452]
    config = AttackConfig(alpha=0.6, seed=5)
    a = attack_mod.generate_adversarial(small_vae, h, small_vae.pool, config)
    b = attack_mod.generate_adversarial(small_vae, h, small_vae.pool, config)
    assert np.array_equal(a.values, b.values)


def test_generate_adversarial_latent_noise(small_vae, captures9):
    h = captures9.samples[453]
    clean = attack_mod.generate_adversarial(
        small_vae, h, small_vae.pool, AttackConfig(alpha=0.0, seed=3))
    noisy1 = attack_mod.generate_adversarial(
        small_vae, h, small_vae.pool,
        AttackConfig(alpha=0.0, seed=3, latent_noise_std=0.5))
    noisy2 = attack_mod.generate_adversarial(
        small_vae, h, small_vae.pool,
        AttackConfig(alpha=0.0, seed=3, latent_noise_std=0.5))
    assert not np.array_equal(clean.values, noisy1.values)
    assert np.array_equal(noisy1.values, noisy2.values)
