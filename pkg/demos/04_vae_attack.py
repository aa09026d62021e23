"""
The latent-space attack, one sample at a time
=============================================

The interceptor trains a VAE on captured activations, then swaps each
transit tensor for a decoded blend between its own latent code and a
deliberately distant one. At alpha = 0 the server receives a faithful
reconstruction; at alpha = 1 it receives something that decodes cleanly
but belongs to a different region of the latent space entirely.
"""

import numpy as np

from splitlab import attack, channel, datasets, models, vae

# device-side setup: train, cut, stream activations past a passive tap
data = datasets.make_synthetic(2400, seed=11)
trainset, testset = data.split(2000)
model = models.train_model(models.build_model("tinynet", 42), trainset,
                           epochs=5, seed=7, test_data=testset)
part = models.partition(model, 9)
print(f"victim accuracy {model.baseline_accuracy:.3f}, cut at layer 9")

heads = models.forward_head_batch(part, trainset.images[:1200])
captured = channel.EavesdropDataset(
    [models.ActivationTensor(h) for h in heads])

# attacker-side: fit the VAE purely on eavesdropped tensors
config = vae.VaeConfig(input_shape=captured.shape, epochs=30, seed=3)
generator = vae.train_vae(captured, config)
print(f"VAE loss {generator.loss_trace[0]:.1f} -> "
      f"{generator.loss_trace[-1]:.1f} over {config.epochs} epochs")

# pick a victim sample that survives plain reconstruction, so any flip
# further along the path is the interpolation's doing, not VAE loss
for i in range(len(testset.labels)):
    label = int(testset.labels[i])
    h = models.forward_head(part, testset.images[i])
    clean = models.forward_tail(part, h)
    recon = models.forward_tail(
        part, vae.decode(generator, vae.encode(generator, h).z))
    if clean.predicted_class == label and recon.predicted_class == label:
        break
print(f"\ntrue label {label}, clean split prediction "
      f"{clean.predicted_class} ({clean.confidence:.3f}), "
      f"reconstruction keeps class {recon.predicted_class}")

atk = attack.AttackConfig(interpolation="lerp", target_pool_size=10, seed=5)
code = vae.encode(generator, h)
target = attack.select_target(code, generator.pool, atk,
                              rng=np.random.default_rng(atk.seed))
dist = attack.pairwise_distance(code, target)
print(f"selected target sits {dist:.1f} symmetric-KL units away")

for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
    z = attack.interpolate(code.z, target.z, alpha, atk.interpolation)
    forged = vae.decode(generator, np.asarray(z, dtype=np.float32))
    result = models.forward_tail(part, forged)
    marker = "" if result.predicted_class == label else "  <- misclassified"
    print(f"  alpha {alpha:4.2f}: server sees class "
          f"{result.predicted_class} ({result.confidence:.3f}){marker}")

# the one-call version used by the evaluation sweeps
forged = attack.generate_adversarial(generator, h, generator.pool,
                                     attack.AttackConfig(alpha=1.0, seed=5))
final = models.forward_tail(part, forged)
print(f"\ngenerate_adversarial(alpha=1): class {final.predicted_class} "
      f"with confidence {final.confidence:.3f}")
