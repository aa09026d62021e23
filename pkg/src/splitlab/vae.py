"""VAE trained on eavesdropped activations.

Encoder: flatten -> dense(hidden, relu) -> {dense(mu), dense(logvar)}.
Decoder: dense(latent -> hidden, relu) -> dense(hidden -> flat) -> sigmoid.
Loss: per-sample sum-of-squares reconstruction + kl_weight * KL to the
standard normal prior, averaged over the batch, optimized with Adam.

Because the decoder ends in a sigmoid while ReLU activations are
unbounded, training data is mapped into [0,1] by a global min-max
normalizer fitted on the eavesdropped dataset; decode inverts it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .channel import EavesdropDataset
from .errors import ConfigurationError, DataError, ShapeError
from .models import ActivationTensor

LATENTS_SUFFIX = ".latents"
VAE_MANIFEST = "vae.json"
MIN_TRAIN_SAMPLES = 32


@dataclass
class VaeConfig:
    input_shape: tuple[int, ...]
    hidden_size: int = 1000
    latent_dim: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    kl_weight: float = 1.0
    seed: int = 0
    batch_size: int = 64

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if self.latent_dim < 2:
            raise ConfigurationError("latent_dim must be >= 2")
        if self.hidden_size < self.latent_dim:
            raise ConfigurationError("hidden_size must be >= latent_dim")

    @property
    def flat_dim(self) -> int:
        return int(np.prod(self.input_shape))


@dataclass
class NormStats:
    lo: float
    hi: float

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.lo) / (self.hi - self.lo)).astype(np.float32)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return (x * (self.hi - self.lo) + self.lo).astype(np.float32)


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray


@dataclass
class LatentPool:
    """Zero-noise encodings of the training captures, cached at fit time."""

    mu: np.ndarray      # (N, latent_dim)
    logvar: np.ndarray  # (N, latent_dim)

    def __len__(self) -> int:
        return self.mu.shape[0]

    def code(self, i: int) -> LatentCode:
        return LatentCode(mu=self.mu[i], logvar=self.logvar[i],
                          z=self.mu[i].copy())


@dataclass
class VaeModel:
    config: VaeConfig
    enc_hidden: nn.Dense
    enc_mu: nn.Dense
    enc_logvar: nn.Dense
    dec_hidden: nn.Dense
    dec_out: nn.Dense
    norm: NormStats
    loss_trace: list[float] = field(default_factory=list)
    train_recon_error: float | None = None
    pool: LatentPool | None = None

    def dense_layers(self) -> list[nn.Dense]:
        return [self.enc_hidden, self.enc_mu, self.enc_logvar,
                self.dec_hidden, self.dec_out]


def fit_normalizer(dataset: EavesdropDataset) -> NormStats:
    if len(dataset) == 0:
        raise DataError("cannot fit normalizer on empty dataset")
    stacked = dataset.stacked()
    lo = float(stacked.min())
    hi = float(stacked.max())
    if hi <= lo:
        raise DataError(
            f"degenerate value range [{lo}, {hi}]; normalizer undefined")
    return NormStats(lo=lo, hi=hi)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _build_layers(config: VaeConfig, rng: np.random.Generator):
    flat = config.flat_dim
    return (
        nn.Dense("enc_hidden", flat, config.hidden_size, rng=rng),
        nn.Dense("enc_mu", config.hidden_size, config.latent_dim, rng=rng),
        nn.Dense("enc_logvar", config.hidden_size, config.latent_dim, rng=rng),
        nn.Dense("dec_hidden", config.latent_dim, config.hidden_size, rng=rng),
        nn.Dense("dec_out", config.hidden_size, flat, rng=rng),
    )


def train_vae(dataset: EavesdropDataset, config: VaeConfig) -> VaeModel:
    """Fit the VAE on captured activations; deterministic given config.seed."""
    if len(dataset) < MIN_TRAIN_SAMPLES:
        raise DataError(
            f"need at least {MIN_TRAIN_SAMPLES} samples, got {len(dataset)}")
    if dataset.shape != config.input_shape:
        raise ShapeError(
            f"dataset activations shaped {dataset.shape}, "
            f"config expects {config.input_shape}")
    norm = fit_normalizer(dataset)
    x_all = norm.normalize(dataset.stacked()).reshape(len(dataset), -1)

    rng = np.random.default_rng(config.seed)
    enc_hidden, enc_mu, enc_logvar, dec_hidden, dec_out = _build_layers(
        config, rng)
    layers = [enc_hidden, enc_mu, enc_logvar, dec_hidden, dec_out]
    opt = nn.Adam(layers, lr=config.learning_rate)
    beta = np.float32(config.kl_weight)
    n = x_all.shape[0]
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = x_all[idx]
            b = x.shape[0]

            henc = enc_hidden.forward(x, train=True)
            henc_relu = np.maximum(henc, 0)
            mu = enc_mu.forward(henc_relu, train=True)
            logvar = enc_logvar.forward(henc_relu, train=True)
            eps = rng.standard_normal(mu.shape, dtype=np.float32)
            std = np.exp(0.5 * logvar)
            z = mu + std * eps
            hdec = dec_hidden.forward(z, train=True)
            hdec_relu = np.maximum(hdec, 0)
            logits = dec_out.forward(hdec_relu, train=True)
            xhat = _sigmoid(logits)

            diff = xhat - x
            recon = float((diff * diff).sum()) / b
            kl = float(
                -0.5 * (1.0 + logvar - mu * mu - np.exp(logvar)).sum()) / b
            epoch_loss += (recon + config.kl_weight * kl) * b

            # reconstruction gradient back to z
            dlogits = (2.0 / b) * diff * xhat * (1.0 - xhat)
            dhdec = dec_out.backward(dlogits) * (hdec > 0)
            dz = dec_hidden.backward(dhdec)
            # reparameterization + KL terms
            dmu = dz + (beta / b) * mu
            dlogvar = dz * eps * (0.5 * std) + (beta / (2.0 * b)) * (
                np.exp(logvar) - 1.0)
            dhenc = (enc_mu.backward(dmu.astype(np.float32))
                     + enc_logvar.backward(dlogvar.astype(np.float32)))
            enc_hidden.backward(dhenc * (henc > 0))
            opt.step()
        trace.append(epoch_loss / n)

    model = VaeModel(config=config, enc_hidden=enc_hidden, enc_mu=enc_mu,
                     enc_logvar=enc_logvar, dec_hidden=dec_hidden,
                     dec_out=dec_out, norm=norm, loss_trace=trace)
    mu_all, logvar_all = encode_batch(model, dataset.stacked())
    model.pool = LatentPool(mu=mu_all, logvar=logvar_all)
    recon_all = _decode_normalized(model, mu_all)
    model.train_recon_error = float(np.mean((recon_all - x_all) ** 2))
    return model


def _encode_params(vae: VaeModel, flat: np.ndarray):
    henc = np.maximum(vae.enc_hidden.forward(flat), 0)
    return vae.enc_mu.forward(henc), vae.enc_logvar.forward(henc)


def encode_batch(vae: VaeModel, batch: np.ndarray):
    """Zero-noise latent parameters for a stacked activation batch."""
    if batch.shape[1:] != vae.config.input_shape:
        raise ShapeError(
            f"batch shaped {batch.shape[1:]}, "
            f"vae expects {vae.config.input_shape}")
    flat = vae.norm.normalize(batch).reshape(batch.shape[0], -1)
    return _encode_params(vae, flat)


def encode(vae: VaeModel, h, noise: str = "zero", rng=None) -> LatentCode:
    """Latent code of one activation; z = mu + exp(logvar/2) * eps."""
    values = h.values if isinstance(h, ActivationTensor) else np.asarray(h)
    if values.shape != vae.config.input_shape:
        raise ShapeError(
            f"activation shaped {values.shape}, "
            f"vae expects {vae.config.input_shape}")
    mu, logvar = _encode_params(
        vae, vae.norm.normalize(values).reshape(1, -1))
    mu, logvar = mu[0], logvar[0]
    if noise == "zero":
        z = mu.copy()
    elif noise == "sample":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        eps = rng.standard_normal(mu.shape, dtype=np.float32)
        z = mu + np.exp(0.5 * logvar) * eps
    else:
        raise ConfigurationError(f"noise must be 'zero' or 'sample', got {noise!r}")
    return LatentCode(mu=mu, logvar=logvar, z=z)


def _decode_normalized(vae: VaeModel, z: np.ndarray) -> np.ndarray:
    hdec = np.maximum(vae.dec_hidden.forward(z), 0)
    return _sigmoid(vae.dec_out.forward(hdec))


def decode_batch(vae: VaeModel, z: np.ndarray) -> np.ndarray:
    """Decode (N, latent_dim) codes to denormalized activations."""
    z = np.asarray(z, dtype=np.float32)
    if z.ndim != 2 or z.shape[1] != vae.config.latent_dim:
        raise ShapeError(
            f"latent batch shaped {z.shape}, "
            f"expected (N, {vae.config.latent_dim})")
    flat = vae.norm.denormalize(_decode_normalized(vae, z))
    return flat.reshape((z.shape[0],) + vae.config.input_shape)


def decode(vae: VaeModel, z: np.ndarray) -> ActivationTensor:
    z = np.asarray(z, dtype=np.float32)
    if z.shape != (vae.config.latent_dim,):
        raise ShapeError(
            f"latent shaped {z.shape}, expected ({vae.config.latent_dim},)")
    if not np.isfinite(z).all():
        raise DataError("latent vector contains NaN or Inf")
    return ActivationTensor(decode_batch(vae, z[None])[0])


# -- persistence --------------------------------------------------------------

def save_latents(pool: LatentPool, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count, latent_dim = pool.mu.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", count, latent_dim))
        interleaved = np.concatenate(
            [pool.mu.astype("<f4"), pool.logvar.astype("<f4")], axis=1)
        fh.write(interleaved.tobytes())
    return path


def load_latents(path) -> LatentPool:
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise DataError(f"{path} too short for a latent pool header")
    count, latent_dim = struct.unpack("<II", buf[:8])
    expected = 8 + count * latent_dim * 2 * 4
    if len(buf) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for {count}x{latent_dim}, "
            f"got {len(buf)}")
    flat = np.frombuffer(buf[8:], dtype="<f4").reshape(count, 2 * latent_dim)
    return LatentPool(mu=flat[:, :latent_dim].copy(),
                      logvar=flat[:, latent_dim:].copy())


def save_vae(vae: VaeModel, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "splitlab-vae",
        "version": 1,
        "config": {
            "input_shape": list(vae.config.input_shape),
            "hidden_size": vae.config.hidden_size,
            "latent_dim": vae.config.latent_dim,
            "epochs": vae.config.epochs,
            "learning_rate": vae.config.learning_rate,
            "kl_weight": vae.config.kl_weight,
            "seed": vae.config.seed,
            "batch_size": vae.config.batch_size,
        },
        "normalization": {"lo": vae.norm.lo, "hi": vae.norm.hi},
        "loss_trace": vae.loss_trace,
        "train_recon_error": vae.train_recon_error,
    }
    (path / VAE_MANIFEST).write_text(json.dumps(manifest, indent=2))
    for layer in vae.dense_layers():
        blob = b"".join(layer.params[k].astype("<f4").tobytes()
                        for k in sorted(layer.params))
        (path / f"{layer.name}.bin").write_bytes(blob)
    if vae.pool is not None:
        save_latents(vae.pool, path / f"pool{LATENTS_SUFFIX}")
    return path


def load_vae(path) -> VaeModel:
    path = Path(path)
    manifest_path = path / VAE_MANIFEST
    if not manifest_path.exists():
        raise ConfigurationError(f"no VAE manifest under {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "splitlab-vae":
        raise ConfigurationError(f"{manifest_path} is not a VAE checkpoint")
    raw = dict(manifest["config"])
    config = VaeConfig(**raw)
    layers = _build_layers(config, np.random.default_rng(0))
    for layer in layers:
        blob = (path / f"{layer.name}.bin").read_bytes()
        offset = 0
        for key in sorted(layer.params):
            param = layer.params[key]
            nbytes = param.size * 4
            flat = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4")
            if flat.size != param.size:
                raise ConfigurationError(
                    f"truncated weight blob {layer.name}.bin")
            layer.params[key] = flat.reshape(param.shape).copy()
            offset += nbytes
    norm = NormStats(lo=manifest["normalization"]["lo"],
                     hi=manifest["normalization"]["hi"])
    model = VaeModel(config=config, enc_hidden=layers[0], enc_mu=layers[1],
                     enc_logvar=layers[2], dec_hidden=layers[3],
                     dec_out=layers[4], norm=norm,
                     loss_trace=list(manifest["loss_trace"]),
                     train_recon_error=manifest.get("train_recon_error"))
    pool_path = path / f"pool{LATENTS_SUFFIX}"
    if pool_path.exists():
        model.pool = load_latents(pool_path)
    return model
