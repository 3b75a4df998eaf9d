"""Auto-encoders and their training loops (WAE-MMD, WAE-GAN, VAE).

A training run owns a :class:`Trainer`, which holds the model, optimizers and
named RNG streams.  ``train_wae_mmd`` / ``train_wae_gan`` / ``train_vae`` are
thin wrappers that build one and run every epoch.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import Dataset, rng_stream, sample_prior
from .divergence import (LatentDiscriminator, gan_discriminator_loss, gan_encoder_penalty,
                         gaussian_kl, mmd_penalty)
from .errors import ConfigError, DataError, NumericError, TrainingAborted
from .tensor import MLP, Adam, Tensor, as_tensor, backward

NOISE_CLIP = 0.01


@dataclass(frozen=True)
class PriorSpec:
    d_z: int
    sigma_z2: float = 1.0

    def __post_init__(self):
        if self.sigma_z2 <= 0:
            raise ConfigError(f"sigma_z2 must be > 0, got {self.sigma_z2}")


class AutoEncoderModel:
    def __init__(self, encoder: MLP, decoder: MLP, encoder_kind: str = "deterministic"):
        if encoder_kind not in ("deterministic", "gaussian"):
            raise ConfigError(f"unknown encoder kind {encoder_kind!r}")
        heads = 2 if encoder_kind == "gaussian" else 1
        if encoder.dims[-1] % heads:
            raise ConfigError(f"gaussian encoder output {encoder.dims[-1]} is not 2 * d_z")
        self.encoder = encoder
        self.decoder = decoder
        self.encoder_kind = encoder_kind
        self.d_z = encoder.dims[-1] // heads
        self.d_x = encoder.dims[0]
        if decoder.dims[0] != self.d_z or decoder.dims[-1] != self.d_x:
            raise ConfigError(f"decoder dims {decoder.dims} do not map d_z={self.d_z} to d_x={self.d_x}")

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    def encoder_parameters(self) -> list[Tensor]:
        return self.encoder.parameters()

    def copy(self) -> "AutoEncoderModel":
        return AutoEncoderModel(self.encoder.copy(), self.decoder.copy(), self.encoder_kind)

    def _check_x(self, x):
        if x.ndim != 2 or x.shape[1] != self.d_x:
            raise ConfigError(f"input batch {x.shape} does not have d_x={self.d_x} columns")

    def encode_stats(self, x) -> tuple[Tensor, Tensor | None]:
        """Mean (and log-variance for gaussian encoders) of Q(Z|x)."""
        x = as_tensor(x)
        self._check_x(x)
        out = self.encoder(x)
        if self.encoder_kind == "deterministic":
            return out, None
        return out[:, :self.d_z], out[:, self.d_z:]

    def encode(self, x, rng: np.random.Generator | None = None) -> Tensor:
        mu, log_var = self.encode_stats(x)
        if log_var is None:
            return mu
        if rng is None:
            raise ConfigError("a gaussian encoder needs an rng to sample")
        eps = rng.standard_normal(mu.shape)
        return mu + (log_var * 0.5).exp() * eps

    def decode(self, z, logits: bool = False) -> Tensor:
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.d_z:
            raise ConfigError(f"latent batch {z.shape} does not have d_z={self.d_z} columns")
        return self.decoder(z, logits=logits)

    def state(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.parameters()]

    def load_state(self, arrays) -> None:
        for p, a in zip(self.parameters(), arrays, strict=True):
            if p.shape != np.shape(a):
                raise ConfigError(f"parameter shape {p.shape} != stored {np.shape(a)}")
            p.values = np.array(a, dtype=np.float64)


def build_model(config: RunConfig, d_x: int, rng: np.random.Generator) -> AutoEncoderModel:
    heads = 2 if config.encoder_kind == "gaussian" else 1
    encoder = MLP.build([d_x, *config.encoder_hidden, heads * config.d_z], rng, config.hidden_activation)
    decoder = MLP.build([config.d_z, *config.decoder_hidden, d_x], rng, config.hidden_activation,
                        config.decoder_output)
    return AutoEncoderModel(encoder, decoder, config.encoder_kind)


def build_discriminator(config: RunConfig, rng: np.random.Generator) -> LatentDiscriminator:
    net = MLP.build([config.d_z, *config.disc_hidden, 1], rng, "relu")
    return LatentDiscriminator(net, config.add_log_prior, config.sigma_z2)


def reconstruction_cost(x, x_hat, cost_kind: str = "squared_euclidean") -> Tensor:
    """Batch mean of per-example squared Euclidean distance."""
    if cost_kind != "squared_euclidean":
        raise ConfigError(f"unsupported cost {cost_kind!r}")
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ConfigError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    return (diff * diff).sum(axis=1).mean()


def perturb_inputs(x, rng: np.random.Generator, std: float = 0.01, enabled: bool = True) -> np.ndarray:
    """Add N(0, std^2) pixel noise clipped to +/-0.01 (encoder input only)."""
    x = np.asarray(x, dtype=np.float64)
    if not enabled:
        return x
    return x + np.clip(std * rng.standard_normal(x.shape), -NOISE_CLIP, NOISE_CLIP)


def wae_objective(model: AutoEncoderModel, x_batch, prior: PriorSpec, config: RunConfig,
                  prior_samples=None, rng: np.random.Generator | None = None,
                  disc: LatentDiscriminator | None = None, encoder_input=None):
    """Return ``(total, recon, penalty)`` with total = recon + lambda * penalty."""
    x = np.asarray(x_batch, dtype=np.float64)
    if prior_samples is None:
        prior_samples = sample_prior(prior, len(x), rng if rng is not None else np.random.default_rng())
    z_enc = model.encode(x if encoder_input is None else encoder_input, rng)
    recon = reconstruction_cost(x, model.decode(z_enc), config.cost_kind)
    if config.penalty_kind == "mmd":
        penalty = mmd_penalty(config.kernel_spec(), prior_samples, z_enc)
    elif config.penalty_kind == "gan":
        if disc is None:
            raise ConfigError("the GAN penalty needs a discriminator")
        penalty = gan_encoder_penalty(disc, z_enc)
    elif config.penalty_kind == "none":
        penalty = Tensor(0.0)
    else:
        raise ConfigError(f"wae_objective does not handle penalty_kind={config.penalty_kind!r}")
    return recon + config.lambda_ * penalty, recon, penalty


def vae_objective(model: AutoEncoderModel, x_batch, config: RunConfig, rng: np.random.Generator,
                  encoder_input=None):
    """Negative ELBO pieces: ``(total, recon_nll, kl)`` averaged over the batch.

    Gaussian decoders drop the constant log-normalizer.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    mu, log_var = model.encode_stats(x if encoder_input is None else encoder_input)
    if log_var is None:
        raise ConfigError("the VAE needs a gaussian encoder")
    z = mu + (log_var * 0.5).exp() * rng.standard_normal(mu.shape)
    if config.vae_decoder == "bernoulli":
        if x.min() < 0 or x.max() > 1:
            raise DataError("a Bernoulli decoder needs data in [0, 1]")
        logits = model.decode(z, logits=True)
        recon = (logits.softplus() - logits * x).sum(axis=1).mean()
    else:
        diff = x - model.decode(z)
        recon = (diff * diff).sum(axis=1).mean() * (1.0 / (2.0 * config.sigma_g2))
    kl = gaussian_kl(mu, log_var).mean()
    return recon + kl, recon, kl


def pretrain_encoder(model: AutoEncoderModel, data: np.ndarray, prior: PriorSpec, steps: int,
                     rng: np.random.Generator, batch_size: int = 100, lr: float = 1e-3,
                     beta1: float = 0.5, beta2: float = 0.999) -> AutoEncoderModel:
    """Fit encoder codes' batch mean/covariance to the prior's (encoder params only)."""
    data = np.asarray(data, dtype=np.float64)
    params = model.encoder_parameters()
    opt = Adam(params, lr, beta1, beta2)
    n = min(batch_size, len(data))
    if n < 2:
        return model
    target = prior.sigma_z2 * np.eye(model.d_z)
    for _ in range(steps):
        idx = rng.choice(len(data), size=n, replace=False)
        z, _ = model.encode_stats(data[idx])
        loss = moment_mismatch(z, target)
        opt.step(backward(loss, params))
    return model


def moment_mismatch(z: Tensor, target_cov: np.ndarray) -> Tensor:
    n = z.shape[0]
    mean = z.mean(axis=0)
    centred = z - mean
    cov = (centred.T @ centred) * (1.0 / (n - 1))
    diff = cov - target_cov
    return (mean * mean).sum() + (diff * diff).sum()


def sample(model: AutoEncoderModel, prior: PriorSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    z = sample_prior(prior, count, rng)
    return model.decode(z).values.copy()


def reconstruct(model: AutoEncoderModel, x) -> np.ndarray:
    """G(mu(x)): decode the encoder mean."""
    mu, _ = model.encode_stats(np.asarray(x, dtype=np.float64))
    return model.decode(mu).values.copy()


def interpolate(model: AutoEncoderModel, x, y, steps: int) -> np.ndarray:
    """Decode ``steps`` equally spaced points on the segment mu(x) -> mu(y)."""
    if steps < 2:
        raise ConfigError(f"interpolation needs steps >= 2, got {steps}")
    mu, _ = model.encode_stats(np.stack([np.asarray(x, float).reshape(-1), np.asarray(y, float).reshape(-1)]))
    zx, zy = mu.values[0], mu.values[1]
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return model.decode((1.0 - t) * zx + t * zy).values.copy()


# --- training -------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    recon: float
    penalty: float
    total: float
    wall_clock: float
    disc_loss: float | None = None


@dataclass
class TrainingTrace:
    penalty_weight: float
    records: list[EpochRecord] = field(default_factory=list)

    def deterministic_view(self) -> list[tuple]:
        """Records without the wall-clock column."""
        return [(r.epoch, r.recon, r.penalty, r.total, r.disc_loss) for r in self.records]


def param_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.values.tobytes())
    return h.hexdigest()


class Trainer:
    """Owns one training run: model, optimizers, RNG streams and trace.

    ``penalty_kind`` in the config picks the step: ``mmd`` and ``none`` follow
    the MMD loop, ``gan`` alternates a discriminator ascent step and an
    encoder/decoder descent step, ``vae_kl`` minimises the negative ELBO.
    """

    def __init__(self, dataset: Dataset, config: RunConfig, model: AutoEncoderModel | None = None,
                 disc: LatentDiscriminator | None = None, strict: bool = True,
                 freeze_discriminator: bool = False, check_isolation: bool = False):
        config.validate(allow_zero_lambda=not strict)
        if len(dataset.train) == 0:
            raise DataError("the training split is empty")
        self.dataset = dataset
        self.config = config
        self.prior = PriorSpec(config.d_z, config.sigma_z2)
        self.streams = {name: rng_stream(config.seed, name)
                        for name in ("data", "prior", "weights", "noise", "reparam", "pretrain")}
        self.model = model if model is not None else build_model(config, dataset.d_x, self.streams["weights"])
        if self.model.d_x != dataset.d_x:
            raise DataError(f"model d_x={self.model.d_x} but dataset d_x={dataset.d_x}")
        self.disc = None
        self.disc_opt = None
        if config.penalty_kind == "gan":
            self.disc = disc if disc is not None else build_discriminator(config, self.streams["weights"])
            self.disc_opt = Adam(self.disc.parameters(), config.disc_lr, config.beta1, config.beta2,
                                 config.adam_eps)
        self.opt = Adam(self.model.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
        self.freeze_discriminator = freeze_discriminator
        self.check_isolation = check_isolation
        weight = 1.0 if config.penalty_kind == "vae_kl" else config.lambda_
        self.trace = TrainingTrace(weight)
        self.epoch = 0
        self.pretrained = False

    # ---
    def _batches(self) -> list[np.ndarray]:
        order = self.dataset.train[self.streams["data"].permutation(len(self.dataset.train))]
        n = self.config.batch_size
        if len(order) <= n:
            return [order]
        return [order[i:i + n] for i in range(0, len(order) - n + 1, n)]

    def _encoder_input(self, x):
        return perturb_inputs(x, self.streams["noise"], self.config.noise_std, self.config.input_noise)

    def _step(self, x) -> tuple[float, float, float, float | None]:
        cfg = self.config
        x_in = self._encoder_input(x)
        lr_scale = cfg.lr_multiplier(self.epoch)
        params = self.model.parameters()

        if cfg.penalty_kind == "vae_kl":
            total, recon, pen = vae_objective(self.model, x, cfg, self.streams["reparam"], x_in)
            self.opt.step(backward(total, params), lr_scale)
            return total.item(), recon.item(), pen.item(), None

        z_prior = sample_prior(self.prior, len(x), self.streams["prior"])
        if cfg.penalty_kind != "gan":
            total, recon, pen = wae_objective(self.model, x, self.prior, cfg, z_prior,
                                              self.streams["reparam"], encoder_input=x_in)
            self.opt.step(backward(total, params), lr_scale)
            return total.item(), recon.item(), pen.item(), None

        # discriminator first, on detached codes
        z_enc = self.model.encode(x_in, self.streams["reparam"])
        disc_params = self.disc.parameters()
        disc_value = None
        before = param_digest(params) if self.check_isolation else None
        for _ in range(cfg.disc_steps):
            objective = gan_discriminator_loss(self.disc, z_prior, z_enc.values)
            disc_value = objective.item() if disc_value is None else disc_value
            if not self.freeze_discriminator:
                loss = objective * (-cfg.lambda_)
                self.disc_opt.step(backward(loss, disc_params), lr_scale)
        if self.check_isolation and param_digest(params) != before:
            raise AssertionError("encoder/decoder parameters changed during the discriminator step")

        before = param_digest(disc_params) if self.check_isolation else None
        recon = reconstruction_cost(x, self.model.decode(z_enc), cfg.cost_kind)
        pen = gan_encoder_penalty(self.disc, z_enc)
        total = recon + cfg.lambda_ * pen
        self.opt.step(backward(total, params), lr_scale)
        if self.check_isolation and param_digest(disc_params) != before:
            raise AssertionError("discriminator parameters changed during the encoder step")
        return total.item(), recon.item(), pen.item(), disc_value

    def pretrain(self) -> None:
        if self.config.pretrain_encoder and not self.pretrained:
            pretrain_encoder(self.model, self.dataset.train_x, self.prior, self.config.pretrain_steps,
                             self.streams["pretrain"], self.config.batch_size, self.config.lr,
                             self.config.beta1, self.config.beta2)
        self.pretrained = True

    def run_epoch(self) -> EpochRecord:
        self.pretrain()
        start = time.perf_counter()
        x_all = self.dataset.examples
        sums = np.zeros(3)
        disc_sum, batches = 0.0, 0
        last_good = self.model.state()
        for b, idx in enumerate(self._batches()):
            try:
                total, recon, pen, disc_value = self._step(x_all[idx])
            except NumericError as exc:
                raise TrainingAborted(f"non-finite value at epoch {self.epoch}, batch {b}: {exc}",
                                      self.epoch, b, last_good) from exc
            if not np.isfinite([total, recon, pen]).all():
                raise TrainingAborted(f"non-finite loss at epoch {self.epoch}, batch {b}",
                                      self.epoch, b, last_good)
            sums += (total, recon, pen)
            disc_sum += disc_value or 0.0
            batches += 1
        mean_total, mean_recon, mean_pen = sums / batches
        record = EpochRecord(self.epoch + 1, float(mean_recon), float(mean_pen), float(mean_total),
                             time.perf_counter() - start,
                             disc_sum / batches if self.config.penalty_kind == "gan" else None)
        self.trace.records.append(record)
        self.epoch += 1
        return record

    def fit(self, epochs: int | None = None, on_epoch=None):
        for _ in range(self.config.epochs if epochs is None else epochs):
            record = self.run_epoch()
            if on_epoch is not None:
                on_epoch(self, record)
        return self.model, self.trace


def train_wae_mmd(dataset: Dataset, config: RunConfig, **kwargs):
    if config.penalty_kind not in ("mmd", "none"):
        config = config.replace(penalty_kind="mmd")
    return Trainer(dataset, config, **kwargs).fit()


def train_wae_gan(dataset: Dataset, config: RunConfig, **kwargs):
    return Trainer(dataset, config.replace(penalty_kind="gan"), **kwargs).fit()


def train_vae(dataset: Dataset, config: RunConfig, **kwargs):
    return Trainer(dataset, config.replace(penalty_kind="vae_kl", encoder_kind="gaussian"), **kwargs).fit()


def train(dataset: Dataset, config: RunConfig, **kwargs):
    """Dispatch on ``config.penalty_kind``."""
    return Trainer(dataset, config, **kwargs).fit()
