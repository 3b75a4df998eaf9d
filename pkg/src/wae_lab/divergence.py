"""Latent-space penalties: kernel MMD, adversarial (GAN) terms, Gaussian KL.

None of these functions multiply by the regularization weight; the training
loop applies it so the same estimator serves any weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import MLP, Tensor, as_tensor

# keeps log(D) and log(1 - D) above ~ -16
CLAMP = 1e-7


@dataclass(frozen=True)
class KernelSpec:
    """``rbf``: exp(-|x-y|^2 / scale); ``imq``: scale / (scale + |x-y|^2)."""

    kind: str = "imq"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "imq"):
            raise ConfigError(f"unknown kernel {self.kind!r}; valid: ['imq', 'rbf']")
        if not self.scale > 0:
            raise ConfigError(f"kernel scale must be > 0, got {self.scale}")

    @classmethod
    def default_for(cls, d_z: int, sigma_z2: float, kind: str = "imq") -> "KernelSpec":
        # expected squared distance between two prior draws
        return cls(kind, 2.0 * d_z * sigma_z2)

    def from_sq_dists(self, sq):
        """Kernel values from squared distances (ndarray or Tensor)."""
        if self.kind == "imq":
            return self.scale / (self.scale + sq)
        if isinstance(sq, Tensor):
            return (sq * (-1.0 / self.scale)).exp()
        return np.exp(-sq / self.scale)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ConfigError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    return float(spec.from_sq_dists(np.sum((x - y) ** 2)))


def sq_dists(a, b):
    """Pairwise squared distances by explicit differences (exact zeros on ties)."""
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a, b = as_tensor(a), as_tensor(b)
        diff = a.reshape(a.shape[0], 1, a.shape[1]) - b.reshape(1, b.shape[0], b.shape[1])
        return (diff * diff).sum(axis=2)
    diff = np.asarray(a)[:, None, :] - np.asarray(b)[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def gram(spec: KernelSpec, a, b=None):
    return spec.from_sq_dists(sq_dists(a, a if b is None else b))


def mmd_penalty(spec: KernelSpec, prior_samples, encoded) -> Tensor:
    """Minibatch MMD estimator, differentiable w.r.t. ``encoded`` only.

    Within-sample terms average over ordered pairs l != j (U-statistic);
    the cross term averages over all n^2 pairs.
    """
    z = prior_samples.values if isinstance(prior_samples, Tensor) else np.asarray(prior_samples, dtype=np.float64)
    encoded = as_tensor(encoded)
    n = z.shape[0]
    if n < 2:
        raise UsageError(f"MMD needs at least 2 samples per side, got {n}")
    if z.shape != encoded.shape:
        raise ConfigError(f"prior batch {z.shape} and encoded batch {encoded.shape} differ")

    off_diag = 1.0 - np.eye(n)
    k_zz = gram(spec, z)
    prior_term = float(np.sum(k_zz * off_diag)) / (n * (n - 1))
    k_qq = gram(spec, encoded)
    encoded_term = (k_qq * off_diag).sum() * (1.0 / (n * (n - 1)))
    cross = gram(spec, z, encoded).sum() * (2.0 / n ** 2)
    return encoded_term + prior_term - cross


def mmd_value(spec: KernelSpec, prior_samples, encoded) -> float:
    """Plain-float version of :func:`mmd_penalty` (no graph)."""
    z = np.asarray(prior_samples, dtype=np.float64)
    q = np.asarray(encoded, dtype=np.float64)
    n = z.shape[0]
    if n < 2:
        raise UsageError(f"MMD needs at least 2 samples per side, got {n}")
    off_diag = 1.0 - np.eye(n)
    return (np.sum(gram(spec, z) * off_diag) / (n * (n - 1))
            + np.sum(gram(spec, q) * off_diag) / (n * (n - 1))
            - 2.0 * np.sum(gram(spec, z, q)) / n ** 2)


# --- adversarial penalty --------------------------------------------------------

def log_normal_density(z, sigma_z2: float):
    """log N(z; 0, sigma_z2 I), row-wise; accepts ndarray or Tensor rows."""
    if isinstance(z, Tensor):
        d = z.shape[-1]
        return (z * z).sum(axis=-1) * (-0.5 / sigma_z2) - 0.5 * d * np.log(2 * np.pi * sigma_z2)
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) / sigma_z2 - 0.5 * d * np.log(2 * np.pi * sigma_z2)


def log_prior_adjust(logit, z, sigma_z2: float):
    """Add the analytic log prior density to a discriminator logit."""
    return logit + log_normal_density(z, sigma_z2)


class LatentDiscriminator:
    """Dense network R^{d_z} -> one logit per row; D(z) = sigmoid(logit)."""

    def __init__(self, network: MLP, add_log_prior: bool = False, sigma_z2: float = 1.0):
        if network.dims[-1] != 1:
            raise ConfigError(f"discriminator must output one logit, got {network.dims[-1]}")
        self.network = network
        self.add_log_prior = add_log_prior
        self.sigma_z2 = sigma_z2

    def logits(self, z) -> Tensor:
        z = as_tensor(z)
        out = self.network(z).reshape(z.shape[0])
        if self.add_log_prior:
            out = log_prior_adjust(out, z, self.sigma_z2)
        return out

    def prob(self, z) -> Tensor:
        """D(z), clamped to [CLAMP, 1 - CLAMP]."""
        return self.logits(z).sigmoid().clip(CLAMP, 1.0 - CLAMP)

    def parameters(self) -> list[Tensor]:
        return self.network.parameters()


def gan_discriminator_loss(disc: LatentDiscriminator, prior_samples, encoded) -> Tensor:
    """(1/n) sum log D(z_i) + log(1 - D(z~_i)); the discriminator ascends this.

    ``encoded`` is detached so only discriminator parameters get gradient.
    """
    z = np.asarray(prior_samples.values if isinstance(prior_samples, Tensor) else prior_samples)
    q = encoded.values if isinstance(encoded, Tensor) else np.asarray(encoded)
    if z.shape[0] != q.shape[0]:
        raise ConfigError(f"prior batch {z.shape} and encoded batch {q.shape} differ")
    real = disc.prob(z).log()
    fake = (1.0 - disc.prob(q)).log()
    return (real + fake).mean()


def gan_encoder_penalty(disc: LatentDiscriminator, encoded) -> Tensor:
    """Non-saturating encoder term -(1/n) sum log D(z~_i)."""
    return -disc.prob(encoded).log().mean()


# --- VAE regularizer ---------------------------------------------------------------

def gaussian_kl(mu, log_var) -> Tensor:
    """KL(N(mu, diag exp(log_var)) || N(0, I)), summed over the last axis.

    For batched input returns one value per row.
    """
    mu, log_var = as_tensor(mu), as_tensor(log_var)
    return (mu * mu + log_var.exp() - log_var - 1.0).sum(axis=-1) * 0.5
