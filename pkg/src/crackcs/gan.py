"""DCGAN-style generator/discriminator and their adversarial training loop.

The generator projects a standard-normal latent to a 4x4 feature map and
doubles the spatial size per transposed-convolution stage up to the image
size, ending in tanh; the discriminator mirrors it with strided
convolutions, leaky ReLU, and a sigmoid score.  Per minibatch the
discriminator takes one Adam step and the generator two.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError
from .nn import (
    Adam,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dense,
    LeakyReLU,
    Network,
    ReLU,
    Reshape,
    Sigmoid,
    Tanh,
)
from .rng import Prng, derive_seed

_PROB_CLAMP = 1e-7  # probabilities are clamped to [1e-7, 1 - 1e-7] before any log


@dataclass
class GanTrainConfig:
    minibatch: int = 16
    epochs: int = 25
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    g_updates_per_d_update: int = 2
    loss_variant: str = "non_saturating"  # or "literal"
    seed: int = 0
    latent_dim: int = 100
    g_channels: int = 32
    d_channels: int = 32

    def __post_init__(self):
        if min(self.minibatch, self.epochs, self.g_updates_per_d_update, self.latent_dim) < 1:
            raise ConfigError("all counts in GanTrainConfig must be positive")
        if self.loss_variant not in ("literal", "non_saturating"):
            raise ConfigError(f"unknown loss variant {self.loss_variant!r}")


@dataclass
class GeneratorModel:
    net: Network
    latent_dim: int
    image_size: tuple
    channels: int

    def generate(self, z):
        return self.net.forward(np.atleast_2d(z)).output


@dataclass
class DiscriminatorModel:
    net: Network
    image_size: tuple
    channels: int

    def score(self, images):
        return self.net.forward(images).output[:, 0]


@dataclass
class TrainResult:
    generator: GeneratorModel
    discriminator: DiscriminatorModel
    history: list = field(default_factory=list)  # rows (g_step, d_loss, g_loss)
    train_seconds: float = 0.0
    d_steps: int = 0
    g_steps: int = 0
    final_epoch_d_real: float = 0.0
    final_epoch_d_fake: float = 0.0


def _num_stages(image_size):
    h, w = image_size
    if h != w or h < 8 or (h & (h - 1)) != 0:
        raise ConfigError(f"image size must be square, a power of two, and >= 8; got {image_size}")
    return int(np.log2(h // 4))


def _init_network(net, seed):
    prng = Prng(seed)
    for layer in net.layers:
        if isinstance(layer, (Dense, Conv2d, ConvTranspose2d)):
            layer.params["weight"] = 0.02 * prng.normal(layer.params["weight"].shape)
            layer.params["bias"] = np.zeros_like(layer.params["bias"])
    return net


def build_generator(image_size, channels, latent_dim=100, base_channels=32, seed=0):
    stages = _num_stages(image_size)
    c0 = base_channels * 2 ** (stages - 1)
    layers = [Dense(latent_dim, c0 * 16), Reshape((c0, 4, 4))]
    c = c0
    for _ in range(stages - 1):
        layers += [ConvTranspose2d(c, c // 2, kernel=4, stride=2, pad=1), BatchNorm2d(c // 2), ReLU()]
        c //= 2
    layers += [ConvTranspose2d(c, channels, kernel=4, stride=2, pad=1), Tanh()]
    net = _init_network(Network(layers, input_shape=(latent_dim,), mode="train"), seed)
    return GeneratorModel(net=net, latent_dim=latent_dim, image_size=tuple(image_size), channels=channels)


def build_discriminator(image_size, channels, base_channels=32, seed=0):
    stages = _num_stages(image_size)
    layers = []
    c_in = channels
    c_out = base_channels
    for stage in range(stages):
        layers.append(Conv2d(c_in, c_out, kernel=4, stride=2, pad=1))
        if stage > 0:  # standard DCGAN: no batchnorm in the first stage
            layers.append(BatchNorm2d(c_out))
        layers.append(LeakyReLU(0.2))
        c_in, c_out = c_out, c_out * 2
    layers += [Reshape((c_in * 16,)), Dense(c_in * 16, 1), Sigmoid()]
    net = _init_network(
        Network(layers, input_shape=(channels,) + tuple(image_size), mode="train"), seed
    )
    return DiscriminatorModel(net=net, image_size=tuple(image_size), channels=channels)


def sample_latent(count, latent_dim, prng):
    """(count, latent_dim) i.i.d. standard-normal latents."""
    if count < 1 or latent_dim < 1:
        raise ValueError("count and latent_dim must be positive")
    return prng.normal((count, latent_dim))


def _clamped_log(p):
    return np.log(np.clip(p, _PROB_CLAMP, 1.0 - _PROB_CLAMP))


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def discriminator_loss(disc, real_batch, fake_batch, variant="literal"):
    """Minibatch discriminator objective and its parameter gradients.

    literal:         mean[log(1-D(real))] + mean[log D(fake)]
    non_saturating:  -mean[log D(real)] - mean[log(1-D(fake))]

    Both are minimized and share fixed points (D(real) -> 1,
    D(fake) -> 0), but the literal form's real-side gradient vanishes
    once D(real) nears 0, which can trap training; the non-saturating
    form is the standard log-likelihood.  Loss values use clamped
    probabilities; gradients flow through the fused logit/softplus form
    for stability, skipping the final sigmoid layer.
    """
    if len(real_batch) != len(fake_batch):
        raise ValueError("real and fake batches must be the same size")
    net = disc.net
    if net.layers[-1].kind != "sigmoid":
        raise ValueError("discriminator must end with a sigmoid layer")
    acts_r = net.forward(real_batch)
    acts_f = net.forward(fake_batch)
    p_r = acts_r.output[:, 0]
    p_f = acts_f.output[:, 0]
    b = len(real_batch)
    # d/dt of log(1 - sigmoid(t)) is -sigmoid(t); of log sigmoid(t) is sigmoid(-t)
    if variant == "literal":
        loss = float(np.mean(_clamped_log(1.0 - p_r)) + np.mean(_clamped_log(p_f)))
        g_logit_r = -_sigmoid(acts_r[-2]) / b
        g_logit_f = _sigmoid(-acts_f[-2]) / b
    elif variant == "non_saturating":
        loss = float(-np.mean(_clamped_log(p_r)) - np.mean(_clamped_log(1.0 - p_f)))
        g_logit_r = -_sigmoid(-acts_r[-2]) / b
        g_logit_f = _sigmoid(acts_f[-2]) / b
    else:
        raise ValueError(f"unknown loss variant {variant!r}")
    if not np.isfinite(loss):
        raise NonFiniteError("discriminator loss is non-finite")
    at = len(net.layers) - 1
    grads_r, _ = net.backward(acts_r, g_logit_r, at_layer=at)
    grads_f, _ = net.backward(acts_f, g_logit_f, at_layer=at)
    grads = {key: grads_r[key] + grads_f[key] for key in grads_r}
    return loss, grads


def generator_loss(disc, fake_batch, variant="non_saturating"):
    """Generator objective on a fake batch and its gradient w.r.t. the images.

    literal:         mean[log(1 - D(G(z)))]   (saturates when D wins)
    non_saturating:  -mean[log D(G(z))]       (same fixed points)
    """
    net = disc.net
    if net.layers[-1].kind != "sigmoid":
        raise ValueError("discriminator must end with a sigmoid layer")
    acts = net.forward(fake_batch)
    p = acts.output[:, 0]
    b = len(fake_batch)
    if variant == "literal":
        loss = float(np.mean(_clamped_log(1.0 - p)))
        g_logit = -_sigmoid(acts[-2]) / b
    elif variant == "non_saturating":
        loss = float(-np.mean(_clamped_log(p)))
        g_logit = -_sigmoid(-acts[-2]) / b
    else:
        raise ValueError(f"unknown loss variant {variant!r}")
    if not np.isfinite(loss):
        raise NonFiniteError("generator loss is non-finite")
    _, grad_fake = net.backward(acts, g_logit, at_layer=len(net.layers) - 1, need_param_grads=False)
    return loss, grad_fake


def _corpus_images(corpus):
    if isinstance(corpus, np.ndarray):
        return np.asarray(corpus, dtype=np.float64)
    samples = corpus.train if hasattr(corpus, "train") else list(corpus)
    if not samples:
        raise ValueError("training corpus is empty")
    return np.stack([s.image for s in samples])


def train(corpus, config):
    """Adversarial training; deterministic for a fixed seed (single-threaded).

    Per minibatch: one Adam step on the discriminator, then
    ``g_updates_per_d_update`` Adam steps on the generator, each with
    fresh latent draws.
    """
    images = _corpus_images(corpus)
    n, channels, height, width = images.shape
    gen = build_generator(
        (height, width),
        channels,
        latent_dim=config.latent_dim,
        base_channels=config.g_channels,
        seed=derive_seed(config.seed, "init-g"),
    )
    disc = build_discriminator(
        (height, width),
        channels,
        base_channels=config.d_channels,
        seed=derive_seed(config.seed, "init-d"),
    )
    prng = Prng(derive_seed(config.seed, "train"))
    adam_d = Adam(disc.net.parameters(), config.learning_rate, config.beta1, config.beta2)
    adam_g = Adam(gen.net.parameters(), config.learning_rate, config.beta1, config.beta2)

    history = []
    d_steps = g_steps = 0
    d_real_scores, d_fake_scores = [], []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = prng.permutation(n)
        final_epoch = epoch == config.epochs - 1
        if final_epoch:
            d_real_scores, d_fake_scores = [], []
        for lo in range(0, n, config.minibatch):
            real = images[order[lo : lo + config.minibatch]]
            b = len(real)
            z = sample_latent(b, config.latent_dim, prng)
            fake = gen.net.forward(z).output
            d_loss, d_grads = discriminator_loss(disc, real, fake, config.loss_variant)
            if not np.isfinite(d_loss):
                raise NonFiniteError(f"discriminator loss diverged at step {d_steps}")
            adam_d.step(d_grads)
            d_steps += 1
            if final_epoch:
                d_real_scores.append(float(disc.net.forward(real).output.mean()))
                d_fake_scores.append(float(disc.net.forward(fake).output.mean()))
            g_loss = np.nan
            for _ in range(config.g_updates_per_d_update):
                z = sample_latent(b, config.latent_dim, prng)
                acts_g = gen.net.forward(z)
                g_loss, grad_fake = generator_loss(disc, acts_g.output, config.loss_variant)
                if not np.isfinite(g_loss):
                    raise NonFiniteError(f"generator loss diverged at step {g_steps}")
                g_grads, _ = gen.net.backward(acts_g, grad_fake)
                adam_g.step(g_grads)
                g_steps += 1
                history.append((g_steps, d_loss, g_loss))

    gen.net.set_mode("infer")
    disc.net.set_mode("infer")
    return TrainResult(
        generator=gen,
        discriminator=disc,
        history=history,
        train_seconds=time.perf_counter() - started,
        d_steps=d_steps,
        g_steps=g_steps,
        final_epoch_d_real=float(np.mean(d_real_scores)) if d_real_scores else 0.0,
        final_epoch_d_fake=float(np.mean(d_fake_scores)) if d_fake_scores else 0.0,
    )
