"""Latent-space recovery: search the generator's input for the observation.

Minimizes ``||op(G(z)) - y||^2 + lam * ||z||^2`` over z with Adam through
the frozen generator, restarted from several random initializations; the
restart with the lowest loss wins.  Because the observation stores zeros
at occluded pixels and the occlusion operator zeroes the same pixels of
G(z), the residual automatically ignores unobserved regions.

Restarts run as one batch through the generator.  Every batched tensor op
is per-sample bit-identical to its single-sample form, so a batch of
restarts equals running them one by one, and permuting restart seeds
permutes results without changing any of them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError
from .nn import Adam
from .rng import Prng, derive_seed


@dataclass
class RecoveryConfig:
    lam: float = 0.001
    iterations: int = 200
    restarts: int = 10
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be >= 1")


@dataclass
class RecoveryResult:
    z_hat: np.ndarray
    reconstruction: np.ndarray
    loss_min: float
    per_restart_losses: list
    best_restart: int
    restart_seeds: list
    traces: list | None = None  # per restart: (iterations+1, 3) rows (L, L_c, L_p)
    wall_time_seconds: float = 0.0
    per_restart_z: list = field(default_factory=list)


def _require_infer(generator):
    if generator.net.mode != "infer":
        raise ValueError("recovery requires the generator in infer mode")


def _loss_batch(z_batch, generator, operator, y, lam):
    """Loss terms and dL/dz for a batch of latents (one row per restart)."""
    acts = generator.net.forward(z_batch)
    predicted = operator.apply(acts.output)
    residual = predicted - y[None]
    axes = tuple(range(1, residual.ndim))
    l_c = np.sum(residual * residual, axis=axes)
    l_p = np.sum(z_batch * z_batch, axis=1)
    total = l_c + lam * l_p
    grad_output = operator.adjoint(2.0 * residual)
    _, grad_z = generator.net.backward(acts, grad_output, need_param_grads=False)
    grad_z = grad_z + 2.0 * lam * z_batch
    return total, l_c, l_p, grad_z


def recovery_loss(z, generator, operator, y, lam):
    """Scalar loss and exact dL/dz for a single latent vector."""
    _require_infer(generator)
    z = np.asarray(z, dtype=np.float64)
    total, _, _, grad = _loss_batch(z[None], generator, operator, y, lam)
    if not np.isfinite(total[0]):
        raise NonFiniteError("recovery loss is non-finite")
    return float(total[0]), grad[0]


def _run_restarts(generator, operator, y, config, seeds):
    """Adam on a batch of restart latents; returns per-restart best iterates."""
    _require_infer(generator)
    y = np.asarray(y, dtype=np.float64)
    r = len(seeds)
    z = np.stack([Prng(seed).normal(generator.latent_dim) for seed in seeds])
    adam = Adam([("z", z)], config.learning_rate, config.beta1, config.beta2)

    best_loss = np.full(r, np.inf)
    best_z = z.copy()
    failed = np.zeros(r, dtype=bool)
    traces = [[] for _ in range(r)] if config.record_trace else None

    def evaluate(step):
        total, l_c, l_p, grad = _loss_batch(z, generator, operator, y, config.lam)
        bad = ~np.isfinite(total)
        if bad.any():
            failed[bad] = True
            total = np.where(bad, np.inf, total)
            grad[bad] = 0.0
        if traces is not None:
            for i in range(r):
                traces[i].append((float(total[i]), float(l_c[i]), float(l_p[i])))
        improved = total < best_loss
        if improved.any():
            best_loss[improved] = total[improved]
            best_z[improved] = z[improved]
        return grad

    for step in range(config.iterations):
        grad = evaluate(step)
        adam.step({"z": grad})
    evaluate(config.iterations)  # score the final iterate too
    return best_z, best_loss, traces, failed


def recover_single(generator, operator, y, config, restart_seed):
    """One optimization run from the latent drawn with ``restart_seed``."""
    best_z, best_loss, traces, failed = _run_restarts(
        generator, operator, y, config, [int(restart_seed)]
    )
    if failed[0]:
        raise NonFiniteError(f"restart with seed {restart_seed} produced a non-finite loss")
    return best_z[0], float(best_loss[0]), traces[0] if traces else None


_RESTART_BLOCK = 32  # batch width cap; blocks are bit-identical to one batch


def recover(generator, operator, y, config):
    """Multi-restart recovery; picks the restart with the lowest loss.

    Restart seeds derive from ``config.seed``; ties break toward the
    lowest restart index, so permuting seeds never changes the selected
    loss.
    """
    started = time.perf_counter()
    seeds = [derive_seed(config.seed, "restart", i) for i in range(config.restarts)]
    z_blocks, loss_blocks, trace_blocks, failed_blocks = [], [], [], []
    for lo in range(0, len(seeds), _RESTART_BLOCK):
        block = seeds[lo : lo + _RESTART_BLOCK]
        bz, bl, bt, bf = _run_restarts(generator, operator, y, config, block)
        z_blocks.append(bz)
        loss_blocks.append(bl)
        failed_blocks.append(bf)
        if bt is not None:
            trace_blocks.extend(bt)
    best_z = np.concatenate(z_blocks, axis=0)
    best_loss = np.concatenate(loss_blocks)
    failed = np.concatenate(failed_blocks)
    traces = trace_blocks if config.record_trace else None
    if failed.all():
        details = ", ".join(f"restart {i} (seed {seeds[i]}): non-finite" for i in range(len(seeds)))
        raise NonFiniteError(f"all restarts failed: {details}")
    winner = int(np.argmin(best_loss))  # argmin takes the first (lowest index) on ties
    z_hat = best_z[winner]
    reconstruction = generator.generate(z_hat)[0]
    return RecoveryResult(
        z_hat=z_hat,
        reconstruction=reconstruction,
        loss_min=float(best_loss[winner]),
        per_restart_losses=[float(v) for v in best_loss],
        best_restart=winner,
        restart_seeds=seeds,
        traces=traces,
        wall_time_seconds=time.perf_counter() - started,
        per_restart_z=[best_z[i] for i in range(len(seeds))],
    )
