"""Classical sparsity-based recovery over an orthonormal 2-D DCT basis.

Greedy solvers (OMP, CoSaMP) and an iterative soft-thresholding solver
stand in for convex L1 programming.  All of them work on the composed map
``measurement ∘ synthesis`` and are pure functions of (operator, y,
config), grayscale only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import NonFiniteError


def dct2(x):
    """Orthonormal type-II 2-D DCT."""
    return dctn(np.asarray(x, dtype=np.float64), type=2, norm="ortho")


def idct2(x):
    """Exact inverse of ``dct2``."""
    return idctn(np.asarray(x, dtype=np.float64), type=2, norm="ortho")


@dataclass
class SparsifyingBasis:
    """Coefficients <-> image maps for an H×W grid (orthonormal 2-D DCT)."""

    height: int
    width: int

    @property
    def size(self):
        return self.height * self.width

    def synthesize(self, w):
        return idct2(np.asarray(w).reshape(self.height, self.width))

    def analyze(self, image):
        return dct2(image).reshape(-1)


@dataclass
class BaselineConfig:
    method: str = "cosamp"
    sparsity: int | None = None  # default ceil(0.05 * N), capped at M
    l1_weight: float = 0.01
    iterations: int = 500  # ista budget; greedy solvers cap much lower
    max_greedy_iterations: int = 50
    residual_tol: float = 1e-12
    stall_tol: float = 1e-7

    def effective_sparsity(self, n, m):
        k = self.sparsity if self.sparsity is not None else int(np.ceil(0.05 * n))
        k = min(k, m)
        if not 1 <= k <= m:
            raise ValueError(f"sparsity {k} outside [1, {m}]")
        return k


class _ComposedMap:
    """Phi = measurement ∘ synthesis, with adjoint, on flat coefficients."""

    def __init__(self, operator, basis):
        self.operator = operator
        self.basis = basis
        c = operator.image_shape[0]
        if c != 1:
            raise ValueError("sparse baselines are grayscale only (1 channel)")

    def apply(self, w):
        return self.operator.apply(self.basis.synthesize(w)[None])

    def adjoint(self, y):
        return self.basis.analyze(self.operator.adjoint(y)[0])

    def column(self, j):
        e = np.zeros(self.basis.size)
        e[j] = 1.0
        return self.apply(e)


def _least_squares_on_support(phi, y, support, max_cg=None):
    """CG on the (ridge-stabilized) normal equations restricted to a support."""
    support = np.asarray(sorted(support), dtype=np.int64)
    m = y.size
    ridge = 0.0
    if support.size > m:
        ridge = 1e-10
        warnings.warn(
            f"support size {support.size} exceeds {m} measurements; "
            "solving with 1e-10 ridge regularization",
            stacklevel=3,
        )

    def embed(x):
        w = np.zeros(phi.basis.size)
        w[support] = x
        return w

    def normal_op(x):
        return phi.adjoint(phi.apply(embed(x)))[support] + ridge * x

    b = phi.adjoint(y)[support]
    x = np.zeros(support.size)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = max(np.sqrt(float(b @ b)), 1e-300)
    max_cg = max_cg or max(200, 2 * support.size)
    for _ in range(max_cg):
        if np.sqrt(rs) <= 1e-13 * b_norm:
            break
        ap = normal_op(p)
        denom = float(p @ ap)
        if denom <= 0:
            if ridge == 0.0:
                warnings.warn("ill-conditioned support system; retrying with ridge", stacklevel=3)
                return _least_squares_on_support_ridge(phi, y, support)
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return support, x


def _least_squares_on_support_ridge(phi, y, support):
    def embed(x):
        w = np.zeros(phi.basis.size)
        w[support] = x
        return w

    b = phi.adjoint(y)[support]
    x = np.zeros(support.size)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max(200, 2 * support.size)):
        if np.sqrt(rs) <= 1e-13 * max(np.sqrt(float(b @ b)), 1e-300):
            break
        ap = phi.adjoint(phi.apply(embed(p)))[support] + 1e-10 * p
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return support, x


def omp(operator, basis, y, config):
    """Orthogonal matching pursuit: K greedy atoms with exact least squares."""
    phi = _ComposedMap(operator, basis)
    y = np.asarray(y, dtype=np.float64)
    k = config.effective_sparsity(basis.size, y.size)
    y_norm = np.linalg.norm(y)
    w = np.zeros(basis.size)
    if y_norm == 0.0:
        return basis.synthesize(w)[None], w
    support = []
    columns = np.zeros((y.size, 0))
    residual = y.copy()
    coeffs = np.zeros(0)
    for _ in range(k):
        proxy = np.abs(phi.adjoint(residual))
        proxy[support] = -1.0  # greedy exclusion keeps the support duplicate-free
        j = int(np.argmax(proxy))
        support.append(j)
        columns = np.concatenate([columns, phi.column(j)[:, None]], axis=1)
        coeffs, *_ = np.linalg.lstsq(columns, y, rcond=None)
        residual = y - columns @ coeffs
        if np.linalg.norm(residual) <= config.residual_tol * y_norm:
            break
    w[support] = coeffs
    return basis.synthesize(w)[None], w


def cosamp(operator, basis, y, config):
    """CoSaMP: 2K identification, support merge, least squares, prune to K.

    The pruned support gets a debiasing least-squares refit each round, so
    the reported coefficients are the exact fit on that support.
    """
    phi = _ComposedMap(operator, basis)
    y = np.asarray(y, dtype=np.float64)
    k = config.effective_sparsity(basis.size, y.size)
    y_norm = np.linalg.norm(y)
    w = np.zeros(basis.size)
    if y_norm == 0.0:
        return basis.synthesize(w)[None], w
    residual = y.copy()
    prev_res_norm = np.inf
    for _ in range(config.max_greedy_iterations):
        proxy = np.abs(phi.adjoint(residual))
        omega = np.argpartition(proxy, -min(2 * k, proxy.size))[-min(2 * k, proxy.size):]
        merged = np.union1d(omega, np.flatnonzero(w))
        support, coeffs = _least_squares_on_support(phi, y, merged)
        order = np.argsort(np.abs(coeffs))[::-1][:k]
        pruned, refit = _least_squares_on_support(phi, y, support[order])
        w = np.zeros(basis.size)
        w[pruned] = refit
        residual = y - phi.apply(w)
        res_norm = np.linalg.norm(residual)
        if res_norm <= config.residual_tol * y_norm:
            break
        if res_norm >= prev_res_norm * (1.0 - config.stall_tol):
            break
        prev_res_norm = res_norm
    return basis.synthesize(w)[None], w


def _power_iteration_bound(phi, n, iterations=50):
    """Upper bound on the top eigenvalue of Phi^T Phi (Rayleigh + margin)."""
    v = np.ones(n) + 1e-3 * np.arange(n) / n  # deterministic non-degenerate start
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iterations):
        av = phi.adjoint(phi.apply(v))
        lam = float(v @ av)
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return 1.0
        v = av / norm
    return 1.05 * max(lam, np.linalg.norm(phi.adjoint(phi.apply(v))))


def ista_l1(operator, basis, y, config):
    """Proximal-gradient minimization of ||Phi w - y||^2 + l1_weight * ||w||_1.

    Step 1/(2L) on the smooth term with L an upper bound on the top
    eigenvalue of Phi^T Phi, i.e. iterate
    ``w <- soft(w - (1/L) Phi^T(Phi w - y), l1_weight / (2L))``;
    the objective is monotone non-increasing.  Returns the reconstruction,
    the coefficients, and the per-iteration objective trace.
    """
    phi = _ComposedMap(operator, basis)
    y = np.asarray(y, dtype=np.float64)
    lip = _power_iteration_bound(phi, basis.size)
    lam = config.l1_weight
    if lam <= 0:
        raise ValueError("l1_weight must be positive")
    w = np.zeros(basis.size)
    residual = phi.apply(w) - y
    trace = [float(residual @ residual) + lam * float(np.abs(w).sum())]
    threshold = lam / (2.0 * lip)
    for _ in range(config.iterations):
        grad_step = w - phi.adjoint(residual) / lip
        w = np.sign(grad_step) * np.maximum(np.abs(grad_step) - threshold, 0.0)
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("ista iterate became non-finite")
        residual = phi.apply(w) - y
        trace.append(float(residual @ residual) + lam * float(np.abs(w).sum()))
    return basis.synthesize(w)[None], w, np.asarray(trace)


def solve(method, operator, y, config=None):
    """Dispatch a baseline by name; returns (image, coefficients, data_residual)."""
    config = config or BaselineConfig(method=method)
    _, h, wdt = operator.image_shape
    basis = SparsifyingBasis(h, wdt)
    if method == "omp":
        image, coeffs = omp(operator, basis, y, config)
    elif method == "cosamp":
        image, coeffs = cosamp(operator, basis, y, config)
    elif method == "ista":
        image, coeffs, _ = ista_l1(operator, basis, y, config)
    else:
        raise ValueError(f"unknown baseline method {method!r}")
    resid = operator.apply(image) - y
    return image, coeffs, float(np.sum(resid * resid))
