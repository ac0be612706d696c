"""Degradation operators — compression, motion blur, occlusion — with exact adjoints.

Each operator maps a (C, H, W) image (or a batch of them) into an
observation space and exposes the adjoint of that linear map, which both
latent recovery and the greedy sparse solvers need.  Measurement noise is
applied separately by ``degrade`` so operators themselves stay pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .nn.layers import _col2im, _im2col
from .rng import Prng


@dataclass
class NoiseModel:
    """Additive Gaussian noise: per observation, sigma ~ Uniform(0, delta).

    ``level`` is the ratio between delta and the full value range of the
    signal (2.0 for images in [-1, 1]); level 0 means exactly zero noise.
    """

    level: float = 0.0
    value_range: float = 2.0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")

    @property
    def delta(self):
        return self.level * self.value_range

    def sample(self, shape, prng):
        """Draw one sigma, then i.i.d. N(0, sigma^2) of the given shape."""
        sigma = prng.uniform() * self.delta
        return sigma * prng.normal(shape)


def _flatten_batch(x, inner_shape, where):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-len(inner_shape):] != tuple(inner_shape):
        raise ShapeMismatchError(where, inner_shape, x.shape)
    lead = x.shape[: -len(inner_shape)]
    return x.reshape((-1,) + tuple(inner_shape)), lead


class CompressionOperator:
    """Random linear projections: y = A @ vec(s) with i.i.d. N(0,1) entries.

    A is (M, N) with N = C*H*W and M = round(N / cr); it regenerates
    bit-exactly from the seed.
    """

    kind = "compression"

    def __init__(self, image_shape, cr, seed):
        if cr < 1:
            raise ValueError("compression ratio must be >= 1")
        self.image_shape = tuple(int(v) for v in image_shape)
        self.cr = float(cr)
        self.seed = int(seed)
        self.n = int(np.prod(self.image_shape))
        self.m = int(round(self.n / self.cr))
        if not 1 <= self.m <= self.n:
            raise ValueError(f"measurement count {self.m} out of range [1, {self.n}]")
        self.matrix = Prng(self.seed).normal((self.m, self.n))

    @property
    def out_shape(self):
        return (self.m,)

    def apply(self, s):
        flat, lead = _flatten_batch(s, self.image_shape, "compression input")
        y = np.matmul(flat.reshape(len(flat), 1, self.n), self.matrix.T)[:, 0, :]
        return y.reshape(lead + (self.m,))

    def adjoint(self, v):
        flat, lead = _flatten_batch(v, (self.m,), "compression adjoint input")
        x = np.matmul(flat.reshape(len(flat), 1, self.m), self.matrix)[:, 0, :]
        return x.reshape(lead + self.image_shape)

    def descriptor(self):
        return f"compression:cr={_fmt(self.cr)},seed={self.seed}"


def motion_blur_kernel(direction_degrees, degree):
    """Uniform line kernel: unit steps along the direction, rounded to pixels.

    ``degree`` is the odd line length in pixels; the kernel is degree x
    degree, nonnegative, and sums to one.
    """
    d = int(degree)
    if d < 1 or d % 2 == 0:
        raise ValueError(f"blur degree must be a positive odd integer, got {degree}")
    half = (d - 1) // 2
    theta = np.deg2rad(direction_degrees)
    dy, dx = np.sin(theta), np.cos(theta)
    kernel = np.zeros((d, d))
    taps = set()
    for k in range(-half, half + 1):
        r = int(np.round(half + k * dy))
        c = int(np.round(half + k * dx))
        taps.add((min(max(r, 0), d - 1), min(max(c, 0), d - 1)))
    for r, c in taps:
        kernel[r, c] = 1.0
    return kernel / kernel.sum()


class BlurOperator:
    """Per-channel same-size correlation with a motion-blur line kernel."""

    kind = "blur"

    def __init__(self, image_shape, direction_degrees, degree):
        self.image_shape = tuple(int(v) for v in image_shape)
        if degree > min(self.image_shape[1], self.image_shape[2]):
            raise ValueError("blur degree exceeds image extent")
        self.direction = float(direction_degrees)
        self.degree = int(degree)
        self.kernel = motion_blur_kernel(self.direction, self.degree)

    @property
    def out_shape(self):
        return self.image_shape

    def _correlate(self, s, kernel):
        flat, lead = _flatten_batch(s, self.image_shape, "blur input")
        b, c, h, w = flat.shape
        d = self.degree
        cols, oh, ow = _im2col(flat.reshape(b * c, 1, h, w), d, d, 1, (d - 1) // 2)
        out = np.matmul(kernel.reshape(1, -1), cols)
        return out.reshape(lead + self.image_shape)

    def apply(self, s):
        return self._correlate(s, self.kernel)

    def adjoint(self, v):
        return self._correlate(v, self.kernel[::-1, ::-1])

    def descriptor(self):
        return f"blur:angle={_fmt(self.direction)},degree={self.degree}"


class OcclusionOperator:
    """Hadamard masking by a lens-shaped ("leaf") occluder.

    The lens is the intersection of two equal discs, rotated and placed by
    the seed; its radius is calibrated by bisection until the occluded
    pixel fraction is within 0.02 of the target coverage.  ``fill_value``
    is only painted into the display image, never into the observation.
    """

    kind = "occlusion"

    def __init__(self, image_shape, coverage, seed, fill_value=0.0):
        if not 0.0 < coverage < 1.0:
            raise ValueError("coverage must lie in (0, 1)")
        self.image_shape = tuple(int(v) for v in image_shape)
        self.coverage = float(coverage)
        self.seed = int(seed)
        self.fill_value = float(fill_value)
        self.mask = self._build_mask()

    def _build_mask(self):
        _, h, w = self.image_shape
        prng = Prng(self.seed)
        angle = 2.0 * np.pi * prng.uniform()
        cy = h * (0.3 + 0.4 * prng.uniform())
        cx = w * (0.3 + 0.4 * prng.uniform())
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        # rotate into the lens frame; the two disc centers sit at +-r/2 on
        # the local x axis, so the lens width is controlled by r alone
        rel_y = (yy - cy) * np.cos(angle) - (xx - cx) * np.sin(angle)
        rel_x = (yy - cy) * np.sin(angle) + (xx - cx) * np.cos(angle)

        def occluded_fraction(radius):
            d1 = (rel_x - radius / 2.0) ** 2 + rel_y**2
            d2 = (rel_x + radius / 2.0) ** 2 + rel_y**2
            return ((d1 <= radius**2) & (d2 <= radius**2)).mean()

        lo, hi = 0.0, float(max(h, w)) * 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if occluded_fraction(mid) < self.coverage:
                lo = mid
            else:
                hi = mid
        radius = 0.5 * (lo + hi)
        if abs(occluded_fraction(radius) - self.coverage) > 0.02:
            raise RuntimeError("occlusion radius calibration failed to reach target coverage")
        d1 = (rel_x - radius / 2.0) ** 2 + rel_y**2
        d2 = (rel_x + radius / 2.0) ** 2 + rel_y**2
        occluded = (d1 <= radius**2) & (d2 <= radius**2)
        return (~occluded).astype(np.float64)  # 1 = visible, 0 = occluded

    @property
    def out_shape(self):
        return self.image_shape

    def apply(self, s):
        flat, lead = _flatten_batch(s, self.image_shape, "occlusion input")
        return (flat * self.mask[None, None]).reshape(lead + self.image_shape)

    adjoint = apply  # diagonal 0/1 operator is self-adjoint

    def display(self, s):
        """The observed image with fill_value painted into occluded pixels."""
        flat, lead = _flatten_batch(s, self.image_shape, "occlusion input")
        vis = self.mask[None, None]
        out = flat * vis + self.fill_value * (1.0 - vis)
        return out.reshape(lead + self.image_shape)

    def descriptor(self):
        return (
            f"occlusion:coverage={_fmt(self.coverage)},seed={self.seed},fill={_fmt(self.fill_value)}"
        )


def compress(operator, s, noise, prng):
    """y = A vec(s) + eps per the compression observation model."""
    y = operator.apply(s)
    return y + noise.sample(y.shape, prng)


def apply_blur(operator, s, noise, prng):
    y = operator.apply(s)
    return y + noise.sample(y.shape, prng)


def apply_occlusion(operator, s):
    """Return (observation with occluded pixels zeroed, display image)."""
    return operator.apply(s), operator.display(s)


def degrade(operator, s, noise, prng):
    """Uniform entry point used by the harness: apply then add noise."""
    if operator.kind == "occlusion":
        return operator.apply(s)
    y = operator.apply(s)
    return y + noise.sample(y.shape, prng)


def _fmt(x):
    return f"{x:g}"


def format_descriptor(operator, noise=None):
    text = operator.descriptor()
    if noise is not None:
        text += f",nl={_fmt(noise.level)}"
    return text


def parse_descriptor(text, image_shape):
    """Build (operator, noise) from a descriptor like ``compression:cr=4,seed=1,nl=0``."""
    kind, _, rest = text.partition(":")
    fields = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            fields[key.strip()] = value.strip()
    noise = NoiseModel(level=float(fields.pop("nl", 0.0)))
    if kind == "compression":
        op = CompressionOperator(image_shape, cr=float(fields["cr"]), seed=int(fields["seed"]))
    elif kind == "blur":
        op = BlurOperator(image_shape, direction_degrees=float(fields["angle"]), degree=int(fields["degree"]))
    elif kind == "occlusion":
        op = OcclusionOperator(
            image_shape,
            coverage=float(fields["coverage"]),
            seed=int(fields["seed"]),
            fill_value=float(fields.get("fill", 0.0)),
        )
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    return op, noise
