"""Detector imperfections: pixelation into a discrete mass and jitter by convolution."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .density import ParametricDensity, from_terms
from .model import normalize
from .numerics import Grid, NumericalError, central_derivative, integrate

PIXEL_FLOOR = 1e-16
TRUNCATION_LIMIT = 1e-12
KERNEL_SPAN = 8.0
KERNEL_NODES = 801


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class PixelConfig:
    """Pixels of width ``r_s``; the detector is displaced by ``mu``.

    ``n_range`` optionally restricts the pixel labels to ``lo..hi`` inclusive;
    by default every pixel carrying non-negligible mass is kept.
    """

    r_s: float
    mu: float = 0.0
    n_range: Optional[tuple] = None

    def __post_init__(self):
        if not self.r_s > 0:
            raise DetectorError("pixel width must be positive")


@dataclass(frozen=True)
class NoiseKernel:
    """Jitter kernel. Gaussian (``sigma``, ``mean``) or tabulated on a grid."""

    kind: str
    sigma: float = 0.0
    mean: float = 0.0
    grid: Optional[Grid] = None
    weights: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.sigma < 0:
                raise DetectorError("jitter width must be nonnegative")
        elif self.kind == "tabulated":
            w = np.asarray(self.weights, dtype=float)
            if self.grid is None or w.shape != (self.grid.n,):
                raise DetectorError("tabulated kernel needs weights on its grid")
            if np.any(w < 0):
                raise DetectorError("kernel weights must be nonnegative")
            x, quad = _simpson_weights(self.grid)
            total = float(np.sum(quad * w))
            if abs(total - 1) > 1e-10:
                raise DetectorError(f"kernel must integrate to 1 (got {total!r})")
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "mean", float(np.sum(quad * w * x)))
        else:
            raise DetectorError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def gaussian(cls, sigma: float, mean: float = 0.0) -> "NoiseKernel":
        return cls("gaussian", sigma=float(sigma), mean=float(mean))

    @classmethod
    def tabulated(cls, grid: Grid, weights, normalize: bool = False) -> "NoiseKernel":
        w = np.asarray(weights, dtype=float)
        if normalize:
            _, quad = _simpson_weights(grid)
            w = w / np.sum(quad * w)
        return cls("tabulated", grid=grid, weights=w)

    @property
    def is_identity(self) -> bool:
        return self.kind == "gaussian" and self.sigma == 0 and self.mean == 0

    def nodes(self, n: int = KERNEL_NODES):
        """Quadrature nodes ``u_m`` and weights ``w_m`` (summing to 1) for the kernel."""
        if self.kind == "gaussian":
            if self.sigma == 0:
                return np.array([self.mean]), np.array([1.0])
            grid = Grid(self.mean - KERNEL_SPAN * self.sigma,
                        self.mean + KERNEL_SPAN * self.sigma, n)
            u, quad = _simpson_weights(grid)
            z = (u - self.mean) / self.sigma
            w = quad * np.exp(-0.5 * z * z)
        else:
            u, quad = _simpson_weights(self.grid)
            w = quad * self.weights
        return u, w / w.sum()


def _simpson_weights(grid: Grid):
    n = grid.n
    x = grid.values
    if n % 2 == 0:
        # trapezoid for an even point count
        w = np.full(n, grid.spacing)
        w[[0, -1]] *= 0.5
        return x, w
    w = np.ones(n)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return x, w * grid.spacing / 3


@dataclass(frozen=True)
class PixelMass:
    """Discrete distribution over pixel labels, with its g-derivative when known."""

    labels: np.ndarray
    probs: np.ndarray
    d_dg: Optional[np.ndarray] = None
    truncated: float = 0.0

    def as_dict(self) -> dict:
        return {int(n): float(p) for n, p in zip(self.labels, self.probs)}

    @property
    def total(self) -> float:
        return float(np.sum(self.probs))

    def relabel(self, offset: int) -> "PixelMass":
        return replace(self, labels=self.labels + int(offset))


def alignment_of(velocity: float, g: float, cfg: PixelConfig) -> float:
    """Fractional centroid offset from a pixel centre, folded into ``[0, 0.5]``."""
    h = np.mod(velocity * g - cfg.mu, cfg.r_s) / cfg.r_s
    h = float(h) % 1.0
    return 1.0 - h if h > 0.5 else h


def mu_for_alignment(centroid: float, h: float, r_s: float) -> float:
    """Detector displacement that places ``centroid`` at alignment ``h``."""
    return centroid - h * r_s


def centroid(P: ParametricDensity, g: float) -> float:
    lo, hi = P.domain(g)
    mass = integrate(lambda s: P(s, g), lo, hi, tol=1e-13).value
    first = integrate(lambda s: s * P(s, g), lo, hi, tol=1e-13).value
    return first / mass


def _unnormalized_terms(P: ParametricDensity):
    if P.terms is not None:
        return P.terms, None
    pbar = P.meta.get("unnormalized")
    if pbar is not None and pbar.terms is not None:
        return pbar.terms, pbar
    return None, None


def pixelate(P: ParametricDensity, cfg: PixelConfig, g: float) -> PixelMass:
    """Integrate ``P(s + mu, g)`` over pixels ``[r_s (n - 1/2), r_s (n + 1/2)]``.

    Pixel derivatives are exact where possible: closed-form for Gaussian
    term sums, boundary evaluation for shift families, quadrature of ``d_dg``
    otherwise, and central differences of the masses as a last resort.
    """
    r, mu = cfg.r_s, cfg.mu
    lo, hi = P.domain(g)
    n_lo = int(np.floor((lo - mu) / r + 0.5))
    n_hi = int(np.ceil((hi - mu) / r - 0.5))
    labels = np.arange(n_lo, n_hi + 1)
    edges_lo = r * (labels - 0.5) + mu
    edges_hi = r * (labels + 0.5) + mu

    terms, pbar = _unnormalized_terms(P)
    if terms is not None and terms.real_means:
        probs, dprobs = terms.interval_mass(edges_lo, edges_hi, g)
        if pbar is not None:
            q, dq = pbar.meta["mass"](g), pbar.meta["d_mass"](g)
            probs, dprobs = probs / q, dprobs / q - probs * dq / q ** 2
    else:
        probs = _pixel_integrals(lambda s: P(s, g), edges_lo, edges_hi, lo, hi)
        if P.is_shift_family:
            dprobs = -P.velocity * (P(edges_hi, g) - P(edges_lo, g))
        elif P.d_dg is not None:
            dprobs = _pixel_integrals(lambda s: P.d_dg(s, g), edges_lo, edges_hi, lo, hi)
        else:
            dprobs = central_derivative(
                lambda gg: _pixel_integrals(lambda s: P(s, gg), edges_lo, edges_hi, lo, hi), g)

    keep = probs >= PIXEL_FLOOR
    truncated = float(np.sum(np.abs(probs[~keep])))
    if cfg.n_range is not None:
        inside = (labels >= cfg.n_range[0]) & (labels <= cfg.n_range[1])
        truncated += float(np.sum(np.abs(probs[keep & ~inside])))
        keep &= inside
    if truncated > TRUNCATION_LIMIT:
        raise DetectorError(f"pixel range too small: truncated mass {truncated:.3g}")
    return PixelMass(labels[keep], probs[keep], np.asarray(dprobs)[keep], truncated)


def _pixel_integrals(f, edges_lo, edges_hi, lo, hi, tol=1e-15):
    out = np.zeros(edges_lo.shape)
    for i, (a, b) in enumerate(zip(edges_lo, edges_hi)):
        a, b = max(a, lo), min(b, hi)
        if b > a:
            out[i] = integrate(f, a, b, tol=tol, rtol=1e-12, panels=8).value
    return out


def apply_jitter(P: ParametricDensity, kernel: NoiseKernel, nodes: int = KERNEL_NODES) -> ParametricDensity:
    """Convolve with a g-independent kernel: ``s -> integral P(s + u, g) N(u) du``.

    Gaussian kernels on Gaussian term sums are applied in closed form
    (variances add). Everything else uses a discretised kernel. Shift
    structure, velocity and normalisation are preserved.
    """
    if kernel.is_identity:
        return P
    terms, pbar = _unnormalized_terms(P)
    if kernel.kind == "gaussian" and terms is not None:
        new_terms = terms.convolve_gaussian(kernel.sigma, kernel.mean)
        if pbar is None:
            out = from_terms(new_terms, normalized=P.normalized, label=f"{P.label}*N",
                             velocity=P.velocity, **P.meta)
            if P.is_shift_family:
                return _shift_from_terms(out, P)
            return out
        jittered = from_terms(new_terms, normalized=False, label=f"{pbar.label}*N", **pbar.meta)
        return normalize(jittered)

    u, w = kernel.nodes(nodes)

    def conv(f):
        def g_(s, g):
            s = np.asarray(s, dtype=float)
            return np.tensordot(f(s[..., None] + u, g), w, axes=([-1], [0]))
        return g_

    def domain(g):
        lo, hi = P.domain(g)
        return lo - u.max(), hi - u.min()

    density = conv(P.density)
    d_dg = conv(P.d_dg) if P.d_dg is not None else None
    base = d_base = None
    if P.is_shift_family:
        b0, db0 = P.base, P.d_base
        base = lambda s: np.tensordot(b0(np.asarray(s, dtype=float)[..., None] + u), w, axes=([-1], [0]))
        d_base = lambda s: np.tensordot(db0(np.asarray(s, dtype=float)[..., None] + u), w, axes=([-1], [0]))
    meta = dict(P.meta)
    meta.pop("unnormalized", None)
    return ParametricDensity(density, domain, d_dg, P.velocity, base, d_base,
                             normalized=P.normalized, label=f"{P.label}*N", meta=meta)


def _shift_from_terms(jittered: ParametricDensity, original: ParametricDensity) -> ParametricDensity:
    terms = jittered.terms
    nu = original.velocity

    def base(s):
        return terms(s, 0.0)

    def d_base(s):
        # shift family: d/ds P0 = -(1/nu) d/dg at g = 0, computed directly instead
        s = np.asarray(s, dtype=float)[..., None]
        z = s - terms.offset
        gauss = terms.coef * np.exp(-z * z / (2 * terms.var)) / np.sqrt(2 * np.pi * terms.var)
        return np.real((gauss * (-z / terms.var)).sum(axis=-1))

    return replace(jittered, base=base, d_base=d_base, velocity=nu)
