"""Parametric probability densities over a meter variable ``s`` indexed by ``g``.

A :class:`ParametricDensity` is an immutable bundle of vectorised callables.
Two structured special cases let downstream transforms stay exact:

* pure-shift families ``P(s, g) = P0(s - velocity * g)`` (``velocity`` set), and
* finite sums of complex-weighted Gaussians (``terms`` set), which are closed
  under Gaussian convolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .numerics import erf

SQRT2PI = np.sqrt(2 * np.pi)

DensityFunc = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class GaussianTerms:
    """``Re sum_t c_t exp(-kappa_t g^2 + i tau_t g) N(s; beta_t g + offset_t, var_t)``.

    Means may be complex; a term ``exp(i w s) N(s; m, v)`` is rewritten as
    ``exp(i w m - w^2 v / 2) N(s; m + i w v, v)`` so that modulated Gaussians
    live in the same family. Gaussian jitter maps ``var -> var + J^2`` and
    ``offset -> offset - kernel_mean``.
    """

    coef: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    beta: np.ndarray
    offset: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        for name in ("coef", "kappa", "tau", "beta", "offset", "var"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name))))

    @property
    def real_means(self) -> bool:
        return bool(np.all(np.imag(self.beta) == 0) and np.all(np.imag(self.offset) == 0))

    def weights(self, g: float) -> np.ndarray:
        return self.coef * np.exp(-self.kappa * g * g + 1j * self.tau * g)

    def means(self, g: float) -> np.ndarray:
        return self.beta * g + self.offset

    def _components(self, s, g):
        s = np.asarray(s, dtype=float)[..., None]
        mu = self.means(g)
        z = s - mu
        gauss = np.exp(-z * z / (2 * self.var)) / (SQRT2PI * np.sqrt(self.var))
        return z, self.weights(g) * gauss

    def __call__(self, s, g):
        _, comp = self._components(s, g)
        return np.real(comp.sum(axis=-1))

    def d_dg(self, s, g):
        z, comp = self._components(s, g)
        factor = -2 * self.kappa * g + 1j * self.tau + self.beta * z / self.var
        return np.real((comp * factor).sum(axis=-1))

    def interval_mass(self, lo, hi, g):
        """Closed-form mass and g-derivative over ``[lo, hi]`` (real means only)."""
        if not self.real_means:
            raise ValueError("closed-form interval mass needs real means")
        lo = np.asarray(lo, dtype=float)[..., None]
        hi = np.asarray(hi, dtype=float)[..., None]
        mu = np.real(self.means(g))
        sd = np.sqrt(self.var)
        w = self.weights(g)
        cdf = 0.5 * (erf((hi - mu) / (sd * np.sqrt(2))) - erf((lo - mu) / (sd * np.sqrt(2))))
        pdf_hi = np.exp(-0.5 * ((hi - mu) / sd) ** 2) / (SQRT2PI * sd)
        pdf_lo = np.exp(-0.5 * ((lo - mu) / sd) ** 2) / (SQRT2PI * sd)
        dw = w * (-2 * self.kappa * g + 1j * self.tau)
        beta = np.real(self.beta)
        mass = np.real((w * cdf).sum(axis=-1))
        dmass = np.real((dw * cdf - w * beta * (pdf_hi - pdf_lo)).sum(axis=-1))
        return mass, dmass

    def convolve_gaussian(self, sigma: float, mean: float = 0.0) -> "GaussianTerms":
        return replace(self, var=self.var + sigma * sigma, offset=self.offset - mean)

    def window(self, g: float, width: float = 10.0):
        mu = np.real(self.means(g))
        sd = np.sqrt(self.var)
        return float(np.min(mu - width * sd)), float(np.max(mu + width * sd))


@dataclass(frozen=True)
class ParametricDensity:
    """Map ``(s, g) -> P(s | g)``, vectorised in ``s``.

    ``domain(g)`` returns an interval outside which the density is negligible.
    ``velocity`` is set only for pure-shift families; ``base``/``d_base`` then
    hold the unshifted profile and its derivative in ``s``. ``normalized`` is
    False for branch densities that carry their own probability mass.
    """

    density: DensityFunc
    domain: Callable[[float], tuple]
    d_dg: Optional[DensityFunc] = None
    velocity: Optional[float] = None
    base: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d_base: Optional[Callable[[np.ndarray], np.ndarray]] = None
    terms: Optional[GaussianTerms] = None
    normalized: bool = True
    label: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, s, g):
        return self.density(np.asarray(s, dtype=float), g)

    @property
    def is_shift_family(self) -> bool:
        return self.velocity is not None and self.base is not None


def shift_family(base, d_base, velocity: float, support: tuple, label: str = "",
                 **meta) -> ParametricDensity:
    """``P(s, g) = base(s - velocity * g)`` with analytic ``d/dg = -velocity * base'``."""
    velocity = float(velocity)
    lo, hi = support

    def density(s, g):
        return base(s - velocity * g)

    def d_dg(s, g):
        return -velocity * d_base(s - velocity * g)

    def domain(g):
        return lo + velocity * g, hi + velocity * g

    return ParametricDensity(density, domain, d_dg, velocity, base, d_base,
                             label=label, meta=dict(meta))


def gaussian_shift_family(width: float, velocity: float, center: float = 0.0,
                          label: str = "gaussian") -> ParametricDensity:
    """Shift family of a normal density with standard deviation ``width``."""
    var = width * width

    def base(s):
        z = s - center
        return np.exp(-z * z / (2 * var)) / (SQRT2PI * width)

    def d_base(s):
        return -(s - center) / var * base(s)

    terms = GaussianTerms(coef=[1.0 + 0j], kappa=[0.0], tau=[0.0], beta=[velocity],
                          offset=[center], var=[var])
    fam = shift_family(base, d_base, velocity, (center - 10 * width, center + 10 * width),
                       label=label, width=width)
    return replace(fam, terms=terms)


def from_terms(terms: GaussianTerms, normalized: bool = True, label: str = "",
               velocity: Optional[float] = None, **meta) -> ParametricDensity:
    return ParametricDensity(terms.__call__, terms.window, terms.d_dg, velocity,
                             terms=terms, normalized=normalized, label=label,
                             meta=dict(meta))
