"""Meter wavefunctions: analytic Gaussians and tabulated amplitudes.

A meter lives in one representation, position (``"x"``) or momentum (``"k"``).
Momentum meters are only ever used through ``|psi~(k)|``, so their phase is
irrelevant to every density built here.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .density import SQRT2PI, ParametricDensity, gaussian_shift_family, shift_family
from .numerics import Grid, fourier_transform, integrate, inverse_fourier_transform

POSITION = "x"
MOMENTUM = "k"
REPRESENTATIONS = (POSITION, MOMENTUM)

NORM_TOL = 1e-10


def _other(rep):
    return MOMENTUM if rep == POSITION else POSITION


class MeterState:
    """Common interface; see :class:`GaussianMeter` and :class:`TabulatedMeter`."""

    representation: str

    def amplitude(self, s):
        raise NotImplementedError

    def d_amplitude(self, s):
        raise NotImplementedError

    def prob(self, s):
        a = self.amplitude(s)
        return np.real(a * np.conj(a))

    def d_prob(self, s):
        return 2 * np.real(np.conj(self.amplitude(s)) * self.d_amplitude(s))

    def overlap(self, d):
        """``integral conj(psi(x)) psi(x - d) dx`` for a position-space shift ``d``."""
        raise NotImplementedError

    def d_overlap(self, d):
        raise NotImplementedError

    def support(self):
        raise NotImplementedError

    @property
    def width(self) -> float:
        raise NotImplementedError

    def fourier(self) -> "MeterState":
        raise NotImplementedError

    def in_representation(self, rep: str) -> "MeterState":
        if rep not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {rep!r}")
        return self if rep == self.representation else self.fourier()

    def shift_family(self, velocity: float) -> ParametricDensity:
        return shift_family(self.prob, self.d_prob, velocity, self.support(),
                            label=f"shift[{velocity:g}]")


class GaussianMeter(MeterState):
    """``psi(s) = (2 pi w^2)^(-1/4) exp(-(s - c)^2 / (4 w^2))`` with waist ``w``."""

    def __init__(self, waist: float, center: float = 0.0, representation: str = POSITION):
        if waist <= 0:
            raise ValueError("waist must be positive")
        if representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {representation!r}")
        self.waist = float(waist)
        self.center = float(center)
        self.representation = representation

    def __repr__(self):
        return f"GaussianMeter(waist={self.waist!r}, center={self.center!r}, representation={self.representation!r})"

    def __eq__(self, other):
        return (isinstance(other, GaussianMeter) and self.waist == other.waist
                and self.center == other.center and self.representation == other.representation)

    def __hash__(self):
        return hash((self.waist, self.center, self.representation))

    @property
    def width(self):
        return self.waist

    def amplitude(self, s):
        z = np.asarray(s, dtype=float) - self.center
        return (2 * np.pi * self.waist ** 2) ** -0.25 * np.exp(-z * z / (4 * self.waist ** 2))

    def d_amplitude(self, s):
        z = np.asarray(s, dtype=float) - self.center
        return -z / (2 * self.waist ** 2) * self.amplitude(s)

    def prob(self, s):
        z = np.asarray(s, dtype=float) - self.center
        return np.exp(-z * z / (2 * self.waist ** 2)) / (SQRT2PI * self.waist)

    def overlap(self, d):
        d = np.asarray(d, dtype=float)
        if self.representation == POSITION:
            return np.exp(-d * d / (8 * self.waist ** 2)) + 0j
        return np.exp(-1j * self.center * d - 0.5 * d * d * self.waist ** 2)

    def d_overlap(self, d):
        d = np.asarray(d, dtype=float)
        if self.representation == POSITION:
            return -d / (4 * self.waist ** 2) * self.overlap(d)
        return (-1j * self.center - d * self.waist ** 2) * self.overlap(d)

    def support(self):
        return self.center - 10 * self.waist, self.center + 10 * self.waist

    def fourier(self):
        # a position offset only adds a phase, so the momentum profile is centred
        return GaussianMeter(1.0 / (2 * self.waist), 0.0, _other(self.representation))

    def shift_family(self, velocity):
        return gaussian_shift_family(self.waist, velocity, self.center)


class TabulatedMeter(MeterState):
    """Amplitude sampled on a uniform :class:`Grid`, cubic-spline interpolated.

    Position-space amplitudes must be real. Amplitudes are zero off the grid.
    """

    def __init__(self, grid: Grid, values, representation: str = POSITION,
                 normalize: bool = False):
        values = np.asarray(values)
        if values.shape != (grid.n,):
            raise ValueError("values must match the grid size")
        if representation == POSITION and np.iscomplexobj(values):
            if np.max(np.abs(values.imag)) > 1e-12 * np.max(np.abs(values)):
                raise ValueError("position-space meter amplitudes must be real")
            values = values.real
        if representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {representation!r}")
        self.grid = grid
        self.representation = representation
        norm = self._grid_norm(values)
        if normalize:
            values = values / np.sqrt(norm)
        elif abs(norm - 1) > NORM_TOL:
            raise ValueError(f"meter is not normalised: integral |psi|^2 = {norm!r}")
        self.values = values

    def __repr__(self):
        return f"TabulatedMeter({self.grid!r}, representation={self.representation!r})"

    def _grid_norm(self, values):
        p = np.abs(values) ** 2
        return float(self.grid.spacing * (p.sum() - 0.5 * (p[0] + p[-1])))

    @cached_property
    def _splines(self):
        x = self.grid.values
        re = CubicSpline(x, np.real(self.values))
        im = CubicSpline(x, np.imag(self.values)) if np.iscomplexobj(self.values) else None
        return re, im

    def _eval(self, s, nu):
        s = np.asarray(s, dtype=float)
        re, im = self._splines
        inside = (s >= self.grid.lo) & (s <= self.grid.hi)
        out = re(s, nu)
        if im is not None:
            out = out + 1j * im(s, nu)
        return np.where(inside, out, 0.0)

    def amplitude(self, s):
        return self._eval(s, 0)

    def d_amplitude(self, s):
        return self._eval(s, 1)

    @cached_property
    def _support(self):
        p = np.abs(self.values) ** 2
        idx = np.nonzero(p > 1e-30 * p.max())[0]
        x = self.grid.values
        lo = x[max(idx[0] - 2, 0)]
        hi = x[min(idx[-1] + 2, self.grid.n - 1)]
        return float(lo), float(hi)

    def support(self):
        return self._support

    def _moment(self, f):
        lo, hi = self.support()
        return integrate(lambda s: f(s) * self.prob(s), lo, hi, tol=1e-13).value

    @cached_property
    def width(self):
        mean = self._moment(lambda s: s)
        return float(np.sqrt(self._moment(lambda s: (s - mean) ** 2)))

    def overlap(self, d):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        lo, hi = self.support()
        out = []
        for di in d.ravel():
            if self.representation == POSITION:
                f = lambda s: np.conj(self.amplitude(s)) * self.amplitude(s - di)
                a, b = min(lo, lo + di), max(hi, hi + di)
            else:
                f = lambda s: self.prob(s) * np.exp(-1j * s * di)
                a, b = lo, hi
            re = integrate(lambda s: np.real(f(s)), a, b, tol=1e-14).value
            im = integrate(lambda s: np.imag(f(s)), a, b, tol=1e-14).value
            out.append(re + 1j * im)
        return np.asarray(out).reshape(d.shape)

    def d_overlap(self, d):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        lo, hi = self.support()
        out = []
        for di in d.ravel():
            if self.representation == POSITION:
                f = lambda s: -np.conj(self.amplitude(s)) * self.d_amplitude(s - di)
                a, b = min(lo, lo + di), max(hi, hi + di)
            else:
                f = lambda s: -1j * s * self.prob(s) * np.exp(-1j * s * di)
                a, b = lo, hi
            re = integrate(lambda s: np.real(f(s)), a, b, tol=1e-14).value
            im = integrate(lambda s: np.imag(f(s)), a, b, tol=1e-14).value
            out.append(re + 1j * im)
        return np.asarray(out).reshape(d.shape)

    def fourier(self):
        if self.representation == POSITION:
            k_grid, psi_k = fourier_transform(self.grid, self.values)
            return TabulatedMeter(k_grid, psi_k, MOMENTUM, normalize=True)
        x_lo = -np.pi / self.grid.spacing
        x_grid, psi_x = inverse_fourier_transform(self.grid, self.values, x_lo)
        return TabulatedMeter(x_grid, np.real(psi_x), POSITION, normalize=True)

    @classmethod
    def from_function(cls, f, grid: Grid, representation: str = POSITION,
                      normalize: bool = True):
        return cls(grid, f(grid.values), representation, normalize=normalize)
