"""Monte Carlo sampling, maximum-likelihood estimation of g and Cramer-Rao checks.

Random draws come from numpy's PCG64 generator seeded through a
``SeedSequence``; repeat ``r`` of an experiment seeded with ``s`` uses the
entropy ``(s, r)`` so repeats are independent and order-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .density import ParametricDensity
from .detector import PixelConfig, PixelMass, pixelate
from .fisher import fisher_continuous, fisher_discrete
from .numerics import NumericalError

RNG_ALGORITHM = "numpy.PCG64 via SeedSequence"
CDF_POINTS = 1 << 14
MLE_XTOL = 1e-10
BRACKET_SIGMAS = 10.0


class EstimationError(NumericalError):
    pass


def generator(seed: int, *stream: int) -> np.random.Generator:
    """Seeded PCG64 generator; ``stream`` selects an independent substream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class PixelFamily:
    """A density seen through pixels: ``g -> PixelMass``."""

    density: ParametricDensity
    pixels: PixelConfig

    def __call__(self, g: float) -> PixelMass:
        return pixelate(self.density, self.pixels, g)

    @property
    def label(self):
        return f"pixel[{self.density.label}, r={self.pixels.r_s:g}]"


Model = Union[ParametricDensity, PixelFamily]


@dataclass(frozen=True)
class SampleSet:
    draws: np.ndarray
    g_true: float
    seed: int
    model: str
    discrete: bool = False
    stream: tuple = ()
    algorithm: str = RNG_ALGORITHM

    @property
    def size(self) -> int:
        return int(self.draws.size)


@dataclass(frozen=True)
class MleResult:
    g_hat: float
    log_likelihood: float
    iterations: int
    converged: bool
    score: float = math.nan
    bracket: tuple = ()


class InverseCdf:
    """Tabulated inverse cumulative distribution of a continuous density at fixed g."""

    def __init__(self, P: ParametricDensity, g: float, points: int = CDF_POINTS):
        lo, hi = P.domain(g)
        x = np.linspace(lo, hi, points)
        p = np.asarray(P(x, g), dtype=float)
        scale = float(np.max(np.abs(p)))
        if np.any(p < -1e-12 * scale):
            raise EstimationError("non-monotone CDF: density takes negative values")
        p = np.clip(p, 0.0, None)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
        if not cdf[-1] > 0:
            raise EstimationError("density has no mass on its domain")
        self.x = x
        self.cdf = cdf / cdf[-1]

    def __call__(self, u):
        return np.interp(u, self.cdf, self.x)


def _categorical(m: PixelMass, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(m.probs)
    idx = np.searchsorted(cum, u * cum[-1], side="right")
    return m.labels[np.minimum(idx, m.labels.size - 1)]


def sample(model, g: float, N: int, seed: int, stream: Sequence[int] = (),
           sampler: Optional[InverseCdf] = None) -> SampleSet:
    """Draw ``N`` outcomes of ``model`` at ``g``.

    ``model`` may be a continuous density, a :class:`PixelMass` (fixed
    distribution) or a :class:`PixelFamily`. Identical arguments give
    bit-identical draws.
    """
    if N < 1:
        raise ValueError("need at least one draw")
    u = generator(seed, *stream).random(int(N))
    if isinstance(model, PixelFamily):
        model_mass, label = model(g), model.label
    elif isinstance(model, PixelMass):
        model_mass, label = model, "pixel-mass"
    else:
        model_mass = None
    if model_mass is not None:
        return SampleSet(_categorical(model_mass, u), float(g), int(seed), label, True, tuple(stream))
    inv = sampler or InverseCdf(model, g)
    return SampleSet(inv(u), float(g), int(seed), model.label, False, tuple(stream))


def _continuous_loglik(P: ParametricDensity, draws: np.ndarray):
    def loglik(g):
        p = P(draws, g)
        if np.any(p <= 0):
            return -math.inf
        return float(np.sum(np.log(p)))

    def score(g):
        if P.d_dg is None:
            return math.nan
        return float(np.sum(P.d_dg(draws, g) / P(draws, g)))

    return loglik, score


def _pixel_loglik(family: PixelFamily, draws: np.ndarray):
    labels, counts = np.unique(draws, return_counts=True)

    def probs(g):
        m = family(g)
        lookup = dict(zip(m.labels.tolist(), range(m.labels.size)))
        idx = np.array([lookup.get(int(n), -1) for n in labels])
        return m, idx

    def loglik(g):
        m, idx = probs(g)
        if np.any(idx < 0):
            return -math.inf
        p = m.probs[idx]
        if np.any(p <= 0):
            return -math.inf
        return float(np.sum(counts * np.log(p)))

    def score(g):
        m, idx = probs(g)
        if np.any(idx < 0):
            return math.nan
        return float(np.sum(counts * m.d_dg[idx] / m.probs[idx]))

    return loglik, score


def _polish(score, g0: float, lo: float, hi: float, xtol: float) -> float:
    """Refine a Brent optimum by locating the score root next to it.

    Bounded Brent stops at roughly ``sqrt(eps) |g|``; a sign change of the
    score around ``g0`` lets a bracketed root search reach ``xtol`` in g.
    """
    half = max(1e-6 * (hi - lo), 100 * xtol)
    a, b = max(lo, g0 - half), min(hi, g0 + half)
    sa, sb = score(a), score(b)
    if not (np.isfinite(sa) and np.isfinite(sb)) or sa * sb > 0:
        return g0
    if sa == 0:
        return a
    if sb == 0:
        return b
    return float(brentq(score, a, b, xtol=min(xtol, 1e-12), rtol=4 * np.finfo(float).eps))


def default_bracket(g_true: float, N: int, fisher: float) -> tuple:
    half = BRACKET_SIGMAS / math.sqrt(N * fisher)
    return g_true - half, g_true + half


def mle(samples: SampleSet, model: Model, bracket: Optional[tuple] = None,
        fisher: Optional[float] = None, xtol: float = MLE_XTOL) -> MleResult:
    """Maximise the log-likelihood of ``samples`` over ``g`` within ``bracket``.

    Bounded Brent search (golden section with parabolic steps). Without an
    explicit bracket, ``g_true +- 10 / sqrt(N F)`` is used, which requires
    ``fisher``. A flat likelihood gives ``converged=False``.
    """
    if isinstance(model, PixelFamily):
        loglik, score = _pixel_loglik(model, samples.draws)
    else:
        loglik, score = _continuous_loglik(model, samples.draws)
    if bracket is None:
        if fisher is None or not fisher > 0:
            raise ValueError("need a bracket or a positive Fisher information")
        bracket = default_bracket(samples.g_true, samples.size, fisher)
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")

    probe = np.linspace(lo, hi, 9)
    values = np.array([loglik(g) for g in probe])
    finite = np.isfinite(values)
    if not finite.any():
        raise EstimationError("log-likelihood is -inf throughout the bracket")
    penalty = float(np.min(values[finite])) - 1e6 * (1 + abs(float(np.min(values[finite]))))

    def objective(g):
        v = loglik(g)
        return -(v if np.isfinite(v) else penalty)

    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options=dict(xatol=xtol, maxiter=500))
    g_hat = _polish(score, float(res.x), lo, hi, xtol)
    ll = loglik(g_hat)
    if not np.isfinite(ll):
        g_hat, ll = float(res.x), -float(res.fun)
    flat = float(np.ptp(values[finite])) <= 1e-12 * (1 + abs(ll)) and finite.all()
    on_edge = min(g_hat - lo, hi - g_hat) <= 10 * xtol
    sc = score(g_hat)
    # stationarity measured against the Fisher scale of the sample
    scale = samples.size * (fisher if fisher else 1.0)
    stationary = not np.isfinite(sc) or abs(sc) <= 1e-6 * (1 + scale)
    converged = bool(res.success and not flat and not on_edge and stationary)
    return MleResult(g_hat, ll, int(res.nfev), converged, sc, (lo, hi))


@dataclass(frozen=True)
class CrReport:
    estimates: np.ndarray
    variance: Optional[float]
    bound: float
    ratio: Optional[float]
    fisher: float
    trials: int
    repeats: int
    source_bound: Optional[float] = None
    unconverged: int = 0
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = dict(trials=self.trials, repeats=self.repeats, fisher=self.fisher, bound=self.bound,
                   mean=float(np.mean(self.estimates)), unconverged=self.unconverged)
        if self.variance is not None:
            out.update(variance=self.variance, ratio=self.ratio)
        if self.source_bound is not None:
            out["source_bound"] = self.source_bound
        return out


def model_information(model: Model, g: float) -> float:
    if isinstance(model, PixelFamily):
        return fisher_discrete(model(g)).value
    return fisher_continuous(model, g).value


def cr_attainment(model: Model, g_true: float, N: int, M: int, seed: int,
                  q: Optional[float] = None, fisher: Optional[float] = None,
                  bracket: Optional[tuple] = None,
                  map_fn: Callable = map) -> CrReport:
    """Run ``M`` independent N-draw MLE experiments and compare with ``1 / (N F)``.

    ``q`` (postselection probability) adds the source-rate bound ``1 / (q N F)``:
    of ``N`` prepared systems only about ``q N`` reach the conditioned density.
    ``map_fn`` may be a parallel map; results do not depend on evaluation order.
    """
    if N < 1 or M < 1:
        raise ValueError("trials and repeats must be positive")
    F = model_information(model, g_true) if fisher is None else float(fisher)
    if not F > 0:
        raise EstimationError("Fisher information vanishes at the true parameter")
    sampler = None if isinstance(model, PixelFamily) else InverseCdf(model, g_true)

    def one(r):
        s = sample(model, g_true, N, seed, stream=(r,), sampler=sampler)
        return mle(s, model, bracket=bracket, fisher=F)

    results = list(map_fn(one, range(M)))
    est = np.array([r.g_hat for r in results])
    bound = 1.0 / (N * F)
    variance = float(np.var(est, ddof=1)) if M >= 2 else None
    ratio = variance / bound if variance is not None else None
    source = 1.0 / (q * N * F) if q else None
    return CrReport(est, variance, bound, ratio, F, int(N), int(M), source,
                    sum(not r.converged for r in results),
                    dict(seed=int(seed), rng=RNG_ALGORITHM, g_true=float(g_true)))
