"""Fisher information functionals, Cramer-Rao bounds and strategy ratios.

Closed forms for Gaussian meters live next to the generic quadrature pipeline
so that tests can check one against the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density import ParametricDensity
from .detector import (NoiseKernel, PixelConfig, PixelMass, apply_jitter, centroid,
                       mu_for_alignment, pixelate)
from .meter import POSITION, MeterState
from .model import (FAIL, PASS, SystemEnsemble, aav_density, branch_density,
                    exact_wva_density, lambda_star, postselection_probability,
                    standard_density, weak_value)
from .numerics import NumericalError, central_derivative, erf_diff, integrate

DENSITY_FLOOR = 1e-15
SKIPPED_MASS_LIMIT = 1e-9
COMPLETENESS_TOL = 1e-8
FISHER_RTOL = 1e-10


@dataclass(frozen=True)
class FisherReport:
    value: float
    abs_error_estimate: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0:
            if self.value > -1e-12:
                object.__setattr__(self, "value", 0.0)
            else:
                raise NumericalError(f"negative Fisher information {self.value!r}")

    @property
    def flagged(self) -> bool:
        return bool(self.diagnostics.get("flagged", False))

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class RatioReport:
    wva_info: float
    std_info: float
    q: float
    corrected_ratio: float
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(q=self.q, wva_info=self.wva_info, std_info=self.std_info,
                    ratio=self.corrected_ratio)


def _derivative(P: ParametricDensity):
    if P.d_dg is not None:
        return P.d_dg
    return lambda s, g: central_derivative(lambda gg: P(s, gg), g)


def _information_integral(P: ParametricDensity, g: float, floor: float = DENSITY_FLOOR,
                          rtol: Optional[float] = None):
    rtol = FISHER_RTOL if rtol is None else rtol
    lo, hi = P.domain(g)
    dP = _derivative(P)
    probe = np.linspace(lo, hi, 2049)
    p_probe = P(probe, g)
    cutoff = floor * float(np.max(p_probe))
    hits = [0]

    def integrand(s):
        p = P(s, g)
        dp = dP(s, g)
        low = p <= cutoff
        hits[0] += int(np.count_nonzero(low))
        return np.where(low, 0.0, dp * dp / np.where(low, 1.0, p))

    res = integrate(integrand, lo, hi, tol=1e-300, rtol=rtol)
    spacing = probe[1] - probe[0]
    skipped = float(np.sum(np.where(p_probe <= cutoff, np.abs(p_probe), 0.0)) * spacing)
    diagnostics = dict(discarded_mass=skipped, floor_hits=hits[0], grid_size=res.evaluations,
                       converged=res.converged,
                       flagged=skipped > SKIPPED_MASS_LIMIT or not res.converged)
    return res, diagnostics


def fisher_continuous(P: ParametricDensity, g: float, rtol: Optional[float] = None) -> FisherReport:
    """``integral (d_g P)^2 / P ds`` by adaptive quadrature over ``P.domain(g)``.

    ``rtol`` defaults to the module setting :data:`FISHER_RTOL`.
    """
    res, diag = _information_integral(P, g, rtol=rtol)
    return FisherReport(res.value, res.abs_error_estimate, diag)


def fisher_discrete(m: PixelMass) -> FisherReport:
    """``sum_n (d_g Pr(n))^2 / Pr(n)`` over pixels holding at least ``1e-15``."""
    if m.d_dg is None:
        raise NumericalError("pixel mass carries no g-derivative")
    keep = m.probs >= DENSITY_FLOOR
    value = float(np.sum(m.d_dg[keep] ** 2 / m.probs[keep]))
    skipped = float(np.sum(m.probs[~keep]))
    return FisherReport(value, 0.0, dict(discarded_mass=skipped, floor_hits=int((~keep).sum()),
                                         grid_size=int(m.probs.size),
                                         flagged=skipped > SKIPPED_MASS_LIMIT))


def _mass(P: ParametricDensity, g: float) -> float:
    if "mass" in P.meta:
        return P.meta["mass"](g)
    lo, hi = P.domain(g)
    return integrate(lambda s: P(s, g), lo, hi, tol=1e-13).value


def fisher_joint(pass_density: ParametricDensity, fail_density: ParametricDensity,
                 g: float, step: float = 1e-3) -> FisherReport:
    """Information in the joint (branch, outcome) distribution from unnormalised branches.

    Branch masses must sum to one at ``g`` and ``g +- step``.
    """
    for gg in (g - step, g, g + step):
        total = _mass(pass_density, gg) + _mass(fail_density, gg)
        if abs(total - 1) > COMPLETENESS_TOL:
            raise NumericalError(f"branch masses sum to {total!r} at g = {gg!r}")
    value = err = 0.0
    diag = {}
    for name, P in (("pass", pass_density), ("fail", fail_density)):
        if _mass(P, g) < 1e-300:
            diag[name] = "empty"
            continue
        res, d = _information_integral(P, g)
        value += res.value
        err += res.abs_error_estimate
        diag[name] = d
    return FisherReport(value, err, diag)


def joint_cross_term(sys: SystemEnsemble, meter: MeterState, g: float) -> float:
    """Branch-summed interference term ``4 sum_{i != j} e_i e_j integral d_g psi_i d_g psi_j``.

    For real meter amplitudes the pass and fail coefficients cancel pairwise,
    which is why the joint information reduces to the un-postselected value.
    """
    m = meter.in_representation(POSITION)
    lam = sys.eigenvalues
    coefs = [sys.branch_amplitudes] + list(sys.pre[None, :] * np.conj(sys.fail_states()))
    pair = sum(np.conj(a)[:, None] * a[None, :] for a in coefs)
    np.fill_diagonal(pair, 0.0)
    lo, hi = m.support()
    shift = np.max(np.abs(lam)) * abs(g)

    def integrand(s):
        d = -lam * m.d_amplitude(np.asarray(s)[..., None] - lam * g)
        return 4 * np.real(np.einsum("...i,ij,...j->...", d, pair, d))

    return integrate(integrand, lo - shift, hi + shift, tol=1e-14).value


def shifted_copy_cross_integral(meter: MeterState, g: float, lam=(1.0, -1.0)) -> float:
    """``integral d_g psi(x - l1 g) d_g psi(x - l2 g) dx`` for one pair of copies."""
    m = meter.in_representation(POSITION)
    l1, l2 = lam
    lo, hi = m.support()
    shift = max(abs(l1), abs(l2)) * abs(g)
    f = lambda s: l1 * l2 * np.real(m.d_amplitude(s - l1 * g) * m.d_amplitude(s - l2 * g))
    return integrate(f, lo - shift, hi + shift, tol=1e-14).value


def cramer_rao_bound(F, N: int) -> float:
    """``1 / (N F)``; infinite when the information vanishes."""
    value = float(F.value if isinstance(F, FisherReport) else F)
    if N < 1:
        raise ValueError("need at least one trial")
    if value <= 0:
        return math.inf
    return 1.0 / (N * value)


def ratio_real_exact(G, theta_i, theta_f):
    """Corrected WVA/standard information ratio, real qubit family, Gaussian meter.

    With ``x = 1 + cos ti cos tf`` and ``y = sin ti sin tf`` this is
    ``(x - e^{-G/2} y + G x y / (y + e^{G/2} x)) / 2``; the cosecants are
    cleared so ``sin = 0`` needs no special casing, and ``x = y = 0`` (the
    orthogonal, empty-branch corner) takes its limit 0. Sums and differences
    are rewritten in half-angle form to stay accurate near orthogonality.
    """
    G, ti, tf = np.broadcast_arrays(np.asarray(G, float), np.asarray(theta_i, float),
                                    np.asarray(theta_f, float))
    y = np.sin(tf) * np.sin(ti)
    c_sum = np.cos((ti + tf) / 2) ** 2
    c_diff = np.cos((tf - ti) / 2) ** 2
    x = c_sum + c_diff
    lead = 2 * c_sum - np.expm1(-G / 2) * y
    with np.errstate(over="ignore"):
        # an infinite denominator correctly sends the last term to zero
        denom = 2 * c_diff + np.expm1(G / 2) * x
    tiny = np.abs(denom) < 1e-300
    last = np.where(tiny, 0.0, G * x * y / np.where(tiny, 1.0, denom))
    out = 0.5 * (lead + last)
    return float(out) if out.ndim == 0 else out


def _two_sinh_minus(x):
    """``2 (sinh x - x)`` without cancellation at small ``x``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    xs = np.where(small, x, 0.0)
    series = np.zeros_like(xs)
    term = xs ** 3 / 6
    for k in range(1, 12):
        series = series + term
        term = term * xs * xs / ((2 * k + 2) * (2 * k + 3))
    return np.where(small, 2 * series, 2 * (np.sinh(x) - x))


def ratio_imag_exact(G, dphi):
    """Corrected ratio for the imaginary qubit family (momentum detection).

    Evaluates ``(2 e^{G/2} G cos d + 2 e^G - cos 2d - 1) / (4 e^{G/2} cos d + 4 e^G)``.
    With ``c = cos d`` and ``e = e^{-G/2}`` it equals
    ``[(1 + c)(1 - c e^2) - c e (2 sinh(G/2) - G)] / (2 (1 + c e))``, the form
    used here because every piece is then free of cancellation.
    """
    G, d = np.broadcast_arrays(np.asarray(G, float), np.asarray(dphi, float))
    c = np.cos(d)
    e = np.exp(-G / 2)
    one_plus_c = 2 * np.cos(d / 2) ** 2
    one_minus_ce2 = 2 * np.sin(d / 2) ** 2 - c * np.expm1(-G)
    num = one_plus_c * one_minus_ce2 - c * e * _two_sinh_minus(G / 2)
    den = 2 * (one_plus_c + c * np.expm1(-G / 2))
    out = num / den
    return float(out) if out.ndim == 0 else out


def alpha(R, h, cutoff: float = 1e-16):
    """Fraction of Gaussian Fisher information surviving pixels of width ``R`` waists."""
    R = float(R)
    h = float(h)
    if R <= 0:
        raise ValueError("R must be positive")
    reach = int(np.ceil(40.0 / R)) + 2
    n = np.arange(-reach, reach + 1) + int(np.round(h))
    gp = (h - n + 0.5) / np.sqrt(2)
    gm = (h - n - 0.5) / np.sqrt(2)
    mass = erf_diff(R * gm, R * gp)
    dens = np.exp(-(R * gp) ** 2) - np.exp(-(R * gm) ** 2)
    ok = mass > 0
    terms = np.zeros_like(mass)
    terms[ok] = dens[ok] ** 2 / (np.pi * mass[ok])
    return float(np.sum(terms[terms >= cutoff]))


def beta(width: float, jitter: float) -> float:
    """Jitter attenuation ``1 / (1 + J^2 / width^2)`` for a Gaussian meter and kernel."""
    if width <= 0:
        raise ValueError("width must be positive")
    return 1.0 / (1.0 + (jitter / width) ** 2)


def gaussian_pixel_fisher(width: float, r_s: float, h: float, velocity: float = 1.0) -> float:
    """Information of a pixelated Gaussian shift family, ``velocity^2 alpha(r/width, h) / width^2``."""
    return velocity ** 2 * alpha(r_s / width, h) / width ** 2


@dataclass(frozen=True)
class DetectorModel:
    """Imperfections applied to one arm: jitter first, then pixelation.

    With ``alignment`` set, the pixel grid is displaced so the arm's centroid
    at the working point sits at that folded alignment; ``pixels.mu`` is then
    ignored.
    """

    jitter: Optional[NoiseKernel] = None
    pixels: Optional[PixelConfig] = None
    alignment: Optional[float] = None


IDEAL = DetectorModel()


def information(P: ParametricDensity, g: float, detector: DetectorModel = IDEAL) -> FisherReport:
    """Fisher information of ``P`` as seen through ``detector``."""
    if detector.jitter is not None:
        P = apply_jitter(P, detector.jitter)
    if detector.pixels is None:
        return fisher_continuous(P, g)
    cfg = detector.pixels
    if detector.alignment is not None:
        c = centroid(P, g)
        cfg = PixelConfig(cfg.r_s, mu_for_alignment(c, detector.alignment, cfg.r_s), cfg.n_range)
    return fisher_discrete(pixelate(P, cfg, g))


def corrected_ratio(sys: SystemEnsemble, meter: MeterState, g: float,
                    wva_detector: DetectorModel = IDEAL, std_detector: DetectorModel = IDEAL,
                    mode: str = "exact", std_meter: Optional[MeterState] = None,
                    filtered: bool = True) -> RatioReport:
    """``q F[WVA arm] / F[standard arm]`` through arbitrary detector models.

    The WVA arm is detected in ``meter``'s representation; the standard arm
    is always detected in position (``std_meter`` defaults to ``meter``).
    ``mode="aav"`` uses the first-order shift family with ``q = |<f|i>|^2``.
    """
    if mode == "exact":
        P_wva = exact_wva_density(sys, meter)
        q = postselection_probability(sys, meter, g)
    elif mode == "aav":
        which = "real" if meter.representation == POSITION else "imaginary"
        P_wva = aav_density(sys, meter, which)
        q = abs(sys.overlap) ** 2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    P_std = standard_density(sys, std_meter or meter, filtered=filtered)
    F_wva = information(P_wva, g, wva_detector)
    F_std = information(P_std, g, std_detector)
    ratio = q * F_wva.value / F_std.value
    return RatioReport(F_wva.value, F_std.value, q, ratio,
                       dict(wva=F_wva.diagnostics, std=F_std.diagnostics, mode=mode))


def aav_ratio(sys: SystemEnsemble) -> float:
    """Ideal-detector AAV prediction ``|<f|A|i>|^2 / lambda*^2``."""
    amp = np.vdot(sys.post, sys.eigenvalues * sys.pre)
    return float(abs(amp) ** 2 / lambda_star(sys.eigenvalues) ** 2)


def joint_information_aav(sys: SystemEnsemble, base_information: float) -> float:
    """``sum_f q_f |A_w^f|^2 F_s`` over the postselection basis (AAV regime)."""
    total = 0.0
    for post in [sys.post] + list(sys.fail_states()):
        s = sys.with_post(post)
        q = abs(s.overlap) ** 2
        if q > 1e-28:
            total += q * abs(weak_value(s)) ** 2
    return total * base_information


def exact_joint_information(sys: SystemEnsemble, meter: MeterState, g: float) -> FisherReport:
    return fisher_joint(branch_density(sys, meter, PASS), branch_density(sys, meter, FAIL), g)
