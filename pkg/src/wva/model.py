"""System ensembles, weak values and the meter densities of both strategies."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .density import GaussianTerms, ParametricDensity
from .meter import MOMENTUM, POSITION, GaussianMeter, MeterState

ORTHOGONALITY_GUARD = 1e-14
EMPTY_BRANCH = 1e-14

PASS = "pass"
FAIL = "fail"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemEnsemble:
    """Eigenvalues of the control observable with pre- and postselection amplitudes.

    Amplitudes are expressed in the eigenbasis of the observable, so
    ``<f|i> = sum conj(post_j) pre_j``.
    """

    eigenvalues: np.ndarray
    pre: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        pre = np.asarray(self.pre, dtype=complex)
        post = np.asarray(self.post, dtype=complex)
        if lam.ndim != 1 or lam.size < 2:
            raise ModelError("need at least two eigenvalues")
        if pre.shape != lam.shape or post.shape != lam.shape:
            raise ModelError("amplitude arrays must match the number of eigenvalues")
        for name, amp in (("pre", pre), ("post", post)):
            norm = np.sum(np.abs(amp) ** 2)
            if abs(norm - 1) > 1e-12:
                raise ModelError(f"{name}-selection amplitudes not normalised (sum |c|^2 = {norm!r})")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    @property
    def overlap(self) -> complex:
        return complex(np.vdot(self.post, self.pre))

    @property
    def branch_amplitudes(self) -> np.ndarray:
        """``c_j conj(c'_j)``: weight of the shifted meter copy ``j`` in the pass branch."""
        return self.pre * np.conj(self.post)

    def fail_states(self) -> np.ndarray:
        """Orthonormal basis (rows) of the complement of the postselected state."""
        if self.dimension == 2:
            a, b = self.post
            return np.array([[-np.conj(b), np.conj(a)]])
        # rows of vh beyond the first span the orthogonal complement
        _, _, vh = np.linalg.svd(self.post.conj()[None, :])
        return vh[1:].conj()

    def with_post(self, post) -> "SystemEnsemble":
        return replace(self, post=np.asarray(post, dtype=complex))

    @property
    def mean_square(self) -> float:
        return float(np.sum(np.abs(self.pre) ** 2 * self.eigenvalues ** 2))


@dataclass(frozen=True)
class QubitAngles:
    """Qubit pre-/postselection parameterisations with A = diag(+1, -1).

    ``family="real"``: ``|i> = cos(ti/2)|+> + sin(ti/2)|->``, likewise ``|f>``.
    ``family="imaginary"``: ``|i> = (|+> + e^{i phi_i}|->)/sqrt(2)``, likewise ``|f>``.
    """

    family: str
    theta_i: float = 0.0
    theta_f: float = 0.0
    phi_i: float = 0.0
    phi_f: float = 0.0

    def __post_init__(self):
        if self.family not in ("real", "imaginary"):
            raise ModelError(f"unknown qubit family {self.family!r}")

    @classmethod
    def real(cls, theta_i, theta_f):
        return cls("real", theta_i=theta_i, theta_f=theta_f)

    @classmethod
    def imaginary(cls, dphi, phi_f=0.0):
        return cls("imaginary", phi_i=dphi + phi_f, phi_f=phi_f)

    @property
    def dphi(self):
        return self.phi_i - self.phi_f

    def ensemble(self) -> SystemEnsemble:
        lam = np.array([1.0, -1.0])
        if self.family == "real":
            pre = [np.cos(self.theta_i / 2), np.sin(self.theta_i / 2)]
            post = [np.cos(self.theta_f / 2), np.sin(self.theta_f / 2)]
        else:
            pre = np.array([1, np.exp(1j * self.phi_i)]) / np.sqrt(2)
            post = np.array([1, np.exp(1j * self.phi_f)]) / np.sqrt(2)
        return SystemEnsemble(lam, pre, post)


@dataclass(frozen=True)
class InteractionConfig:
    g: float
    width_x: float

    def __post_init__(self):
        if self.width_x <= 0:
            raise ModelError("meter waist must be positive")

    @property
    def strength(self) -> float:
        return self.g ** 2 / self.width_x ** 2

    @property
    def width_k(self) -> float:
        return 1.0 / (2 * self.width_x)

    @classmethod
    def from_strength(cls, G: float, width_x: float = 1.0) -> "InteractionConfig":
        if G < 0:
            raise ModelError("measurement strength must be nonnegative")
        return cls(width_x * np.sqrt(G), width_x)


def lambda_star(eigenvalues) -> float:
    """Eigenvalue with the largest square; ties go to the positive one."""
    lam = np.asarray(eigenvalues, dtype=float)
    sq = lam ** 2
    best = lam[np.isclose(sq, sq.max(), rtol=0, atol=1e-15 * max(sq.max(), 1))]
    return float(best.max())


def weak_value(sys: SystemEnsemble) -> complex:
    """``<f|A|i> / <f|i>``."""
    denom = sys.overlap
    if abs(denom) <= ORTHOGONALITY_GUARD:
        raise ModelError("weak value undefined: pre- and postselected states are orthogonal")
    return complex(np.vdot(sys.post, sys.eigenvalues * sys.pre)) / denom


def _branch_coefficients(sys: SystemEnsemble, branch: str) -> np.ndarray:
    if branch == PASS:
        return sys.branch_amplitudes[None, :]
    if branch == FAIL:
        return sys.pre[None, :] * np.conj(sys.fail_states())
    raise ModelError(f"unknown branch {branch!r}")


def _branch_mass(coefs, lam, meter: MeterState, g):
    d = (lam[None, :] - lam[:, None]) * g
    over = meter.overlap(d)
    total = 0.0
    for a in coefs:
        total += np.real(np.sum(np.conj(a)[:, None] * a[None, :] * over))
    return float(total)


def _branch_mass_derivative(coefs, lam, meter: MeterState, g):
    dl = lam[None, :] - lam[:, None]
    dover = meter.d_overlap(dl * g) * dl
    total = 0.0
    for a in coefs:
        total += np.real(np.sum(np.conj(a)[:, None] * a[None, :] * dover))
    return float(total)


def postselection_probability(sys: SystemEnsemble, meter: MeterState, g: float,
                              branch: str = PASS) -> float:
    """Probability that the final system measurement lands in ``branch``."""
    q = _branch_mass(_branch_coefficients(sys, branch), sys.eigenvalues, meter, g)
    return min(max(q, 0.0), 1.0)


def _gaussian_branch_terms(coefs, lam, meter: GaussianMeter) -> GaussianTerms:
    i, j = np.meshgrid(np.arange(lam.size), np.arange(lam.size), indexing="ij")
    i, j = i.ravel(), j.ravel()
    dl = lam[j] - lam[i]
    weights = sum(np.conj(a)[i] * a[j] for a in coefs)
    w = meter.waist
    if meter.representation == POSITION:
        # psi(s - a) psi(s - b) = exp(-(a-b)^2 / 8w^2) N(s; (a+b)/2, w^2)
        return GaussianTerms(coef=weights, kappa=dl ** 2 / (8 * w * w), tau=np.zeros_like(dl),
                             beta=(lam[i] + lam[j]) / 2 + 0j, offset=np.full(dl.shape, meter.center + 0j),
                             var=np.full(dl.shape, w * w))
    # |psi~|^2 exp(-i dl g k) written as a Gaussian with complex mean
    m0 = meter.center
    return GaussianTerms(coef=weights, kappa=dl ** 2 * w * w / 2, tau=-dl * m0,
                         beta=-1j * dl * w * w, offset=np.full(dl.shape, m0 + 0j),
                         var=np.full(dl.shape, w * w))


def branch_density(sys: SystemEnsemble, meter: MeterState, branch: str = PASS) -> ParametricDensity:
    """Unnormalised exact density of one branch; its mass is the branch probability."""
    coefs = _branch_coefficients(sys, branch)
    lam = sys.eigenvalues
    rep = meter.representation

    def mass(g):
        return _branch_mass(coefs, lam, meter, g)

    def d_mass(g):
        return _branch_mass_derivative(coefs, lam, meter, g)

    meta = dict(mass=mass, d_mass=d_mass, representation=rep, branch=branch)
    # pointwise evaluation goes through amplitudes (no cancellation at nodes);
    # the Gaussian term sum is kept for closed-form jitter and pixel masses
    terms = _gaussian_branch_terms(coefs, lam, meter) if isinstance(meter, GaussianMeter) else None
    lo, hi = meter.support()

    if rep == POSITION:
        def amp(s, g):
            s = np.asarray(s, dtype=float)[..., None]
            shifted = meter.amplitude(s - lam * g)
            return [np.sum(a * shifted, axis=-1) for a in coefs]

        def density(s, g):
            return sum(np.abs(x) ** 2 for x in amp(s, g))

        def d_dg(s, g):
            s = np.asarray(s, dtype=float)[..., None]
            shifted = meter.amplitude(s - lam * g)
            dshift = -lam * meter.d_amplitude(s - lam * g)
            out = 0.0
            for a in coefs:
                out = out + 2 * np.real(np.conj(np.sum(a * shifted, axis=-1)) * np.sum(a * dshift, axis=-1))
            return out

        def domain(g):
            shifts = lam * g
            return lo + shifts.min(), hi + shifts.max()
    else:
        def phase_sum(s, g):
            s = np.asarray(s, dtype=float)[..., None]
            ph = np.exp(-1j * lam * g * s)
            return s, ph

        def density(s, g):
            s2, ph = phase_sum(s, g)
            mod = sum(np.abs(np.sum(a * ph, axis=-1)) ** 2 for a in coefs)
            return meter.prob(s) * mod

        def d_dg(s, g):
            s2, ph = phase_sum(s, g)
            out = 0.0
            for a in coefs:
                amp_ = np.sum(a * ph, axis=-1)
                damp = np.sum(a * ph * (-1j * lam * s2), axis=-1)
                out = out + 2 * np.real(np.conj(amp_) * damp)
            return meter.prob(s) * out

        def domain(g):
            return lo, hi

    return ParametricDensity(density, domain, d_dg, terms=terms, normalized=False,
                             label=f"exact-{branch}", meta=meta)


def normalize(pbar: ParametricDensity, floor: float = EMPTY_BRANCH) -> ParametricDensity:
    """Divide a branch density by its (g-dependent) mass, recomputed at every g."""
    mass, d_mass = pbar.meta["mass"], pbar.meta["d_mass"]

    def checked_mass(g):
        q = mass(g)
        if q < floor:
            raise ModelError(f"empty branch: probability {q:.3g} at g = {g!r}")
        return q

    def density(s, g):
        return pbar.density(s, g) / checked_mass(g)

    def d_dg(s, g):
        q = checked_mass(g)
        return pbar.d_dg(s, g) / q - pbar.density(s, g) * d_mass(g) / q ** 2

    meta = dict(pbar.meta, unnormalized=pbar)
    return ParametricDensity(density, pbar.domain, d_dg, normalized=True,
                             label=pbar.label, meta=meta)


def exact_wva_density(sys: SystemEnsemble, meter: MeterState, branch: str = PASS,
                      normalized: bool = True) -> ParametricDensity:
    """Exact postselected meter density, no small-g approximation.

    The meter's representation selects the detection basis: position meters
    give ``|sum_j c_j conj(c'_j) psi(s - lambda_j g)|^2``, momentum meters give
    ``|psi~(k)|^2 |sum_j c_j conj(c'_j) exp(-i lambda_j g k)|^2``.
    """
    pbar = branch_density(sys, meter, branch)
    return normalize(pbar) if normalized else pbar


def aav_density(sys: SystemEnsemble, meter: MeterState, which: str = "real") -> ParametricDensity:
    """First-order (AAV) pure-shift family for the postselected meter.

    ``which="real"`` shifts the position profile by ``g Re(A_w)``;
    ``which="imaginary"`` shifts the momentum profile by ``2 g w_k^2 Im(A_w)``.
    """
    aw = weak_value(sys)
    if which == "real":
        m = meter.in_representation(POSITION)
        velocity = aw.real
    elif which == "imaginary":
        m = meter.in_representation(MOMENTUM)
        velocity = 2 * m.width ** 2 * aw.imag
    else:
        raise ModelError(f"unknown AAV quadrature {which!r}")
    fam = m.shift_family(velocity)
    q = abs(sys.overlap) ** 2
    meta = dict(fam.meta, weak_value=aw, q=q, representation=m.representation,
                meter_width=m.width)
    return replace(fam, label=f"aav-{which}", meta=meta)


def aav_validity(sys: SystemEnsemble, meter: MeterState, g: float) -> float:
    """``|A_w g| / w_x``; the AAV shift picture needs this to be small."""
    return abs(weak_value(sys)) * abs(g) / meter.in_representation(POSITION).width


def standard_density(sys: SystemEnsemble, meter: MeterState, filtered: bool = True) -> ParametricDensity:
    """No-postselection strategy, always detected in position.

    Filtered: the eigenstate with the largest ``lambda^2`` is prepared and the
    density is the pure shift ``|psi(s - lambda* g)|^2``. Unfiltered: the
    ``|c_j|^2``-weighted mixture of shifted copies.
    """
    m = meter.in_representation(POSITION)
    lam = sys.eigenvalues
    if filtered:
        ls = lambda_star(lam)
        fam = m.shift_family(ls)
        return replace(fam, label="standard", meta=dict(fam.meta, representation=POSITION))

    weights = np.abs(sys.pre) ** 2
    keep = weights > 0
    fams = [m.shift_family(l) for l in lam[keep]]
    w = weights[keep]

    def density(s, g):
        return sum(wi * f.density(s, g) for wi, f in zip(w, fams))

    def d_dg(s, g):
        return sum(wi * f.d_dg(s, g) for wi, f in zip(w, fams))

    def domain(g):
        bounds = [f.domain(g) for f in fams]
        return min(b[0] for b in bounds), max(b[1] for b in bounds)

    terms = None
    if isinstance(m, GaussianMeter):
        ls_ = lam[keep]
        terms = GaussianTerms(coef=w + 0j, kappa=np.zeros(ls_.size), tau=np.zeros(ls_.size),
                              beta=ls_ + 0j, offset=np.full(ls_.size, m.center + 0j),
                              var=np.full(ls_.size, m.waist ** 2))
    return ParametricDensity(density, domain, d_dg, terms=terms, label="standard-mixture",
                             meta=dict(representation=POSITION))
