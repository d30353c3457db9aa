"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``[PASS]`` or ``[FAIL]`` line through ``record_criterion``;
the lines are repeated in the terminal summary.
"""

import json
import math
import time
from importlib import resources

import numpy as np

from conftest import random_tabulated_meter, record_criterion
from wva import fisher as fisher_mod
from wva.cli import main, read_csv
from wva.density import gaussian_shift_family
from wva.detector import NoiseKernel, PixelConfig, apply_jitter, mu_for_alignment, pixelate
from wva.estimation import cr_attainment
from wva.fisher import (alpha, corrected_ratio, exact_joint_information, fisher_continuous,
                        fisher_discrete, joint_cross_term, ratio_imag_exact, ratio_real_exact)
from wva.meter import MOMENTUM, GaussianMeter
from wva.model import QubitAngles, SystemEnsemble, lambda_star, weak_value
from wva.numerics import Grid


def rel_err(a, b):
    return abs(a - b) / abs(b)


def test_criterion_01_gaussian_closed_form():
    start = time.perf_counter()
    F = fisher_continuous(gaussian_shift_family(2.0, velocity=1.0), 0.1).value
    elapsed = time.perf_counter() - start
    ok = abs(F - 0.25) < 1e-8 and elapsed < 1.0
    record_criterion(1, "Gaussian Fisher closed form", ok, f"F={F:.15g}, {elapsed:.3f} s")
    assert ok


def test_criterion_02_velocity_law():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        meter = random_tabulated_meter(rng)
        nu = rng.uniform(0.1, 5.0) * rng.choice([-1, 1])
        g = rng.uniform(-1, 1)
        F_s = fisher_continuous(meter.shift_family(1.0), 0.0).value
        F_g = fisher_continuous(meter.shift_family(nu), g).value
        worst = max(worst, rel_err(F_g, nu * nu * F_s))
    ok = worst < 1e-7
    record_criterion(2, "velocity law on tabulated meters", ok, f"max rel err {worst:.2e}")
    assert ok


def test_criterion_03_split_detector_limit():
    top = alpha(200.0, 0.5)
    fine = max(abs(alpha(0.05, h) - 1) for h in np.linspace(0, 0.5, 11))
    ok = abs(top - 2 / math.pi) < 1e-3 and fine < 1e-3
    record_criterion(3, "split-detector and fine-pixel limits", ok,
                     f"alpha(200,0.5)={top:.6f}, max|alpha(0.05,h)-1|={fine:.1e}")
    assert ok


def test_criterion_04_pixelation_commutes_with_velocity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        nu = rng.uniform(0.2, 4.0) * rng.choice([-1, 1])
        g = rng.uniform(-2, 2)
        r_s = rng.uniform(0.2, 4.0)
        mu = rng.uniform(-2, 2)
        width = rng.uniform(0.5, 2.0)
        cfg = PixelConfig(r_s, mu)
        F_g = fisher_discrete(pixelate(gaussian_shift_family(width, nu), cfg, g)).value
        # unit-velocity family at g = 0 with the pixel grid at the same offset
        h = (nu * g - mu) / r_s
        unit = PixelConfig(r_s, mu_for_alignment(0.0, h, r_s))
        F_s = fisher_discrete(pixelate(gaussian_shift_family(width, 1.0), unit, 0.0)).value
        worst = max(worst, rel_err(F_g, nu * nu * F_s))
        worst = max(worst, rel_err(F_g, nu * nu * alpha(r_s / width, h) / width ** 2))
    ok = worst < 1e-6
    record_criterion(4, "pixelation commutes with the velocity", ok, f"max rel err {worst:.2e}")
    assert ok


def test_criterion_05_jitter_closed_form_and_commutation():
    P = apply_jitter(gaussian_shift_family(3.0, velocity=1.0), NoiseKernel.gaussian(4.0))
    F = fisher_continuous(P, 0.3).value
    rng = np.random.default_rng(5)
    grid = Grid(-6.0, 10.0, 1601)
    worst = 0.0
    for _ in range(3):
        # skewed kernel: two bumps on the same side of zero, so the mean is well away from it
        c1, c2 = rng.uniform(0.5, 2.5, 2)
        w = (np.exp(-(grid.values - c1) ** 2 / 0.8)
             + 0.6 * np.exp(-(grid.values - c1 - c2) ** 2 / 2.0))
        kernel = NoiseKernel.tabulated(grid, w, normalize=True)
        assert abs(kernel.mean) > 0.1
        nu, g = rng.uniform(0.5, 3.0), rng.uniform(-1, 1)
        F_s = fisher_continuous(apply_jitter(gaussian_shift_family(1.0, 1.0), kernel), 0.0).value
        F_g = fisher_continuous(apply_jitter(gaussian_shift_family(1.0, nu), kernel), g).value
        worst = max(worst, rel_err(F_g, nu * nu * F_s))
    ok = abs(F - 0.04) < 1e-8 and worst < 1e-6
    record_criterion(5, "jitter closed form and commutation", ok,
                     f"F={F:.15g}, commutation rel err {worst:.2e}")
    assert ok


def test_criterion_06_exact_real_ratio():
    start = time.perf_counter()
    worst = 0.0
    for ti in np.arange(10) * np.pi / 9:
        for tf in (np.arange(10) + 0.5) * np.pi / 5:
            sys = QubitAngles.real(ti, tf).ensemble()
            for G in np.geomspace(0.01, 10, 10):
                r = corrected_ratio(sys, GaussianMeter(1.0), math.sqrt(G)).corrected_ratio
                worst = max(worst, rel_err(r, ratio_real_exact(G, ti, tf)))
    G = np.geomspace(1e-3, 20, 50)[:, None, None]
    ti = np.linspace(0, np.pi, 50)[None, :, None]
    tf = np.linspace(0, 2 * np.pi, 50, endpoint=False)[None, None, :]
    top = float(np.max(ratio_real_exact(G, ti, tf)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and top <= 1 + 1e-9 and elapsed < 300
    record_criterion(6, "exact real ratio", ok,
                     f"pipeline rel err {worst:.2e}, grid max {top:.15g}, {elapsed:.1f} s")
    assert ok


def test_criterion_07_exact_imaginary_ratio(monkeypatch):
    meter = GaussianMeter(0.5, representation=MOMENTUM)

    def pipeline(G, dphi):
        g = math.sqrt(G) / (2 * meter.width)
        return corrected_ratio(QubitAngles.imaginary(dphi).ensemble(), meter, g)

    worst = 0.0
    for G in np.geomspace(0.01, 10, 10):
        for dphi in (np.arange(12) + 0.25) * np.pi / 6:
            worst = max(worst, rel_err(pipeline(G, dphi).corrected_ratio, ratio_imag_exact(G, dphi)))
    monkeypatch.setattr(fisher_mod, "FISHER_RTOL", 1e-13)
    G = 1e-3
    at_zero = pipeline(G, 0.0).corrected_ratio
    at_pi = pipeline(G, math.pi).corrected_ratio
    asym = max(rel_err(at_zero, G / 2), rel_err(at_pi, G * G / 24))
    ok = worst < 1e-6 and asym < 0.05
    record_criterion(7, "exact imaginary ratio", ok,
                     f"pipeline rel err {worst:.2e}, asymptotic rel err {asym:.2e}")
    assert ok


def test_criterion_08_joint_information_theorem():
    rng = np.random.default_rng(8)
    worst = cross = 0.0
    for _ in range(20):
        w = rng.uniform(0.3, 3.0)
        g = rng.uniform(0.01, 2.0) * w
        sys = QubitAngles.real(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)).ensemble()
        F = exact_joint_information(sys, GaussianMeter(w), g).value
        worst = max(worst, rel_err(F, 1 / w ** 2))
        cross = max(cross, abs(joint_cross_term(sys, GaussianMeter(w), g)))

        wk = rng.uniform(0.3, 3.0)
        gk = rng.uniform(0.01, 2.0) / wk
        sys_k = QubitAngles.imaginary(rng.uniform(0, 2 * np.pi)).ensemble()
        Fk = exact_joint_information(sys_k, GaussianMeter(wk, representation=MOMENTUM), gk).value
        worst = max(worst, rel_err(Fk, 4 * wk ** 2))
    ok = worst < 1e-6 and cross < 1e-10
    record_criterion(8, "joint-information theorem", ok,
                     f"max rel err {worst:.2e}, max cross term {cross:.1e}")
    assert ok


def test_criterion_09_cauchy_schwarz():
    rng = np.random.default_rng(9)
    excess = -math.inf
    for _ in range(1000):
        d = int(rng.integers(2, 6))
        lam = rng.normal(size=d) * rng.uniform(0.1, 10)
        pre = rng.normal(size=d) + 1j * rng.normal(size=d)
        post = rng.normal(size=d) + 1j * rng.normal(size=d)
        sys = SystemEnsemble(lam, pre / np.linalg.norm(pre), post / np.linalg.norm(post))
        lhs = abs(sys.overlap) ** 2 * abs(weak_value(sys)) ** 2
        excess = max(excess, lhs - lambda_star(lam) ** 2)
    ok = excess <= 1e-10
    record_criterion(9, "Cauchy-Schwarz bound", ok, f"max q|A_w|^2 - lambda*^2 = {excess:.3g}")
    assert ok


def test_criterion_10_cramer_rao_attainment():
    start = time.perf_counter()
    rep = cr_attainment(gaussian_shift_family(1.0, velocity=1.0), 0.3, 10_000, 200, seed=10)
    elapsed = time.perf_counter() - start
    ok = 0.85 <= rep.ratio <= 1.25 and elapsed < 120
    record_criterion(10, "Cramer-Rao attainment", ok,
                     f"variance/bound {rep.ratio:.4f}, {elapsed:.1f} s")
    assert ok


def _figure(capsys, name, tmp_path):
    out = tmp_path / f"{name}.csv"
    assert main(["fig", name, "--out", str(out)]) == 0
    capsys.readouterr()
    _, _, rows = read_csv(str(out))
    return np.array(rows, dtype=float)


def test_criterion_11_figure_datasets(capsys, tmp_path):
    a = _figure(capsys, "pixel-alpha", tmp_path)
    hs = np.unique(a[:, 1])
    R = np.unique(a[:, 0])
    curves = {h: a[a[:, 1] == h][:, 2] for h in hs}
    big = R >= 3
    ordering = all(np.all(curves[0.5][big] >= curves[h][big] - 1e-12) for h in hs)

    t = _figure(capsys, "pixel-tradeoff", tmp_path)
    deltas = np.unique(t[:, 0])
    best = {}
    for h in np.unique(t[:, 1]):
        f = t[t[:, 1] == h][:, 2]
        best[h] = int(np.argmax(f))
    interior = 0 < best[0.0] < deltas.size - 1
    optima = [deltas[best[h]] for h in sorted(best)]
    monotone = all(b <= a_ for a_, b in zip(optima, optima[1:]))
    boundary = best[0.5] == 0
    ok = ordering and interior and monotone and boundary
    record_criterion(11, "figure datasets", ok,
                     f"ordering={ordering}, interior Delta*={deltas[best[0.0]]:.3g}, "
                     f"monotone={monotone}, boundary at h=0.5={boundary}")
    assert ok


BUNDLED = sorted(p.name for p in resources.files("wva").joinpath("scans").iterdir()
                 if p.name.endswith(".scan"))


def test_criterion_12_advantage_searches(capsys, tmp_path):
    maxima = {}
    for name in BUNDLED:
        out = tmp_path / f"{name}.csv"
        assert main(["scan", "--spec", name, "--out", str(out)]) == 0
        capsys.readouterr()
        line = [l for l in out.read_text().splitlines() if l.startswith("# summary ")][0]
        summary = json.loads(line[len("# summary "):])
        maxima[name] = max(summary["max"], summary["refined_max"])
    ok = len(maxima) == 3 and all(v <= 1 + 1e-6 for v in maxima.values())
    record_criterion(12, "advantage searches", ok,
                     ", ".join(f"{k}: {v:.12g}" for k, v in maxima.items()))
    assert ok
