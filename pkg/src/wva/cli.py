"""Command-line interface: ``wva fig | ratio | mle | scan``.

Every output embeds the resolved configuration and seed. CSV files carry
them as leading ``#`` comment lines followed by a header row; floats are
written with 17 significant digits so a parse recovers them exactly.
Exit status: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from importlib import resources
from typing import Optional

import numpy as np

from . import fisher as fisher_mod
from .density import gaussian_shift_family
from .detector import DetectorError, NoiseKernel, PixelConfig
from .estimation import RNG_ALGORITHM, EstimationError, PixelFamily, cr_attainment
from .fisher import (DetectorModel, alpha, beta, corrected_ratio, gaussian_pixel_fisher,
                     ratio_imag_exact, ratio_real_exact)
from .meter import MOMENTUM, GaussianMeter
from .model import ModelError, QubitAngles, exact_wva_density, postselection_probability
from .numerics import NumericalError
from .scan import ScanError, grid_scan, parse_spec

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
FIGURES = ("pixel-alpha", "pixel-tradeoff", "real-contours", "imag-contours")
H_VALUES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ output

def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def render(columns, rows, config: dict, fmt: str, summary: Optional[dict] = None) -> str:
    if fmt == "json":
        doc = dict(config=_json_value(config), columns=list(columns),
                   rows=[[_json_value(v) for v in r] for r in rows])
        if summary is not None:
            doc["summary"] = _json_value(summary)
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write("# config " + json.dumps(_json_value(config), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([format_value(v) for v in r])
    if summary is not None:
        buf.write("# summary " + json.dumps(_json_value(summary), sort_keys=True) + "\n")
    return buf.getvalue()


def write_atomic(path: str, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".wva-", dir=directory)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def read_csv(path_or_text: str):
    """Parse a CSV produced here into ``(config, columns, rows)``; numbers become floats."""
    text = path_or_text
    if "\n" not in path_or_text and os.path.exists(path_or_text):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    config, body = {}, []
    for line in text.splitlines():
        if line.startswith("# config "):
            config = json.loads(line[len("# config "):])
        elif not line.startswith("#"):
            body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    rows = []
    for rec in reader:
        parsed = []
        for v in rec:
            try:
                parsed.append(float(v))
            except ValueError:
                parsed.append(v)
        rows.append(parsed)
    return config, columns, rows


def _emit(args, columns, rows, config, summary=None):
    config = dict(config, seed=args.seed, tol=args.tol)
    text = render(columns, rows, config, args.format, summary)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------- figures

def figure_data(name: str):
    """``(columns, rows, config)`` for a named figure dataset."""
    if name == "pixel-alpha":
        R = np.geomspace(0.05, 100.0, 60)
        rows = [(r, h, alpha(r, h)) for h in H_VALUES for r in R]
        return ("R", "h", "alpha"), rows, dict(R=[0.05, 100.0, 60, "log"], h=list(H_VALUES))
    if name == "pixel-tradeoff":
        D = np.geomspace(0.02, 5.0, 80)
        rows = [(d, h, gaussian_pixel_fisher(d, 1.0, h)) for h in H_VALUES for d in D]
        return (("Delta_s", "h", "fisher"), rows,
                dict(Delta_s=[0.02, 5.0, 80, "log"], h=list(H_VALUES), r_s=1.0, velocity=1.0))
    if name == "real-contours":
        G = np.geomspace(0.01, 10.0, 25)
        ti = np.linspace(0.0, np.pi, 25)
        tf = np.linspace(0.0, 2 * np.pi, 49)
        gg, ii, ff = np.meshgrid(G, ti, tf, indexing="ij")
        vals = ratio_real_exact(gg, ii, ff)
        rows = list(zip(gg.ravel(), ii.ravel(), ff.ravel(), vals.ravel()))
        return (("G", "theta_i", "theta_f", "ratio"), rows,
                dict(G=[0.01, 10.0, 25, "log"], theta_i=[0.0, math.pi, 25],
                     theta_f=[0.0, 2 * math.pi, 49]))
    if name == "imag-contours":
        G = np.geomspace(0.01, 10.0, 31)
        d = np.linspace(0.0, 2 * np.pi, 73)
        gg, dd = np.meshgrid(G, d, indexing="ij")
        vals = ratio_imag_exact(gg, dd)
        rows = list(zip(gg.ravel(), dd.ravel(), vals.ravel()))
        return ("G", "dphi", "ratio"), rows, dict(G=[0.01, 10.0, 31, "log"], dphi=[0.0, 2 * math.pi, 73])
    raise UsageError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")


def cmd_fig(args):
    columns, rows, config = figure_data(args.name)
    _emit(args, columns, rows, dict(command="fig", name=args.name, **config))
    return EXIT_OK


# ------------------------------------------------------------------- ratio

def _kernel(width):
    return NoiseKernel.gaussian(width) if width else None


def _check_consistency(args):
    if args.family == "real":
        if args.dphi is not None or args.jitter_k is not None:
            raise UsageError("--dphi and --jitter-k apply to the imaginary family only")
    else:
        if args.theta_i is not None or args.theta_f is not None:
            raise UsageError("--theta-i/--theta-f apply to the real family only")
        if args.jitter_x is not None:
            raise UsageError("imaginary family is detected in momentum; use --jitter-k for the WVA arm")
        if args.pixel is not None:
            raise UsageError("pixelation is modelled for position detection (real family) only")
    if (args.G is None) == (args.g is None):
        raise UsageError("give exactly one of --G and --g")
    if args.pixel is None and (args.h is not None or args.h_std is not None):
        raise UsageError("--h/--h-std need --pixel")
    if args.pixel is not None and args.h is None:
        raise UsageError("--pixel needs an alignment --h")
    if args.width <= 0:
        raise UsageError("--width must be positive")


def ratio_config(args) -> dict:
    _check_consistency(args)
    g = args.g if args.g is not None else args.width * math.sqrt(args.G)
    if args.family == "real":
        sys_ = QubitAngles.real(args.theta_i or 0.0, args.theta_f or 0.0).ensemble()
        meter = GaussianMeter(args.width)
        wva = DetectorModel(_kernel(args.jitter_x), PixelConfig(args.pixel) if args.pixel else None,
                            args.h)
    else:
        sys_ = QubitAngles.imaginary(args.dphi or 0.0).ensemble()
        meter = GaussianMeter(1.0 / (2 * args.width), representation=MOMENTUM)
        wva = DetectorModel(_kernel(args.jitter_k))
    std = DetectorModel(_kernel(args.jitter_std), PixelConfig(args.pixel) if args.pixel else None,
                        args.h if args.h_std is None else args.h_std)
    return dict(system=sys_, meter=meter, g=g, wva=wva, std=std)


def cmd_ratio(args):
    c = ratio_config(args)
    rep = corrected_ratio(c["system"], c["meter"], c["g"], c["wva"], c["std"], mode=args.mode,
                          filtered=not args.unfiltered)
    flagged = any(isinstance(d, dict) and d.get("flagged") for d in rep.diagnostics.values())
    row = (rep.q, rep.wva_info, rep.std_info, rep.corrected_ratio, flagged)
    config = dict(command="ratio", family=args.family, theta_i=args.theta_i, theta_f=args.theta_f,
                  dphi=args.dphi, G=args.G, g=c["g"], width=args.width, mode=args.mode,
                  jitter_x=args.jitter_x, jitter_k=args.jitter_k, jitter_std=args.jitter_std,
                  pixel=args.pixel, h=args.h, h_std=args.h_std, unfiltered=args.unfiltered)
    _emit(args, ("q", "wva_info", "std_info", "ratio", "flagged"), [row], config)
    return EXIT_OK


# --------------------------------------------------------------------- mle

def mle_model(args):
    """``(model, q, fisher_hint, description)`` from the mle flags."""
    if args.model == "gaussian":
        return gaussian_shift_family(args.width, args.velocity), None, args.velocity ** 2 / args.width ** 2
    if args.model == "jittered":
        if args.jitter is None:
            raise UsageError("--model jittered needs --jitter")
        width = math.hypot(args.width, args.jitter)
        return (gaussian_shift_family(width, args.velocity), None,
                args.velocity ** 2 * beta(args.width, args.jitter) / args.width ** 2)
    if args.model == "pixel":
        if args.pixel is None:
            raise UsageError("--model pixel needs --pixel")
        P = gaussian_shift_family(args.width, args.velocity)
        h = 0.5 if args.h is None else args.h
        mu = args.velocity * args.g_true - h * args.pixel
        return PixelFamily(P, PixelConfig(args.pixel, mu)), None, None
    if args.model == "wva":
        sys_ = QubitAngles.real(args.theta_i, args.theta_f).ensemble()
        meter = GaussianMeter(args.width)
        q = postselection_probability(sys_, meter, args.g_true)
        return exact_wva_density(sys_, meter), q, None
    raise UsageError(f"unknown model {args.model!r}")


def cmd_mle(args):
    if args.trials < 1 or args.repeats < 1:
        raise UsageError("--trials and --repeats must be at least 1")
    model, q, F = mle_model(args)
    rep = cr_attainment(model, args.g_true, args.trials, args.repeats, args.seed, q=q, fisher=F)
    rows = [(k, "", v) for k, v in rep.as_dict().items()]
    if args.verbose or args.repeats == 1:
        rows += [("estimate", i, v) for i, v in enumerate(rep.estimates)]
    config = dict(command="mle", model=args.model, width=args.width, velocity=args.velocity,
                  jitter=args.jitter, pixel=args.pixel, h=args.h, theta_i=args.theta_i,
                  theta_f=args.theta_f, g_true=args.g_true, trials=args.trials,
                  repeats=args.repeats, rng=RNG_ALGORITHM)
    _emit(args, ("quantity", "index", "value"), rows, config)
    return EXIT_OK


# -------------------------------------------------------------------- scan

def load_spec_text(path: str) -> tuple:
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return fh.read(), os.path.basename(path)
    bundled = resources.files("wva") / "scans" / os.path.basename(path)
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8"), bundled.name
    raise UsageError(f"scan spec not found: {path}")


def cmd_scan(args):
    text, name = load_spec_text(args.spec)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    try:
        spec = parse_spec(text, overrides, name=name)
    except ScanError as exc:
        raise UsageError(f"{name}: {exc}") from None
    result = grid_scan(spec)
    names = spec.axis_names + list(spec.derived)
    rows = []
    for r in result.rows:
        env = {}
        try:
            env = spec.environment(r.point)
        except Exception:
            pass
        rows.append([env.get(n, r.point.get(n)) for n in names] + [r.value, r.status])
    best_point, best_value = result.best
    top = result.argmax
    summary = dict(max=top.value, argmax=top.point, refined_max=best_value,
                   refined_argmax=best_point, failures=len(result.failures))
    _emit(args, names + ["value", "status"], rows, dict(command="scan", spec=spec.as_dict()),
          summary)
    sys.stderr.write(f"max {format_value(best_value)} at "
                     + ", ".join(f"{k}={format_value(v)}" for k, v in best_point.items()) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wva", description="Fisher-information comparison of weak-value "
                                        "amplification against standard estimation.")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--tol", type=float, default=None,
                   help="relative tolerance of Fisher quadrature (default %g)" % fisher_mod.FISHER_RTOL)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def output(q):
        q.add_argument("--out", help="output path (default stdout)")
        q.add_argument("--format", choices=("csv", "json"), default="csv")

    f = sub.add_parser("fig", help="figure datasets")
    f.add_argument("name", choices=FIGURES)
    output(f)
    f.set_defaults(func=cmd_fig)

    r = sub.add_parser("ratio", help="corrected WVA / standard information ratio")
    r.add_argument("--family", choices=("real", "imaginary"), default="real")
    r.add_argument("--theta-i", type=float)
    r.add_argument("--theta-f", type=float)
    r.add_argument("--dphi", type=float)
    r.add_argument("--G", type=float, help="measurement strength g^2 / width^2")
    r.add_argument("--g", type=float, help="coupling g (alternative to --G)")
    r.add_argument("--width", type=float, default=1.0, help="position spread of the meter")
    r.add_argument("--mode", choices=("exact", "aav"), default="exact")
    r.add_argument("--jitter-x", type=float, help="Gaussian jitter of the WVA arm (position)")
    r.add_argument("--jitter-k", type=float, help="Gaussian jitter of the WVA arm (momentum)")
    r.add_argument("--jitter-std", type=float, help="Gaussian jitter of the standard arm")
    r.add_argument("--pixel", type=float, help="pixel width, both arms")
    r.add_argument("--h", type=float, help="pixel alignment of the WVA arm")
    r.add_argument("--h-std", type=float, help="pixel alignment of the standard arm (default --h)")
    r.add_argument("--unfiltered", action="store_true",
                   help="standard arm without eigenstate preselection")
    output(r)
    r.set_defaults(func=cmd_ratio)

    m = sub.add_parser("mle", help="Monte Carlo maximum-likelihood runs against the Cramer-Rao bound")
    m.add_argument("--model", choices=("gaussian", "jittered", "pixel", "wva"), default="gaussian")
    m.add_argument("--width", type=float, default=1.0)
    m.add_argument("--velocity", type=float, default=1.0)
    m.add_argument("--jitter", type=float)
    m.add_argument("--pixel", type=float)
    m.add_argument("--h", type=float)
    m.add_argument("--theta-i", type=float, default=0.0)
    m.add_argument("--theta-f", type=float, default=0.0)
    m.add_argument("--g-true", type=float, default=0.0)
    m.add_argument("--trials", type=int, default=10000)
    m.add_argument("--repeats", type=int, default=200)
    m.add_argument("--verbose", action="store_true", help="also list per-repeat estimates")
    output(m)
    m.set_defaults(func=cmd_mle)

    s = sub.add_parser("scan", help="grid scan with simplex refinement")
    s.add_argument("--spec", required=True, help="key=value spec file or bundled spec name")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec entry")
    output(s)
    s.set_defaults(func=cmd_scan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    saved_rtol = fisher_mod.FISHER_RTOL
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        if args.tol is not None:
            if not args.tol > 0:
                raise UsageError("--tol must be positive")
            fisher_mod.FISHER_RTOL = args.tol
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK
    except (NumericalError, ModelError, DetectorError, EstimationError, ScanError,
            FloatingPointError, ZeroDivisionError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    finally:
        fisher_mod.FISHER_RTOL = saved_rtol


if __name__ == "__main__":
    sys.exit(main())
