"""Parameter-space scans and derivative-free maximisation of ratio objectives.

A :class:`ScanSpec` names an objective from :data:`OBJECTIVES`, a lattice of
axes, fixed parameters, derived quantities and constraints. Derived values
and constraints are arithmetic expressions over earlier names, evaluated by a
small whitelist interpreter rather than ``eval``.
"""

from __future__ import annotations

import ast
import inspect
import itertools
import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .detector import NoiseKernel, PixelConfig
from .fisher import (DetectorModel, alpha, corrected_ratio, gaussian_pixel_fisher,
                     ratio_imag_exact, ratio_real_exact)
from .meter import MOMENTUM, GaussianMeter
from .model import QubitAngles

SIMPLEX_DIAMETER = 1e-8
MAX_EVALUATIONS = 2000


class ScanError(ValueError):
    pass


# ---------------------------------------------------------------- expressions

_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg, ast.Not: operator.not_}
_COMPARE = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt,
            ast.GtE: operator.ge, ast.Eq: operator.eq, ast.NotEq: operator.ne}
_FUNCTIONS = {name: getattr(math, name) for name in
              ("sqrt", "exp", "log", "log10", "sin", "cos", "tan", "atan", "fabs")}
_FUNCTIONS.update(abs=abs, min=min, max=max)
_CONSTANTS = {"pi": math.pi, "e": math.e}


class Expression:
    """Arithmetic/comparison expression over named scan quantities."""

    def __init__(self, text: str):
        self.text = text.strip()
        try:
            self.tree = ast.parse(self.text, mode="eval").body
        except SyntaxError as exc:
            raise ScanError(f"cannot parse expression {text!r}: {exc.msg}") from None
        self.names = set()
        self._check(self.tree)

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            self._check(node.operand)
        elif isinstance(node, ast.BoolOp):
            for v in node.values:
                self._check(v)
        elif isinstance(node, ast.Compare) and all(type(o) in _COMPARE for o in node.ops):
            self._check(node.left)
            for c in node.comparators:
                self._check(c)
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCTIONS and not node.keywords:
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif isinstance(node, ast.Name):
            if node.id not in _CONSTANTS:
                self.names.add(node.id)
        else:
            raise ScanError(f"unsupported syntax in expression {self.text!r}")

    def __call__(self, env: dict):
        return self._eval(self.tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINARY[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.BoolOp):
            values = [self._eval(v, env) for v in node.values]
            return all(values) if isinstance(node.op, ast.And) else any(values)
        if isinstance(node, ast.Compare):
            left = self._eval(node.left, env)
            for op, comp in zip(node.ops, node.comparators):
                right = self._eval(comp, env)
                if not _COMPARE[type(op)](left, right):
                    return False
                left = right
            return True
        if isinstance(node, ast.Call):
            return _FUNCTIONS[node.func.id](*(self._eval(a, env) for a in node.args))
        if isinstance(node, ast.Constant):
            return node.value
        if node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        return env[node.id]

    def __repr__(self):
        return f"Expression({self.text!r})"


# ----------------------------------------------------------------- objectives

def _jitter(width):
    return NoiseKernel.gaussian(width) if width and width > 0 else None


def real_detector_ratio(g, Delta_x, theta_i, theta_f, J_x=0.0, r_s=None, h=None, h_std=None):
    """Exact corrected ratio for the real qubit family through jitter and pixels.

    Both arms see the same Gaussian jitter ``J_x``. With ``r_s`` set, both
    arms are pixelated with width ``r_s``; the WVA arm at alignment ``h`` and
    the standard arm at ``h_std`` (``h`` when omitted).
    """
    sys = QubitAngles.real(theta_i, theta_f).ensemble()
    meter = GaussianMeter(Delta_x)
    pixels = PixelConfig(r_s) if r_s else None
    if pixels is not None and h is None:
        raise ScanError("pixelated objective needs an alignment h")
    h_std = h if h_std is None else h_std
    wva = DetectorModel(_jitter(J_x), pixels, h if pixels else None)
    std = DetectorModel(_jitter(J_x), pixels, h_std if pixels else None)
    return corrected_ratio(sys, meter, g, wva, std).corrected_ratio


def imag_jitter_ratio(g, Delta_k, dphi, J_x=0.0, J_k=0.0):
    """Exact corrected ratio for the imaginary family with momentum detection.

    The WVA arm is jittered by ``J_k`` in momentum, the standard arm by
    ``J_x`` in position.
    """
    sys = QubitAngles.imaginary(dphi).ensemble()
    meter = GaussianMeter(Delta_k, representation=MOMENTUM)
    wva = DetectorModel(_jitter(J_k))
    std = DetectorModel(_jitter(J_x))
    return corrected_ratio(sys, meter, g, wva, std).corrected_ratio


def real_pixel_aav_ratio(theta_i, theta_f, r_s, h, h_std=None, Delta_x=1.0, g=0.0):
    """First-order (shift-family) corrected ratio with both arms pixelated.

    The WVA arm sits at alignment ``h``, the standard arm at ``h_std``.
    """
    sys = QubitAngles.real(theta_i, theta_f).ensemble()
    pixels = PixelConfig(r_s)
    h_std = h if h_std is None else h_std
    return corrected_ratio(sys, GaussianMeter(Delta_x), g, DetectorModel(None, pixels, h),
                           DetectorModel(None, pixels, h_std), mode="aav").corrected_ratio


def pixel_fisher(Delta_s, h, r_s=1.0, velocity=1.0):
    return gaussian_pixel_fisher(Delta_s, r_s, h, velocity)


OBJECTIVES: dict = {
    "ratio_real_exact": lambda G, theta_i, theta_f: ratio_real_exact(G, theta_i, theta_f),
    "ratio_imag_exact": lambda G, dphi: ratio_imag_exact(G, dphi),
    "alpha": lambda R, h: alpha(R, h),
    "pixel_fisher": pixel_fisher,
    "real_detector": real_detector_ratio,
    "real_pixel_aav": real_pixel_aav_ratio,
    "imag_jitter": imag_jitter_ratio,
}


def objective_parameters(name: str):
    """``(required, optional)`` parameter names of a registered objective."""
    if name not in OBJECTIVES:
        raise ScanError(f"unknown objective {name!r}; known: {', '.join(sorted(OBJECTIVES))}")
    sig = inspect.signature(OBJECTIVES[name])
    required = [p.name for p in sig.parameters.values() if p.default is inspect.Parameter.empty]
    optional = [p.name for p in sig.parameters.values() if p.default is not inspect.Parameter.empty]
    return required, optional


# ----------------------------------------------------------------------- spec

@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    steps: int
    log: bool = False

    def __post_init__(self):
        if self.steps < 2:
            raise ScanError(f"axis {self.name!r} needs at least 2 steps")
        if not self.lo <= self.hi:
            raise ScanError(f"axis {self.name!r} needs lo <= hi")
        if self.log and not self.lo > 0:
            raise ScanError(f"log axis {self.name!r} needs positive bounds")

    @property
    def values(self) -> np.ndarray:
        if self.log:
            return np.geomspace(self.lo, self.hi, self.steps)
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass
class ScanSpec:
    objective: str
    axes: list
    params: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    equal_alignment: bool = True
    refine: int = 0
    name: str = ""

    def __post_init__(self):
        if not self.axes:
            raise ScanError("scan needs at least one axis")
        self.derived = {k: v if isinstance(v, Expression) else Expression(str(v))
                        for k, v in self.derived.items()}
        self.constraints = [c if isinstance(c, Expression) else Expression(str(c))
                            for c in self.constraints]
        self.validate()

    @property
    def axis_names(self):
        return [a.name for a in self.axes]

    def validate(self):
        required, optional = objective_parameters(self.objective)
        known = set()
        for group in (self.axis_names, list(self.params)):
            for n in group:
                if n in known:
                    raise ScanError(f"{n!r} declared twice")
                known.add(n)
        for n, expr in self.derived.items():
            missing = expr.names - known
            if missing:
                raise ScanError(f"derived {n!r} references undeclared {sorted(missing)}")
            if n in known:
                raise ScanError(f"{n!r} declared twice")
            known.add(n)
        for c in self.constraints:
            missing = c.names - known
            if missing:
                raise ScanError(f"constraint {c.text!r} references undeclared {sorted(missing)}")
        accepted = set(required) | set(optional)
        if self.equal_alignment and "h_std" in accepted:
            known.add("h_std")
        missing = set(required) - known
        if missing:
            raise ScanError(f"objective {self.objective!r} needs {sorted(missing)}")
        unused = [n for n in self.axis_names if n not in accepted
                  and not any(n in e.names for e in self.derived.values())
                  and not any(n in c.names for c in self.constraints)]
        if unused:
            raise ScanError(f"axes {unused} do not feed objective {self.objective!r}")

    def environment(self, point: dict) -> dict:
        env = dict(self.params)
        env.update(point)
        for n, expr in self.derived.items():
            env[n] = float(expr(env))
        if self.equal_alignment and "h" in env:
            env["h_std"] = env["h"]
        return env

    def admissible(self, env: dict) -> bool:
        return all(bool(c(env)) for c in self.constraints)

    def evaluate(self, point: dict) -> float:
        env = self.environment(point)
        required, optional = objective_parameters(self.objective)
        kwargs = {k: env[k] for k in required + optional if k in env}
        return float(OBJECTIVES[self.objective](**kwargs))

    def as_dict(self) -> dict:
        return dict(name=self.name, objective=self.objective,
                    axes=[[a.name, a.lo, a.hi, a.steps, "log" if a.log else "linear"]
                          for a in self.axes],
                    params=dict(self.params),
                    derived={k: v.text for k, v in self.derived.items()},
                    constraints=[c.text for c in self.constraints],
                    equal_alignment=self.equal_alignment, refine=self.refine)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_axis(name, text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (3, 4):
        raise ValueError("axis needs lo, hi, steps[, log|linear]")
    lo, hi = float(Expression(parts[0])({})), float(Expression(parts[1])({}))
    steps = int(parts[2])
    scale = parts[3].lower() if len(parts) == 4 else "linear"
    if scale not in ("log", "linear"):
        raise ValueError(f"unknown axis scale {scale!r}")
    return Axis(name, lo, hi, steps, scale == "log")


def parse_spec(text: str, overrides: Optional[dict] = None, name: str = "") -> ScanSpec:
    """Parse ``key = value`` scan text; ``overrides`` replace keys after parsing.

    Keys: ``objective``, ``axis.<name> = lo, hi, steps[, log]``,
    ``param.<name> = value``, ``derive.<name> = expression``,
    ``constraint = expression`` (repeatable), ``equal_alignment``, ``refine``.
    Errors name the offending line.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScanError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        entries.append((lineno, key, value))
    for key, value in (overrides or {}).items():
        entries.append(("override", key, str(value)))

    fields = dict(objective=None, axes={}, params={}, derived={}, constraints=[],
                  equal_alignment=True, refine=0)
    for where, key, value in entries:
        label = f"line {where}" if where != "override" else "override"
        try:
            if key == "objective":
                fields["objective"] = value
            elif key.startswith("axis."):
                fields["axes"][key[5:]] = _parse_axis(key[5:], value)
            elif key.startswith("param."):
                fields["axes"].pop(key[6:], None)
                fields["params"][key[6:]] = float(Expression(value)({}))
            elif key.startswith("derive."):
                fields["derived"][key[7:]] = Expression(value)
            elif key == "constraint":
                fields["constraints"].append(Expression(value))
            elif key == "equal_alignment":
                fields["equal_alignment"] = _parse_bool(value)
            elif key == "refine":
                fields["refine"] = int(value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, ScanError, KeyError) as exc:
            raise ScanError(f"{label}: field {key!r}: {exc}") from None
    if fields["objective"] is None:
        raise ScanError("spec does not name an objective")
    fields["axes"] = list(fields["axes"].values())
    return ScanSpec(name=name, **fields)


# -------------------------------------------------------------------- results

@dataclass(frozen=True)
class ScanRow:
    index: tuple
    point: dict
    value: float
    status: str = "ok"


@dataclass
class ScanResult:
    spec: ScanSpec
    rows: list
    refined: list = field(default_factory=list)

    @property
    def finite_rows(self):
        return [r for r in self.rows if r.status == "ok" and math.isfinite(r.value)]

    @property
    def argmax(self) -> ScanRow:
        rows = self.finite_rows
        if not rows:
            raise ScanError("no lattice point produced a finite objective value")
        return max(rows, key=lambda r: r.value)

    @property
    def max_value(self) -> float:
        return self.argmax.value

    @property
    def best(self):
        """Best of the lattice maximum and any refined maxima, as ``(point, value)``."""
        top = self.argmax
        candidates = [(top.point, top.value)] + list(self.refined)
        return max(candidates, key=lambda c: c[1])

    @property
    def failures(self):
        return [r for r in self.rows if r.status != "ok"]


def _evaluate_row(spec: ScanSpec, index, point) -> ScanRow:
    try:
        env = spec.environment(point)
        if not spec.admissible(env):
            return ScanRow(index, point, math.nan, "excluded")
        value = spec.evaluate(point)
        if not math.isfinite(value):
            return ScanRow(index, point, value, "non-finite")
        return ScanRow(index, point, value)
    except Exception as exc:  # a failing point is recorded, the scan continues
        return ScanRow(index, point, math.nan, f"error: {exc}")


def lattice(spec: ScanSpec):
    grids = [a.values for a in spec.axes]
    for index in itertools.product(*(range(len(g)) for g in grids)):
        yield index, {a.name: float(g[i]) for a, g, i in zip(spec.axes, grids, index)}


def grid_scan(spec: ScanSpec, map_fn: Callable = map) -> ScanResult:
    """Evaluate the objective on every lattice point.

    ``map_fn`` may be a concurrent map; rows are keyed and sorted by lattice
    index, so the table does not depend on evaluation order.
    """
    points = list(lattice(spec))
    rows = list(map_fn(lambda ip: _evaluate_row(spec, *ip), points))
    rows.sort(key=lambda r: r.index)
    result = ScanResult(spec, rows)
    if spec.refine > 0 and result.finite_rows:
        starts = sorted(result.finite_rows, key=lambda r: -r.value)[: spec.refine]
        for row in starts:
            point, value = local_maximize(spec, row.point)
            result.refined.append((point, value))
    return result


# --------------------------------------------------------------- maximisation

def _reflect(u):
    """Fold the real line onto [0, 1] by mirror reflection at the box faces."""
    u = np.mod(u, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


def maximize_box(f: Callable[[np.ndarray], float], start, lo, hi,
                 diameter: float = SIMPLEX_DIAMETER, max_evaluations: int = MAX_EVALUATIONS,
                 step: float = 0.1):
    """Nelder-Mead maximisation of ``f`` over the box ``[lo, hi]``.

    The simplex works in unit-box coordinates; trial points leaving the box
    are mirrored back in, so every evaluation is feasible. Stops once the
    simplex diameter (unit-box scale) drops below ``diameter`` or after
    ``max_evaluations`` evaluations. Returns ``(x, value, evaluations)``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    span = np.where(hi > lo, hi - lo, 1.0)
    x0 = np.asarray(start, dtype=float)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ScanError("start point lies outside the box")
    first = f(x0)
    if not math.isfinite(first):
        raise ScanError("objective is not finite at the start point")

    def to_x(u):
        return lo + span * _reflect(u) * (hi > lo)

    def neg(u):
        v = f(to_x(u))
        return -v if math.isfinite(v) else math.inf

    u0 = (x0 - lo) / span
    n = u0.size
    simplex = [u0] + [u0 + step * np.eye(n)[i] * (1 if u0[i] <= 0.5 else -1) for i in range(n)]
    res = minimize(neg, u0, method="Nelder-Mead",
                   options=dict(initial_simplex=np.array(simplex), xatol=diameter / 2,
                                fatol=math.inf, maxfev=max_evaluations))
    x = to_x(res.x)
    value = -float(res.fun)
    if value < first:
        return x0, first, int(res.nfev) + 1
    return x, value, int(res.nfev) + 1


def local_maximize(spec: ScanSpec, start: dict, **kwargs):
    """Refine a lattice point over the spec's axes (box bounds from the axes)."""
    names = spec.axis_names
    lo = [a.lo for a in spec.axes]
    hi = [a.hi for a in spec.axes]

    def f(x):
        point = dict(zip(names, map(float, x)))
        row = _evaluate_row(spec, (), point)
        return row.value if row.status == "ok" else -math.inf

    x, value, _ = maximize_box(f, [start[n] for n in names], lo, hi, **kwargs)
    return dict(zip(names, map(float, x))), value


@dataclass(frozen=True)
class WaistOptimum:
    delta: float
    fisher: float
    boundary: bool


def optimum_waist(h: float, r_s: float = 1.0, lo_factor: float = 1e-3,
                  hi_factor: float = 1e2, points: int = 241) -> WaistOptimum:
    """Meter spread maximising pixelated Gaussian information at alignment ``h``.

    A log-spaced grid of spreads is refined around its best point. When the
    best grid point is the smallest spread, information still grows as the
    spread shrinks and the result is reported as a boundary solution.
    """
    deltas = np.geomspace(lo_factor * r_s, hi_factor * r_s, points)
    values = np.array([gaussian_pixel_fisher(d, r_s, h) for d in deltas])
    i = int(np.argmax(values))
    if i == 0:
        return WaistOptimum(float(deltas[0]), float(values[0]), True)
    if i == points - 1:
        return WaistOptimum(float(deltas[-1]), float(values[-1]), True)
    res = minimize_scalar(lambda t: -gaussian_pixel_fisher(math.exp(t), r_s, h),
                          bounds=(math.log(deltas[i - 1]), math.log(deltas[i + 1])),
                          method="bounded", options=dict(xatol=1e-10))
    return WaistOptimum(float(math.exp(res.x)), float(-res.fun), False)
