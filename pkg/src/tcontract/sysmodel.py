"""Polynomial autonomous systems x' = f(x, theta) and their regions of interest."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .polycore import (
    PolyMatrix,
    Polynomial,
    PolySyntaxError,
    UndeclaredIdentifier,
    parse_polynomial,
)


class SystemFormatError(ValueError):
    """Problem in a system description; carries 1-based line/column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line, self.column = line, column


@dataclass(frozen=True)
class Param:
    name: str
    nominal: float
    lo: float | None = None
    hi: float | None = None

    def check(self, value: float) -> None:
        if self.lo is not None and not (self.lo <= value <= self.hi):
            raise ValueError(f"value {value} for parameter {self.name} outside range [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Region:
    """Conjunction of constraints g_i(x) >= 0 inside a finite bounding box.

    ``specs`` keeps the textual origin of each constraint (``("ball", r)``,
    ``("fmin2", eps)``, ``("poly", text)``) so a system can be printed back.
    """

    constraints: tuple[Polynomial, ...]
    box: tuple[tuple[float, float], ...]
    specs: tuple[tuple, ...] = ()

    def __post_init__(self):
        for lo, hi in self.box:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bounding box interval [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.box)

    def values(self, X) -> np.ndarray:
        """Constraint values, shape (N, n_constraints)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.constraints:
            return np.zeros((X.shape[0], 0))
        return np.stack([g.eval_many(X) for g in self.constraints], axis=1)

    def contains_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        inbox = np.all((X >= lo) & (X <= hi), axis=1)
        return inbox & np.all(self.values(X) >= 0.0, axis=1)

    def contains(self, x) -> bool:
        return bool(self.contains_many(np.asarray(x, dtype=float)[None, :])[0])

    def grid(self, per_axis: int) -> np.ndarray:
        """Tensor grid over the box (cell-centred), filtered to the region."""
        axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in self.box]
        mesh = np.meshgrid(*axes, indexing="ij")
        X = np.stack([m.ravel() for m in mesh], axis=1)
        return X[self.contains_many(X)]

    @property
    def ball_radius(self) -> float | None:
        for s in self.specs:
            if s[0] == "ball":
                return float(s[1])
        return None

    @property
    def fmin2(self) -> float | None:
        for s in self.specs:
            if s[0] == "fmin2":
                return float(s[1])
        return None


def ball_constraint(n: int, r: float, nvars: int | None = None) -> Polynomial:
    nvars = n if nvars is None else nvars
    g = Polynomial.constant(nvars, r * r)
    for i in range(n):
        g = g - Polynomial.var(nvars, i) ** 2
    return g


def fmin2_constraint(f: Sequence[Polynomial], eps: float) -> Polynomial:
    g = Polynomial.constant(f[0].nvars, -eps)
    for fi in f:
        g = g + fi * fi
    return g


@dataclass(frozen=True)
class DynSystem:
    """x' = f(x, theta). Polynomials in ``f`` use variables ``states + unbound params``."""

    name: str
    states: tuple[str, ...]
    params: tuple[Param, ...]
    f: tuple[Polynomial, ...]
    region: Region | None = None
    region_specs: tuple[tuple, ...] = field(default=(), compare=False)
    box_given: tuple[tuple[float, float], ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.f) != len(self.states):
            raise ValueError("one dynamics polynomial per state is required")
        nv = len(self.states) + len(self.params)
        for p in self.f:
            if p.nvars != nv:
                raise ValueError("dynamics polynomials must range over states and parameters")
        if len(set(self.states)) != len(self.states):
            raise ValueError("duplicate state name")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def nvars(self) -> int:
        return len(self.states) + len(self.params)

    @property
    def var_names(self) -> tuple[str, ...]:
        return self.states + tuple(p.name for p in self.params)

    @property
    def is_bound(self) -> bool:
        return not self.params

    def param(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(f"unknown parameter {name!r}")

    def rhs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([fi(x) for fi in self.f])

    def rhs_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.stack([fi.eval_many(X) for fi in self.f], axis=1)

    def vector_field(self):
        """Fast callable x -> f(x) for integration (system must be bound)."""
        if not self.is_bound:
            raise ValueError(f"system {self.name} has unbound parameters")
        compiled = [fi._compile() for fi in self.f]

        def fn(x):
            x = np.asarray(x, dtype=float)
            out = np.empty(len(compiled))
            for k, (E, c) in enumerate(compiled):
                out[k] = c @ np.prod(x ** E, axis=1) if len(c) else 0.0
            return out

        return fn

    def with_region(self, region: Region) -> DynSystem:
        return DynSystem(self.name, self.states, self.params, self.f, region, region.specs, self.box_given)

    def to_text(self) -> str:
        names = self.var_names
        lines = [f"system {self.name}", "state " + " ".join(self.states)]
        for p in self.params:
            line = f"param {p.name} = {p.nominal!r}"
            if p.lo is not None:
                line += f" range {p.lo!r} {p.hi!r}"
            lines.append(line)
        for s, fi in zip(self.states, self.f):
            lines.append(f"dyn {s}' = {fi.to_string(names)}")
        for spec in self.region_specs:
            kind = spec[0]
            if kind == "poly":
                lines.append(f"region poly {spec[1]}")
            else:
                lines.append(f"region {kind} {spec[1]!r}")
        if self.box_given is not None:
            lines.append("box " + " ".join(f"{lo!r} {hi!r}" for lo, hi in self.box_given))
        return "\n".join(lines) + "\n"


def _build_region(n: int, nvars: int, f, specs, box) -> Region | None:
    if not specs and box is None:
        return None
    cons = []
    radius = None
    for spec in specs:
        kind = spec[0]
        if kind == "ball":
            radius = float(spec[1])
            cons.append(ball_constraint(n, radius, nvars))
        elif kind == "fmin2":
            cons.append(fmin2_constraint(f, float(spec[1])))
        elif kind == "poly":
            cons.append(spec[2])
    if box is None:
        if radius is None:
            raise ValueError("region needs a box or a ball")
        box = tuple((-radius, radius) for _ in range(n))
    return Region(tuple(cons), tuple(box), tuple(s[:2] for s in specs))


def make_system(name: str, states: Sequence[str], params: Sequence[Param], f: Sequence[Polynomial],
                region_specs: Sequence[tuple] = (), box=None) -> DynSystem:
    """Assemble a system; region specs are ("ball", r), ("fmin2", eps) or ("poly", text)."""
    states = tuple(states)
    params = tuple(params)
    names = states + tuple(p.name for p in params)
    specs = []
    for s in region_specs:
        if s[0] == "poly":
            poly = s[2] if len(s) > 2 else parse_polynomial(s[1], names)
            specs.append(("poly", s[1], poly))
        else:
            specs.append((s[0], float(s[1])))
    f = tuple(f)
    box = None if box is None else tuple((float(lo), float(hi)) for lo, hi in box)
    region = None
    if not params:
        region = _build_region(len(states), len(names), f, specs, box)
    sys = DynSystem(name, states, params, f, region, tuple(specs), box)
    return sys


def parse_system(text: str) -> DynSystem:
    name = None
    states: list[str] = []
    params: list[Param] = []
    dyn_lines: dict[str, tuple[str, int, int]] = {}
    specs: list[tuple] = []
    box = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        indent = len(line) - len(stripped)
        parts = stripped.split()
        kw = parts[0]
        try:
            if kw == "system":
                if len(parts) != 2:
                    raise SystemFormatError("expected 'system <name>'", lineno)
                name = parts[1]
            elif kw == "state":
                if len(parts) < 2:
                    raise SystemFormatError("expected at least one state name", lineno)
                for s in parts[1:]:
                    if s in states:
                        raise SystemFormatError(f"duplicate state {s}", lineno)
                    states.append(s)
            elif kw == "param":
                rest = stripped[len("param"):].strip()
                if "=" not in rest:
                    raise SystemFormatError("expected 'param <name> = <value> [range lo hi]'", lineno)
                pname, rhs = (s.strip() for s in rest.split("=", 1))
                toks = rhs.split()
                nominal = float(toks[0])
                lo = hi = None
                if len(toks) > 1:
                    if toks[1] != "range" or len(toks) != 4:
                        raise SystemFormatError("expected 'range <lo> <hi>'", lineno)
                    lo, hi = float(toks[2]), float(toks[3])
                if pname in {p.name for p in params} or pname in states:
                    raise SystemFormatError(f"duplicate identifier {pname}", lineno)
                params.append(Param(pname, nominal, lo, hi))
            elif kw == "dyn":
                rest = stripped[len("dyn"):]
                if "=" not in rest:
                    raise SystemFormatError("expected \"dyn <state>' = <expr>\"", lineno)
                lhs, rhs = rest.split("=", 1)
                lhs = lhs.strip()
                if not lhs.endswith("'"):
                    raise SystemFormatError("left side must be <state>'", lineno, indent + 4)
                sname = lhs[:-1].strip()
                if sname in dyn_lines:
                    raise SystemFormatError(f"duplicate dynamics for state {sname}", lineno)
                col0 = indent + len("dyn") + rest.index("=") + 2
                dyn_lines[sname] = (rhs, lineno, col0)
            elif kw == "region":
                if len(parts) < 3:
                    raise SystemFormatError("expected 'region <kind> <arg>'", lineno)
                kind = parts[1]
                if kind in ("ball", "fmin2"):
                    specs.append((kind, float(parts[2])))
                elif kind == "poly":
                    expr = stripped.split(None, 2)[2]
                    specs.append(("poly", expr, lineno))
                else:
                    raise SystemFormatError(f"unknown region kind {kind!r}", lineno)
            elif kw == "box":
                vals = [float(v) for v in parts[1:]]
                if len(vals) % 2:
                    raise SystemFormatError("box needs lo/hi pairs", lineno)
                box = tuple((vals[2 * i], vals[2 * i + 1]) for i in range(len(vals) // 2))
            else:
                raise SystemFormatError(f"unknown keyword {kw!r}", lineno, indent + 1)
        except ValueError as exc:
            if isinstance(exc, SystemFormatError):
                raise
            raise SystemFormatError(str(exc), lineno) from exc
    if name is None:
        raise SystemFormatError("missing 'system' line")
    if not states:
        raise SystemFormatError("missing 'state' line")
    names = states + [p.name for p in params]
    for s in dyn_lines:
        if s not in states:
            ln = dyn_lines[s][1]
            raise SystemFormatError(f"dynamics given for undeclared state {s}", ln)
    f = []
    for s in states:
        if s not in dyn_lines:
            raise SystemFormatError(f"missing dynamics for state {s}")
        expr, ln, col0 = dyn_lines[s]
        try:
            f.append(parse_polynomial(expr, names))
        except UndeclaredIdentifier as exc:
            raise SystemFormatError(f"undeclared identifier {exc.name}", ln, col0 + exc.column - 1) from exc
        except PolySyntaxError as exc:
            raise SystemFormatError(str(exc).rsplit(" (", 1)[0], ln, col0 + exc.column - 1) from exc
    region_specs = []
    for spec in specs:
        if spec[0] == "poly":
            try:
                poly = parse_polynomial(spec[1], names)
            except PolySyntaxError as exc:
                raise SystemFormatError(str(exc), spec[2]) from exc
            region_specs.append(("poly", spec[1], poly))
        else:
            region_specs.append(spec)
    if box is not None and len(box) != len(states):
        raise SystemFormatError(f"box has {len(box)} intervals for {len(states)} states")
    for p in params:
        if p.lo is not None:
            try:
                p.check(p.nominal)
            except ValueError as exc:
                raise SystemFormatError(str(exc)) from exc
    try:
        return make_system(name, states, params, f, region_specs, box)
    except ValueError as exc:
        raise SystemFormatError(str(exc)) from exc


def load_system(path) -> DynSystem:
    with open(path, encoding="utf-8") as fh:
        return parse_system(fh.read())


def jacobian(sys: DynSystem) -> PolyMatrix:
    """Entry (i, j) is d f_i / d x_j; parameters stay symbolic."""
    return PolyMatrix([[fi.diff(j) for j in range(sys.n)] for fi in sys.f])


def bind_parameters(sys: DynSystem, values: Mapping[str, float]) -> DynSystem:
    if not values:
        return sys
    declared = {p.name for p in sys.params}
    for k in values:
        if k not in declared:
            raise KeyError(f"unknown parameter {k!r}")
    f = list(sys.f)
    params = list(sys.params)
    # bind from the last variable backwards so indices stay valid
    for idx in reversed(range(len(params))):
        p = params[idx]
        if p.name in values:
            v = float(values[p.name])
            p.check(v)
            var = sys.n + idx
            f = [fi.bind(var, v) for fi in f]
            params.pop(idx)
    specs = []
    names = sys.states + tuple(p.name for p in params)
    for s in sys.region_specs:
        if s[0] == "poly":
            specs.append(("poly", s[1], parse_polynomial(s[1], names)))
        else:
            specs.append(s)
    return make_system(sys.name, sys.states, params, f, specs, sys.box_given)


def parameter_region(sys: DynSystem, theta_box: Mapping[str, tuple[float, float]]) -> Region:
    """The system's region specs read over states x unbound parameters.

    Constraints keep their parameter dependence (an fmin2 neighborhood moves with
    the equilibrium); the box is the state box followed by ``theta_box``.
    """
    missing = [p.name for p in sys.params if p.name not in theta_box]
    if missing:
        raise KeyError(f"no range given for parameter(s) {', '.join(missing)}")
    extra = set(theta_box) - {p.name for p in sys.params}
    if extra:
        raise KeyError(f"unknown parameter(s) {', '.join(sorted(extra))}")
    base = _build_region(sys.n, sys.nvars, sys.f, sys.region_specs, sys.box_given)
    if base is None:
        raise ValueError(f"system {sys.name} declares no region")
    box = list(base.box)
    for p in sys.params:
        lo, hi = (float(v) for v in theta_box[p.name])
        if not lo < hi:
            raise ValueError(f"empty range for parameter {p.name}")
        p.check(lo)
        p.check(hi)
        box.append((lo, hi))
    specs = base.specs + tuple(("param", p.name) + tuple(theta_box[p.name]) for p in sys.params)
    return Region(base.constraints, tuple(box), specs)


def bind_nominal(sys: DynSystem) -> DynSystem:
    return bind_parameters(sys, {p.name: p.nominal for p in sys.params})


# -- shipped examples ------------------------------------------------------

BUILTIN_TEXT = {
    "moore_greitzer": """\
system moore_greitzer
state phi psi
param delta = -1.2 range -2.0 2.0
dyn phi' = -psi - 1.5*phi^2 - 0.5*phi^3 + delta
dyn psi' = 3*phi - psi
region ball 10.0
region fmin2 0.1
box -10 10 -10 10
""",
    "van_der_pol": """\
system van_der_pol
state x1 x2
param mu = 1.0 range 0.0 5.0
dyn x1' = x2
dyn x2' = mu*x2 - mu*x1^2*x2 - x1
region ball 4.0
region fmin2 0.1
box -4 4 -4 4
""",
    "circular": """\
system circular
state x y
dyn x' = x - y - x^3 - x*y^2
dyn y' = x + y - x^2*y - y^3
region ball 2.0
region fmin2 0.1
box -2 2 -2 2
""",
    "linear_stable_2d": """\
system linear_stable_2d
state x1 x2
dyn x1' = -x1
dyn x2' = -x2
region ball 1.0
box -1 1 -1 1
""",
}


def builtin(name: str) -> DynSystem:
    if name not in BUILTIN_TEXT:
        raise KeyError(f"unknown builtin system {name!r}; choose from {sorted(BUILTIN_TEXT)}")
    return parse_system(BUILTIN_TEXT[name])
