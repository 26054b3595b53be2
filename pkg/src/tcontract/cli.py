"""Command-line front end.

Commands: certify, check, simulate, scan, compose. Every command prints a
human summary and/or writes a machine report (JSON, schema
``tcontract-report/1``) named ``<job>-<digest>.json`` in ``--out``. The
digest covers the job kind, the input file contents and all settings, so a
repeated job overwrites its own report and identical inputs give
byte-identical reports. Wall-clock timing appears only in the text summary.

Exit codes: 0 success, 1 negative result (not certified, hypotheses not
met, no bracket), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources

import numpy as np

from . import __version__
from .certcheck import (STRONG, TRANSVERSE, CertificateError, HypothesisError, MetricCertificate,
                        certificate_to_text, grid_verify, parse_certificate)
from .polycore import PolySyntaxError
from .sysmodel import (BUILTIN_TEXT, DynSystem, Region, SystemFormatError, ball_constraint, bind_parameters,
                       fmin2_constraint, parse_system)

logger = logging.getLogger(__name__)

SCHEMA = "tcontract-report/1"
EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2

CERTIFIED = "certified"
NOT_CERTIFIED = "not_certified"
HYPOTHESIS_ERROR = "hypothesis_error"
SIMULATED_ONLY = "simulated_only"

REFERENCE_CERTS = {"moore_greitzer": "moore_greitzer_reference.cert"}


class InputError(Exception):
    """Bad or missing input; maps to exit code 2."""


# -- inputs -------------------------------------------------------------------

def read_input(spec: str, kind: str = "system") -> tuple[str, str]:
    """Return (label, text) for a path or a ``builtin:NAME`` reference."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if kind == "system":
            if name not in BUILTIN_TEXT:
                raise InputError(f"unknown builtin system {name!r}; choose from {sorted(BUILTIN_TEXT)}")
            return spec, BUILTIN_TEXT[name]
        if name not in REFERENCE_CERTS:
            raise InputError(f"no shipped reference certificate for {name!r}")
        return spec, resources.files("tcontract.data").joinpath(REFERENCE_CERTS[name]).read_text("utf-8")
    try:
        with open(spec, encoding="utf-8") as fh:
            return os.path.basename(spec), fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {kind} file {spec!r}: {exc.strerror}") from exc


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_sets(items) -> dict[str, float]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"--set expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError as exc:
            raise InputError(f"--set {k}: {v!r} is not a number") from exc
    return out


def bind_all(sys_: DynSystem, sets: dict[str, float], keep=()) -> DynSystem:
    """Apply --set bindings, then bind every other parameter (except ``keep``) at its nominal value."""
    own = {k: v for k, v in sets.items() if k in {p.name for p in sys_.params}}
    try:
        sys_ = bind_parameters(sys_, own)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    rest = {p.name: p.nominal for p in sys_.params if p.name not in keep}
    return bind_parameters(sys_, rest)


def override_region(sys_: DynSystem, ball: float | None, fmin2: float | None) -> DynSystem:
    if ball is None and fmin2 is None:
        return sys_
    region = sys_.region
    if ball is None:
        if region is None or region.ball_radius() is None:
            raise InputError("--fmin2 without --ball needs a ball region in the system file")
        ball = region.ball_radius()
    cons = [ball_constraint(sys_.n, ball, sys_.nvars)]
    specs = [("ball", ball)]
    if fmin2 is not None:
        cons.append(fmin2_constraint(sys_.f, fmin2))
        specs.append(("fmin2", fmin2))
    return sys_.with_region(Region(tuple(cons), tuple((-ball, ball) for _ in range(sys_.n)), tuple(specs)))


# -- reports ------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Report:
    def __init__(self, job: str, inputs: dict[str, str], settings: dict):
        self.job = job
        self.inputs = {k: _sha(v) for k, v in inputs.items()}
        self.settings = _clean(settings)
        self.verdict = None
        self.result: dict = {}
        self.lines: list[str] = []
        self.started = time.perf_counter()

    @property
    def digest(self) -> str:
        key = json.dumps({"job": self.job, "inputs": self.inputs, "settings": self.settings}, sort_keys=True)
        return _sha(key)

    def machine(self) -> str:
        doc = {"schema": SCHEMA, "tool": {"name": "tcontract", "version": __version__}, "job": self.job,
               "digest": self.digest, "inputs": self.inputs, "settings": self.settings,
               "verdict": self.verdict, "result": _clean(self.result)}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def text(self) -> str:
        head = [f"tcontract {self.job}: {self.verdict}"]
        tail = [f"elapsed {time.perf_counter() - self.started:.2f} s", f"digest {self.digest[:16]}"]
        return "\n".join(head + self.lines + tail) + "\n"

    def emit(self, args) -> str | None:
        path = None
        if args.report in ("machine", "both"):
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, f"{self.job}-{self.digest[:16]}.json")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(self.machine())
            self.lines.append(f"report {path}")
        if args.report in ("text", "both"):
            sys.stdout.write(self.text())
        return path

    def artifact(self, args, suffix: str, content: str) -> str:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{self.job}-{self.digest[:16]}{suffix}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)
        self.lines.append(f"wrote {path}")
        return path


def _load_system(spec: str, args, keep=()) -> tuple[DynSystem, str]:
    label, text = read_input(spec, "system")
    sys_ = parse_system(text)
    sets = parse_sets(args.set)
    unknown = set(sets) - {p.name for p in sys_.params}
    if unknown:
        raise InputError(f"--set names unknown parameters: {sorted(unknown)}")
    sys_ = bind_all(sys_, sets, keep)
    return sys_, text


def _common_settings(args) -> dict:
    return {"set": dict(sorted(parse_sets(args.set).items())), "seed": args.seed}


# -- commands -----------------------------------------------------------------

def cmd_certify(args) -> int:
    from .synth import certify, default_ansatz
    sys_, text = _load_system(args.system, args)
    sys_ = override_region(sys_, args.ball, args.fmin2)
    if sys_.region is None:
        raise InputError("system has no region of interest (add region lines or --ball)")
    deg_rho = args.degRho if args.mode == TRANSVERSE else 0
    settings = {**_common_settings(args), "mode": args.mode, "lambda": args.lam, "degW": args.degW,
                "degRho": deg_rho, "samples": args.samples, "grid": args.grid, "margin": args.margin,
                "eps_pd": args.eps, "rounds": args.rounds, "region": [list(s) for s in sys_.region.specs]}
    rep = Report("certify", {"system": text}, settings)
    ansatz = default_ansatz(sys_, args.degW, deg_rho)
    res = certify(sys_, ansatz, args.lam, args.mode, n_samples=args.samples, grid_per_axis=args.grid,
                  eps_pd=args.eps, verify_margin=args.margin, seed=args.seed, rounds=args.rounds, jobs=args.jobs)
    if res.ok and res.verification is not None and res.verification.passed:
        rep.verdict = CERTIFIED
        rep.result = {"sampled_margin": res.sampled_margin, "rounds": res.rounds, "n_samples": res.n_samples,
                      "verification": res.verification.as_dict(),
                      "holdout": res.holdout.as_dict() if res.holdout is not None else None}
        cert_text = certificate_to_text(res.certificate, sys_.var_names)
        rep.result["certificate_sha256"] = _sha(cert_text)
        rep.artifact(args, ".cert", cert_text)
        v = res.verification
        rep.lines.append(f"grid points {v.n_points}, worst margin {v.worst_margin:.3e} (required <= {-args.margin:g})")
        code = EXIT_OK
    else:
        rep.verdict = NOT_CERTIFIED
        fail = res.failure.as_dict() if res.failure is not None else {}
        if res.verification is not None:
            fail["verification"] = res.verification.as_dict()
        rep.result = {"rounds": res.rounds, "failure": fail}
        if res.failure is not None:
            rep.lines.append(f"reason: {res.failure.reason}")
            rep.lines.append(f"best margin {res.failure.best_margin:.3e}")
            if res.failure.blocking_point is not None:
                rep.lines.append(f"blocking point {np.round(res.failure.blocking_point, 6).tolist()}")
        code = EXIT_NEGATIVE
    rep.emit(args)
    return code


def _load_cert(spec: str) -> tuple[MetricCertificate, tuple[str, ...], str]:
    _, text = read_input(spec, "certificate")
    try:
        cert, names = parse_certificate(text)
    except HypothesisError:
        raise
    except (CertificateError, PolySyntaxError, ValueError) as exc:
        raise InputError(f"bad certificate file {spec!r}: {exc}") from exc
    return cert, names, text


def cmd_check(args) -> int:
    sys_, text = _load_system(args.system, args)
    sys_ = override_region(sys_, args.ball, args.fmin2)
    cert, names, cert_text = _load_cert(args.certificate)
    mode = args.mode or cert.mode
    settings = {**_common_settings(args), "mode": mode, "grid": args.grid, "margin": args.margin}
    rep = Report("check", {"system": text, "certificate": cert_text}, settings)
    if tuple(names) != sys_.var_names:
        raise InputError(f"certificate variables {list(names)} do not match system variables {list(sys_.var_names)}")
    if sys_.region is None:
        raise InputError("system has no region of interest (add region lines or --ball)")
    try:
        if mode == TRANSVERSE and cert.rho is None:
            raise HypothesisError("transverse check needs a certificate with a multiplier (missing rho)")
        if mode == STRONG and cert.mode == TRANSVERSE:
            cert = MetricCertificate(cert.W, None, cert.lam, cert.eps_pd, STRONG, cert.system, cert.degrees)
        grid = grid_verify(sys_, cert, args.grid, margin_req=args.margin, jobs=args.jobs)
    except HypothesisError as exc:
        rep.verdict = HYPOTHESIS_ERROR
        rep.result = {"error": str(exc)}
        rep.lines.append(str(exc))
        rep.emit(args)
        return EXIT_NEGATIVE
    rep.verdict = CERTIFIED if grid.passed else NOT_CERTIFIED
    rep.result = {"verification": grid.as_dict()}
    rep.lines.append(f"grid points {grid.n_points}, failing {grid.n_fail}, worst margin {grid.worst_margin:.3e} "
                     f"at {np.round(grid.worst_point, 6).tolist()}")
    rep.emit(args)
    return EXIT_OK if grid.passed else EXIT_NEGATIVE


def _vector(text: str, n: int, what: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise InputError(f"{what}: expected comma-separated numbers") from exc
    if len(v) != n:
        raise InputError(f"{what}: expected {n} values, got {len(v)}")
    return v


def cmd_simulate(args) -> int:
    from .simlab import OrbitEstimate, detect_limit_cycle, integrate
    sys_, text = _load_system(args.system, args)
    x0 = _vector(args.x0, sys_.n, "--x0") if args.x0 else np.ones(sys_.n)
    settings = {**_common_settings(args), "x0": x0.tolist(), "tmax": args.tmax, "tol": args.tol,
                "transient": args.transient, "detect": not args.no_detect}
    rep = Report("simulate", {"system": text}, settings)
    traj = integrate(sys_, x0, args.tmax, args.tol)
    rep.verdict = SIMULATED_ONLY
    rep.result = {"final_state": traj.final, "steps": traj.steps, "rejected": traj.rejected,
                  "divergent": traj.divergent, "trajectory_csv_sha256": _sha(traj.to_csv())}
    rep.artifact(args, ".trajectory.csv", traj.to_csv())
    rep.lines.append(f"final state {np.round(traj.final, 6).tolist()} after {traj.steps} steps")
    code = EXIT_NEGATIVE if traj.divergent else EXIT_OK
    if not args.no_detect and not traj.divergent:
        out = detect_limit_cycle(sys_, x0, transient=args.transient)
        if isinstance(out, OrbitEstimate):
            csv = out.to_csv(sys_.states)
            rep.result["orbit"] = {"kind": out.kind, "period": out.period, "periods": list(out.periods),
                                   "anchor": out.anchor, "residual": out.residual, "orbit_csv_sha256": _sha(csv)}
            rep.artifact(args, ".orbit.csv", csv)
            spread = (max(out.periods) - min(out.periods)) / out.period
            rep.lines.append(f"limit cycle, period {out.period:.6f} (spread of {len(out.periods)} returns {spread:.2e})")
        else:
            rep.result["orbit"] = {"kind": out.kind, "point": out.point, "reason": out.reason}
            rep.lines.append(f"no cycle detected: {out.kind}")
    rep.emit(args)
    return code


def cmd_scan(args) -> int:
    from .synth import ScanBudget, bifurcation_scan
    sys_, text = _load_system(args.system, args, keep=(args.param,))
    try:
        sys_.param(args.param)
    except KeyError as exc:
        raise InputError(str(exc)) from exc
    settings = {**_common_settings(args), "param": args.param, "from": args.lo, "to": args.hi,
                "steps": args.steps, "refine": args.refine}
    rep = Report("scan", {"system": text}, settings)
    res = bifurcation_scan(sys_, args.param, args.lo, args.hi, args.steps, ScanBudget(), refine=args.refine,
                           seed=args.seed, jobs=args.jobs)
    csv = res.to_csv()
    rep.artifact(args, ".csv", csv)
    dis = res.disagreements()
    rep.result = {"bracket": None if res.bracket is None else list(res.bracket),
                  "rows": [r.as_dict() for r in sorted(res.rows, key=lambda r: r.value)],
                  "disagreements": [r.value for r in dis], "csv_sha256": _sha(csv)}
    rep.verdict = SIMULATED_ONLY if res.bracket is None else CERTIFIED
    if res.bracket is None:
        rep.lines.append("no contracting/oscillating flip found")
    else:
        rep.lines.append(f"flip bracket [{res.bracket[0]:.6g}, {res.bracket[1]:.6g}]")
    rep.lines.append(f"{len(dis)} certificate/simulation disagreements outside the bracket")
    rep.emit(args)
    return EXIT_OK if res.bracket is not None else EXIT_NEGATIVE


def parse_description(text: str, base: str = ".") -> dict:
    """Interconnection description: ``system1 <path>``, ``system2 <path>``,
    ``input <param> = <expr>``, ``check <name>``, ``k <value>``,
    ``cert1 <path>``, ``cert2 <path>``. Paths are relative to the file."""
    desc: dict = {"inputs": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key in ("system1", "system2", "cert1", "cert2"):
            desc[key] = rest if rest.startswith("builtin:") else os.path.join(base, rest)
        elif key == "input":
            name, eq, expr = rest.partition("=")
            if not eq:
                raise InputError(f"line {lineno}: expected 'input <param> = <expr>'")
            desc["inputs"][name.strip()] = expr.strip()
        elif key == "check":
            desc["check"] = rest
        elif key == "k":
            desc["k"] = float(rest)
        else:
            raise InputError(f"line {lineno}: unknown keyword {key!r}")
    for key in ("system1", "system2"):
        if key not in desc:
            raise InputError(f"interconnection description needs a '{key}' line")
    return desc


def cmd_compose(args) -> int:
    from . import interconnect as ic
    from .simlab import OrbitEstimate, detect_limit_cycle
    from .sysmodel import jacobian
    if args.desc:
        _, dtext = read_input(args.desc, "description")
        desc = parse_description(dtext, os.path.dirname(args.desc))
    else:
        if not args.systems or len(args.systems) != 2:
            raise InputError("compose needs two system files or --desc")
        desc = {"system1": args.systems[0], "system2": args.systems[1], "inputs": {}}
    desc["inputs"].update(dict(s.split("=", 1) for s in args.input or ()))
    check = args.check or desc.get("check", "skewsym")
    k = args.k if args.k is not None else desc.get("k", 1.0)
    sets = parse_sets(args.set)
    texts, systems = {}, []
    for key in ("system1", "system2"):
        _, t = read_input(desc[key], "system")
        texts[key] = t
        systems.append(parse_system(t))
    names1, names2 = set(systems[0].states), set(systems[1].states)
    wired = set(desc["inputs"]) | names1 | names2
    s1 = bind_all(systems[0], sets, keep=wired)
    s2 = bind_all(systems[1], sets, keep=wired)
    settings = {**_common_settings(args), "check": check, "k": k, "grid": args.grid, "tol": args.tol,
                "inputs": dict(sorted(desc["inputs"].items()))}
    for key in ("cert1", "cert2"):
        if getattr(args, key, None):
            desc[key] = getattr(args, key)
        if key in desc:
            texts[key] = read_input(desc[key], "certificate")[1]
    rep = Report("compose", texts, settings)
    try:
        if check == "skewsym":
            comp = ic.feedback_system(s1, s2, desc["inputs"])
            if not comp.is_bound:
                raise InputError(f"unbound parameters after wiring: {[p.name for p in comp.params]}")
            n1 = s1.n
            boxes = [b for s in (s1, s2) for b in (s.region.box if s.region else [(-1.0, 1.0)] * s.n)]
            axes = [np.linspace(lo, hi, args.grid) for lo, hi in boxes]
            X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(boxes))
            J = jacobian(comp).eval_many(X)
            out = ic.skewsym_check(np.eye(n1), np.eye(comp.n - n1), J[:, :n1, n1:], J[:, n1:, :n1], k, X, args.tol)
            rep.result = out.as_dict()
            rep.lines.append(f"skew residual {out.residual:.3e} over {len(X)} points (tol {args.tol:g})")
            passed = out.passed
            if passed and args.x0:
                cyc = detect_limit_cycle(comp, _vector(args.x0, comp.n, "--x0"))
                rep.result["cycle"] = ({"kind": cyc.kind, "period": cyc.period} if isinstance(cyc, OrbitEstimate)
                                       else {"kind": cyc.kind})
                rep.lines.append(f"interconnection simulation: {rep.result['cycle']['kind']}")
        elif check == "hierarchical":
            if "cert1" not in desc or "cert2" not in desc:
                raise HypothesisError("hierarchical check needs verified certificates for both systems (cert1, cert2)")
            c1, _ = parse_certificate(texts["cert1"])
            c2, _ = parse_certificate(texts["cert2"])
            x1 = _vector(args.x1, s1.n, "--x1") if args.x1 else np.zeros(s1.n)
            if s2.region is None:
                raise InputError("driven system needs a region of interest")
            X2 = s2.region.grid(args.grid)
            X = np.concatenate([np.broadcast_to(x1, (len(X2), s1.n)), X2], axis=1)
            out = ic.hierarchical_check(s1, c1, s2, c2, X, margin=args.margin)
            rep.result = out.as_dict()
            rep.lines.append(f"alpha {out.alpha:.4g}, worst margin {out.worst_margin:.3e}")
            passed = out.passed
        else:
            raise InputError(f"unknown check {check!r} (skewsym, hierarchical)")
    except HypothesisError as exc:
        rep.verdict = HYPOTHESIS_ERROR
        rep.result = {"error": str(exc)}
        rep.lines.append(str(exc))
        rep.emit(args)
        return EXIT_NEGATIVE
    rep.verdict = CERTIFIED if passed else NOT_CERTIFIED
    rep.emit(args)
    return EXIT_OK if passed else EXIT_NEGATIVE


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--set", action="append", metavar="NAME=VALUE", help="bind a parameter")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", default=".", help="directory for reports and artifacts")
    common.add_argument("--report", choices=("text", "machine", "both"), default="both")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tcontract", description="Transverse contraction certificates for polynomial systems.")
    p.add_argument("--version", action="version", version=f"tcontract {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", parents=[common], help="synthesize and grid-verify a certificate")
    c.add_argument("system")
    c.add_argument("--mode", choices=(STRONG, TRANSVERSE), default=TRANSVERSE)
    c.add_argument("--lambda", dest="lam", type=float, default=0.1)
    c.add_argument("--degW", type=int, default=4)
    c.add_argument("--degRho", type=int, default=2)
    c.add_argument("--samples", type=int, default=None)
    c.add_argument("--grid", type=int, default=200)
    c.add_argument("--margin", type=float, default=1e-6)
    c.add_argument("--eps", type=float, default=1e-3, help="lower bound on W")
    c.add_argument("--rounds", type=int, default=6)
    c.add_argument("--ball", type=float, default=None, help="replace the region by a ball of this radius")
    c.add_argument("--fmin2", type=float, default=None, help="exclude |f|^2 below this value")
    c.set_defaults(func=cmd_certify)

    k = sub.add_parser("check", parents=[common], help="grid-verify a given certificate")
    k.add_argument("system")
    k.add_argument("certificate", help="certificate file or builtin:NAME for a shipped reference")
    k.add_argument("--mode", choices=(STRONG, TRANSVERSE), default=None)
    k.add_argument("--grid", type=int, default=200)
    k.add_argument("--margin", type=float, default=1e-6)
    k.add_argument("--ball", type=float, default=None)
    k.add_argument("--fmin2", type=float, default=None)
    k.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", parents=[common], help="integrate and detect a limit cycle")
    s.add_argument("system")
    s.add_argument("--x0", default=None)
    s.add_argument("--tmax", type=float, default=100.0)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--transient", type=float, default=200.0)
    s.add_argument("--no-detect", action="store_true")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("scan", parents=[common], help="classify a parameter range")
    b.add_argument("system")
    b.add_argument("--param", required=True)
    b.add_argument("--from", dest="lo", type=float, required=True)
    b.add_argument("--to", dest="hi", type=float, required=True)
    b.add_argument("--steps", type=int, default=21)
    b.add_argument("--refine", type=int, default=2)
    b.set_defaults(func=cmd_scan)

    m = sub.add_parser("compose", parents=[common], help="check an interconnection")
    m.add_argument("systems", nargs="*")
    m.add_argument("--desc", default=None, help="interconnection description file")
    m.add_argument("--check", choices=("skewsym", "hierarchical"), default=None)
    m.add_argument("--k", type=float, default=None)
    m.add_argument("--input", action="append", metavar="PARAM=EXPR")
    m.add_argument("--cert1", default=None)
    m.add_argument("--cert2", default=None)
    m.add_argument("--x1", default=None, help="equilibrium of the driving system (hierarchical)")
    m.add_argument("--x0", default=None, help="simulate the interconnection from here (skewsym)")
    m.add_argument("--grid", type=int, default=9)
    m.add_argument("--tol", type=float, default=1e-8)
    m.add_argument("--margin", type=float, default=1e-6)
    m.set_defaults(func=cmd_compose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, SystemFormatError, PolySyntaxError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except HypothesisError as exc:
        sys.stderr.write(f"hypothesis error: {exc}\n")
        return EXIT_NEGATIVE
    except (CertificateError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
