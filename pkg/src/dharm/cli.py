"""Command-line entry point: parse a diffusion spec, run the analyses,
emit machine-readable reports.

Exit codes: 0 success, 2 invalid spec or arguments, 3 undecided boundary
limit, 4 computation failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import families
from .boundary import classify, validate_spec
from .errors import (ConvergenceUndecided, DharmError, InconsistentSpec)
from .generator import boundary_constants, harmonic_in_domain
from .grids import DEFAULT_GRID_SETTINGS, GridSettings
from .harmonic import basis_header, basis_to_csv, harmonic_space
from .measures import DiffusionSpec, Interval, ScaleFunction, SpeedMeasure
from .oracle import fd_exit_functional, hitting_probability, mc_exit_functional

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNDECIDED = 3
EXIT_FAILED = 4


class SpecFileError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


# ---------------------------------------------------------------------------
# spec file parsing / serialization

def _parse_endpoint(value, path: str) -> float:
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "+inf", "infinity"):
            return math.inf
        if v in ("-inf", "-infinity"):
            return -math.inf
        try:
            return float(v)
        except ValueError:
            raise SpecFileError(path, f"cannot read endpoint {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    raise SpecFileError(path, "endpoint must be a number or 'inf'/'-inf'")


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise SpecFileError(f"{path}.{key}", "missing")
    return doc[key]


def spec_from_dict(doc: dict) -> tuple[DiffusionSpec, dict]:
    """Build a DiffusionSpec from the JSON document; returns (spec, settings)."""
    if not isinstance(doc, dict):
        raise SpecFileError("$", "top level must be an object")
    iv_doc = _need(doc, "interval", "$")
    l = _parse_endpoint(_need(iv_doc, "l", "interval"), "interval.l")
    r = _parse_endpoint(_need(iv_doc, "r", "interval"), "interval.r")
    includes = (bool(iv_doc.get("includes_l", False)),
                bool(iv_doc.get("includes_r", False)))
    e = doc.get("e")
    atoms = []
    speed_doc = doc.get("speed", {}) or {}
    for k, a in enumerate(speed_doc.get("atoms", []) or []):
        try:
            atoms.append((float(a["x"]), float(a["mass"])))
        except (KeyError, TypeError, ValueError):
            raise SpecFileError(f"speed.atoms[{k}]", "need numeric x and mass")

    try:
        if "family" in doc and doc["family"]:
            fam = doc["family"]
            name = _need(fam, "name", "family")
            params = fam.get("params", {}) or {}
            spec = families.make_family(name, bounds=(l, r), includes=includes,
                                        e=e, atoms=atoms, **params)
        else:
            scale_doc = _need(doc, "scale", "$")
            tab = _need(scale_doc, "table", "scale")
            scale = ScaleFunction.from_table(_need(tab, "x", "scale.table"),
                                             _need(tab, "s", "scale.table"))
            sp_tab = _need(speed_doc, "table", "speed")
            speed = SpeedMeasure.from_table(
                _need(sp_tab, "x", "speed.table"),
                _need(sp_tab, "cumulative", "speed.table"), atoms=atoms)
            if e is None:
                raise SpecFileError("e", "missing (tabulated specs need an "
                                    "explicit reference point)")
            spec = DiffusionSpec(Interval(l, r, *includes), scale, speed,
                                 float(e))
    except InconsistentSpec as exc:
        raise SpecFileError("$", str(exc))
    return spec, dict(doc.get("settings", {}) or {})


def spec_to_dict(spec: DiffusionSpec, alphas=(), settings=None) -> dict:
    """Serialize a spec back to the file schema (normalization applied)."""
    iv = spec.interval

    def enc(v):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v

    doc = {
        "interval": {"l": enc(iv.l), "r": enc(iv.r),
                     "includes_l": iv.includes_l, "includes_r": iv.includes_r},
        "e": spec.e,
        "speed": {"atoms": [{"x": p, "mass": w} for p, w in spec.speed.atoms]},
        "alpha": list(alphas),
        "settings": dict(settings or {}),
    }
    if spec.family_tag and "(" not in spec.family_tag:
        doc["family"] = {"name": spec.family_tag, "params": {}}
    elif spec.family_tag:
        name, arg = spec.family_tag.split("(", 1)
        key = {"brownian_drift": "mu", "ou": "theta", "bessel": "delta"}[name]
        doc["family"] = {"name": name, "params": {key: float(arg.rstrip(")"))}}
    if spec.scale.kind == "tabulated":
        doc["scale"] = {"table": {"x": list(map(float, spec.scale.x_knots)),
                                  "s": list(map(float, spec.scale.s_knots
                                                - spec.scale.offset))}}
    if spec.speed.kind == "tabulated":
        doc["speed"]["table"] = {
            "x": list(map(float, spec.speed.x_knots)),
            "cumulative": list(map(float, spec.speed.cdf_knots))}
    return doc


# ---------------------------------------------------------------------------
# argument plumbing

def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="JSON spec file")
    p.add_argument("--family", choices=sorted(families.FAMILIES),
                   help="built-in family instead of a spec file")
    p.add_argument("--interval", default="0,1",
                   help="endpoints 'l,r'; inf allowed (default 0,1)")
    p.add_argument("--closed-l", action="store_true",
                   help="include the left endpoint in the state space")
    p.add_argument("--closed-r", action="store_true")
    p.add_argument("--open-l", action="store_true", help="(default)")
    p.add_argument("--open-r", action="store_true", help="(default)")
    p.add_argument("--e", type=float, default=None, help="reference point")
    p.add_argument("--mu", type=float, default=1.0, help="drift parameter")
    p.add_argument("--theta", type=float, default=1.0,
                   help="mean-reversion parameter")
    p.add_argument("--delta", type=float, default=3.0, help="radial dimension")
    p.add_argument("--atom", action="append", default=[], metavar="X:MASS",
                   help="speed atom, repeatable")
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--json", action="store_true", help="machine output")
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--seed", type=int, default=0)


def _spec_from_args(args) -> tuple[DiffusionSpec, dict]:
    if args.spec:
        try:
            with open(args.spec) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise SpecFileError("$", f"cannot read spec file: {exc}")
        except json.JSONDecodeError as exc:
            raise SpecFileError(f"line {exc.lineno} col {exc.colno}",
                                f"invalid JSON: {exc.msg}")
        return spec_from_dict(doc)
    if not args.family:
        raise SpecFileError("$", "need --spec FILE or --family NAME")
    try:
        l_str, r_str = args.interval.split(",")
    except ValueError:
        raise SpecFileError("--interval", "expected 'l,r'")
    l = _parse_endpoint(l_str.strip(), "--interval")
    r = _parse_endpoint(r_str.strip(), "--interval")
    atoms = []
    for item in args.atom:
        try:
            xs, ms = item.split(":")
            atoms.append((float(xs), float(ms)))
        except ValueError:
            raise SpecFileError("--atom", f"expected X:MASS, got {item!r}")
    params = {}
    if args.family == "brownian_drift":
        params["mu"] = args.mu
    elif args.family == "ou":
        params["theta"] = args.theta
    elif args.family == "bessel":
        params["delta"] = args.delta
        if args.interval == "0,1":
            l, r = 0.0, math.inf
    try:
        spec = families.make_family(args.family, bounds=(l, r),
                                    includes=(args.closed_l, args.closed_r),
                                    e=args.e, atoms=atoms, **params)
    except InconsistentSpec as exc:
        raise SpecFileError("$", str(exc))
    settings = {"seed": args.seed}
    if args.grid_points:
        settings["grid_points"] = args.grid_points
    return spec, settings


def _grid_settings(settings: dict) -> GridSettings:
    n = int(settings.get("grid_points", 0) or 0)
    if n:
        return GridSettings(n_core=n)
    return DEFAULT_GRID_SETTINGS


def _emit(args, payload: dict, human_lines: list[str], out_name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.json:
        print(text)
    else:
        for line in human_lines:
            print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, out_name), "w") as fh:
            fh.write(text + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_classify(args) -> int:
    spec, settings = _spec_from_args(args)
    report_ok = validate_spec(spec)
    if not report_ok.ok:
        print(f"invalid spec: {report_ok.first_failure} "
              f"({report_ok.messages[0]})", file=sys.stderr)
        return EXIT_INVALID
    rep = classify(spec)
    payload = rep.to_dict()
    lines = [f"interval {spec.interval}  reference point e = {spec.e}"]
    for ep in (rep.left, rep.right):
        lines.append(
            f"  {ep.side}: {ep.klass.value:9s} role={ep.role.value:10s} "
            f"sigma={ep.sigma_value:.6g} mu={ep.mu_value:.6g} "
            f"approachable={ep.approachable}")
    lines.append(f"effective interval: {rep.effective_interval}")
    _emit(args, payload, lines, "boundary.json")
    return EXIT_OK


def cmd_harmonic(args) -> int:
    spec, settings = _spec_from_args(args)
    alphas = args.alpha if args.alpha else settings.get("alpha", [1.0])
    gs = _grid_settings(settings)
    results = []
    for a in alphas:
        basis = harmonic_space(spec, float(a), gs)
        header = basis_header(basis)
        csv_text = basis_to_csv(basis)
        results.append((float(a), header, csv_text))
    lines = []
    for a, header, _ in results:
        lines.append(f"alpha={a}: dim={header['dim']} span={header['span_desc']} "
                     f"C={header['C']} c_l={header['c_l']} c_r={header['c_r']}")
    payload = {"bases": [h for _, h, _ in results]}
    _emit(args, payload, lines, "harmonic.json")
    if args.out:
        for a, header, csv_text in results:
            tag = ("%g" % a).replace("-", "m").replace(".", "p")
            with open(os.path.join(args.out, f"harmonic_{tag}.csv"), "w",
                      newline="") as fh:
                fh.write(csv_text)
            with open(os.path.join(args.out, f"harmonic_{tag}.json"), "w") as fh:
                fh.write(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec, settings = _spec_from_args(args)
    alphas = args.alpha if args.alpha else [0.0]
    target = args.target
    x = args.x
    if x is None:
        raise SpecFileError("--x", "verification needs a start point")
    gs = _grid_settings(settings)
    n_paths = args.paths
    records = []
    for a in alphas:
        a = float(a)
        if a == 0:
            analytic = hitting_probability(spec, x, target)
            quantity = f"hit({target}) from x={x}"
        else:
            basis = harmonic_space(spec, a, gs)
            member = basis.member(target)
            if member is None:
                raise DharmError(f"side {target} carries no harmonic member "
                                 "(not reflecting)")
            analytic = float(member(x))
            quantity = f"u_{target}^alpha(x={x}), alpha={a}"
        fd = fd_exit_functional(spec, a, target, x, n_cells=args.fd_cells)
        mc = mc_exit_functional(spec, a, target, x, n_paths=n_paths,
                                seed=args.seed, n_cells=args.mc_cells,
                                confidence=args.confidence)
        fd_ok = abs(fd.value - analytic) <= max(1e-4, 3.0 * fd.half_width)
        mc_ok = mc.brackets(analytic) or mc.method == "FD" and \
            abs(mc.value - analytic) <= 1e-6
        verdict = "PASS" if (fd_ok and mc_ok) else "FAIL"
        records.append({
            "quantity": quantity,
            "analytic": analytic,
            "fd": fd.value,
            "fd_half_width": fd.half_width,
            "mc": mc.value,
            "ci": [mc.value - mc.half_width, mc.value + mc.half_width],
            "mc_method": mc.method,
            "verdict": verdict,
        })
    payload = {"records": records, "seed": args.seed, "paths": n_paths,
               "confidence": args.confidence}
    lines = [f"{r['quantity']}: analytic={r['analytic']:.8g} "
             f"fd={r['fd']:.8g} mc={r['mc']:.8g} "
             f"ci=[{r['ci'][0]:.6g}, {r['ci'][1]:.6g}] -> {r['verdict']}"
             for r in records]
    _emit(args, payload, lines, "verify.json")
    return EXIT_OK if all(r["verdict"] == "PASS" for r in records) else EXIT_FAILED


def cmd_generator(args) -> int:
    spec, settings = _spec_from_args(args)
    alphas = args.alpha if args.alpha else [1.0]
    gs = _grid_settings(settings)
    payloads = []
    lines = []
    members_csv_path = None
    for a in alphas:
        verdict = harmonic_in_domain(spec, float(a), gs)
        doc = verdict.to_dict()
        if args.out and verdict.members:
            os.makedirs(args.out, exist_ok=True)
            tag = ("%g" % a).replace("-", "m").replace(".", "p")
            members_csv_path = os.path.join(args.out, f"members_{tag}.csv")
            with open(members_csv_path, "w", newline="") as fh:
                names = [name for name, _ in verdict.members]
                fh.write(",".join(["x", "s(x)"] + names) + "\n")
                g0 = verdict.members[0][1]
                for i in range(g0.x.size):
                    row = [repr(float(g0.x[i])), repr(float(g0.s[i]))]
                    row += [repr(float(fn.values[i])) for _, fn in verdict.members]
                    fh.write(",".join(row) + "\n")
        doc["members_csv_path"] = members_csv_path
        payloads.append(doc)
        lines.append(f"alpha={a}: subspace {verdict.subspace} "
                     f"(atoms l={verdict.m_atom_l}, r={verdict.m_atom_r}; "
                     f"c_l={verdict.c_l}, c_r={verdict.c_r})")
    _emit(args, {"verdicts": payloads}, lines, "generator.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dharm",
        description="Boundary classification, harmonic bases, exit-time "
                    "functionals and generator-domain tests for "
                    "one-dimensional diffusions given by scale and speed.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cls = sub.add_parser("classify", help="endpoint classification report")
    _add_spec_args(p_cls)
    p_cls.set_defaults(fn=cmd_classify)

    p_har = sub.add_parser("harmonic", help="harmonic basis CSV + summary")
    _add_spec_args(p_har)
    p_har.add_argument("--alpha", type=float, action="append")
    p_har.set_defaults(fn=cmd_harmonic)

    p_ver = sub.add_parser("verify", help="analytic vs FD vs MC cross-check")
    _add_spec_args(p_ver)
    p_ver.add_argument("--alpha", type=float, action="append")
    p_ver.add_argument("--x", type=float)
    p_ver.add_argument("--target", choices=("l", "r"), default="l")
    p_ver.add_argument("--paths", type=int, default=100_000)
    p_ver.add_argument("--confidence", type=float, default=0.99)
    p_ver.add_argument("--fd-cells", type=int, default=1024)
    p_ver.add_argument("--mc-cells", type=int, default=64)
    p_ver.set_defaults(fn=cmd_verify)

    p_gen = sub.add_parser("generator",
                           help="harmonic functions in the generator domain")
    _add_spec_args(p_gen)
    p_gen.add_argument("--alpha", type=float, action="append")
    p_gen.set_defaults(fn=cmd_generator)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SpecFileError as exc:
        print(f"spec error at {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceUndecided as exc:
        print(f"undecided boundary limit: {exc}", file=sys.stderr)
        return EXIT_UNDECIDED
    except DharmError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
