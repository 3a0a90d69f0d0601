"""Command line driver: ``gkz info|solve|verify``.

Configs are TOML or JSON files (or the name of a bundled config).  Results
go to stdout as JSON, logs to stderr.  Exit codes: 0 pass, 1 fail,
2 input error, 3 numerical non-convergence.
"""
from __future__ import annotations

import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import continuation as cont
from .gamma_series import (OutsideDomain, TailBoundExceeded, TruncationPolicy, choose_exponents,
                           evaluate_Psi, evaluate_Xi, xi_residuals)
from .ktheory import PresentationViolation, build_kring, verify_presentation
from .secondary_geometry import Inconclusive, PathInfeasible, _lift, cmath_rect, domain_contains, domain_for
from .sr_ring import mbeta_quotient, quotient_basis
from .triangulation import (ConfigurationError, normalized_volume, regular_triangulation,
                            validate_configuration)

log = logging.getLogger("gkzflop")

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config files

SETTINGS_DEFAULTS = {"bound": 12, "nodes": 64, "tolerance": 1e-6, "samples": 3, "support_bound": 10}
TOP_KEYS = {"name", "points", "height", "beta", "triangulations", "flips", "evaluation", "settings"}
EVAL_KEYS = {"triangulation", "z", "args"}


@dataclass
class EvaluationPoint:
    triangulation: str
    z: List[complex]
    args: Optional[List[float]] = None
    args_over_pi: Optional[List[str]] = None


@dataclass
class ConfigFile:
    name: str
    points: List[List[int]]
    height: Optional[List[int]]
    beta: Optional[List[int]]
    triangulations: Dict[str, List]
    flips: Dict[str, List[str]]
    evaluation: List[EvaluationPoint]
    settings: Dict[str, float] = field(default_factory=dict)

    def resolved(self) -> dict:
        """Fully resolved config, defaults included, in a JSON friendly form."""
        ev = []
        for e in self.evaluation:
            row = {"triangulation": e.triangulation, "z": [_cx(x) for x in e.z]}
            if e.args is not None:
                row["args"] = [_num(a) for a in e.args]
            if e.args_over_pi is not None:
                row["args_over_pi"] = list(e.args_over_pi)
            ev.append(row)
        return {"name": self.name, "points": self.points, "height": self.height, "beta": self.beta,
                "triangulations": {k: [str(x) for x in v] for k, v in self.triangulations.items()},
                "flips": self.flips, "evaluation": ev, "settings": dict(self.settings)}


def _reject_unknown(d: dict, allowed, where: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {extra} in {where}")


def _int_list(x, where):
    if not isinstance(x, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in x):
        raise ConfigError(f"{where} must be a list of integers")
    return list(x)


def _parse_arg(a, where):
    """Radians as a number, or an exact multiple of pi as a string like ``"-1/4"``."""
    if isinstance(a, str):
        try:
            q = Fraction(a)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad rational multiple of pi {a!r}") from exc
        return float(q) * math.pi, str(q)
    if isinstance(a, (int, float)) and not isinstance(a, bool):
        return float(a), None
    raise ConfigError(f"{where}: argument must be a number or a string")


def parse_config(data: dict) -> ConfigFile:
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    _reject_unknown(data, TOP_KEYS, "config")
    if "points" not in data:
        raise ConfigError("missing key 'points'")
    pts = data["points"]
    if not isinstance(pts, list) or not pts:
        raise ConfigError("'points' must be a nonempty list of integer vectors")
    points = [_int_list(p, f"points[{i}]") for i, p in enumerate(pts)]
    height = _int_list(data["height"], "height") if "height" in data else None
    beta = _int_list(data["beta"], "beta") if "beta" in data else None
    tris = data.get("triangulations", {})
    if not isinstance(tris, dict):
        raise ConfigError("'triangulations' must be a table of height vectors")
    triangulations = {}
    for k, v in tris.items():
        if not isinstance(v, list) or not all(isinstance(a, (int, str)) and not isinstance(a, bool) for a in v):
            raise ConfigError(f"triangulations.{k} must be a list of integers or rationals")
        try:
            triangulations[k] = [Fraction(a) for a in v]
        except ValueError as exc:
            raise ConfigError(f"triangulations.{k}: {exc}") from exc
    flips = {}
    for k, v in data.get("flips", {}).items():
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(a, str) for a in v)):
            raise ConfigError(f"flips.{k} must be a pair [plus, minus] of triangulation names")
        for a in v:
            if a not in triangulations:
                raise ConfigError(f"flips.{k}: unknown triangulation {a!r}")
        flips[k] = list(v)
    evaluation = []
    for i, e in enumerate(data.get("evaluation", [])):
        where = f"evaluation[{i}]"
        if not isinstance(e, dict):
            raise ConfigError(f"{where} must be a table")
        _reject_unknown(e, EVAL_KEYS, where)
        if e.get("triangulation") not in triangulations:
            raise ConfigError(f"{where}: unknown triangulation {e.get('triangulation')!r}")
        zs = e.get("z")
        if not isinstance(zs, list) or not all(isinstance(p, list) and len(p) == 2 for p in zs):
            raise ConfigError(f"{where}.z must be a list of [re, im] pairs")
        z = [complex(float(a), float(b)) for a, b in zs]
        args = exact = None
        if "args" in e:
            parsed = [_parse_arg(a, f"{where}.args") for a in e["args"]]
            if len(parsed) != len(z):
                raise ConfigError(f"{where}.args has the wrong length")
            args = [p[0] for p in parsed]
            if all(p[1] is not None for p in parsed):
                exact = [p[1] for p in parsed]
            for zj, aj in zip(z, args):
                if zj == 0 or abs(math.remainder(np.angle(zj) - aj, 2 * math.pi)) > 1e-9:
                    raise ConfigError(f"{where}: args do not match the arguments of z")
                if not (-math.pi < aj <= math.pi):
                    raise ConfigError(f"{where}: only principal arguments in (-pi, pi] are supported")
        evaluation.append(EvaluationPoint(e["triangulation"], z, args, exact))
    settings = dict(SETTINGS_DEFAULTS)
    s_in = data.get("settings", {})
    if not isinstance(s_in, dict):
        raise ConfigError("'settings' must be a table")
    _reject_unknown(s_in, SETTINGS_DEFAULTS, "settings")
    for k, v in s_in.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"settings.{k} must be a number")
        settings[k] = type(SETTINGS_DEFAULTS[k])(v)
    return ConfigFile(str(data.get("name", "")), points, height, beta, triangulations, flips, evaluation,
                      settings)


def bundled_configs() -> List[str]:
    root = resources.files("gkzflop") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_config(path: str) -> ConfigFile:
    """Read a TOML/JSON file, or a bundled config by name.

    Raises
    ------
    ConfigError
        with the parser's line information for syntax errors.
    """
    p = Path(path)
    if not p.exists():
        if path in bundled_configs():
            text = (resources.files("gkzflop") / "data" / f"{path}.toml").read_text()
            suffix = ".toml"
        else:
            raise ConfigError(f"no such config file: {path}")
    else:
        text = p.read_text()
        suffix = p.suffix.lower()
    try:
        if suffix == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    return parse_config(data)


# ---------------------------------------------------------------------------
# JSON helpers

def _num(x) -> float:
    """Float rounded to 12 significant digits for stable output."""
    x = float(x)
    if x == 0 or not math.isfinite(x):
        return 0.0 if x == 0 else x
    return float(f"{x:.12e}")


def _cx(z) -> List[float]:
    z = complex(z)
    return [_num(z.real), _num(z.imag)]


def _vec(v) -> List[List[float]]:
    return [_cx(x) for x in v]


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# commands

def _setup(cfg: ConfigFile):
    conf = validate_configuration(cfg.points, cfg.height)
    tris = {k: regular_triangulation(conf, v, name=k) for k, v in cfg.triangulations.items()}
    return conf, tris


def _beta(cfg: ConfigFile, conf):
    beta = tuple(cfg.beta) if cfg.beta is not None else tuple([0] * conf.d)
    if len(beta) != conf.d:
        raise ConfigError(f"beta must have {conf.d} entries")
    return beta


def cmd_info(cfg: ConfigFile) -> dict:
    conf, tris = _setup(cfg)
    out = {"n": conf.n, "d": conf.d, "volume": normalized_volume(conf),
           "L_basis": [list(b) for b in conf.relation_basis], "triangulations": {}}
    for name in sorted(tris):
        T = tris[name]
        out["triangulations"][name] = {
            "height": [str(x) for x in T.height],
            "maximal_cones": [list(c) for c in T.maximal_cones],
            "box": [{"v": list(b.v), "q": [str(x) for x in b.q], "sigma": list(b.sigma_v)}
                    for b in T.box_elements()],
        }
    return {"command": "info", "config": cfg.resolved(), "result": out}


def default_point(T, index: int = 0):
    """A point deep in the convergence domain with small fixed arguments."""
    U = domain_for(T)
    w = _lift(T, [2 * x for x in U.offset]) if T.config.rank_L else [0] * T.config.n
    args = [(-1) ** (j + index) * (0.1 + 0.05 * ((j + index) % 3)) for j in range(T.config.n)]
    return [cmath_rect(math.exp(-float(x)), a) for x, a in zip(w, args)]


def cmd_solve(cfg: ConfigFile, triangulation: Optional[str] = None, z_index: Optional[int] = None) -> dict:
    conf, tris = _setup(cfg)
    if not tris:
        raise ConfigError("config defines no triangulations")
    name = triangulation or next(iter(cfg.triangulations))
    if name not in tris:
        raise ConfigError(f"unknown triangulation {name!r}")
    T = tris[name]
    beta = _beta(cfg, conf)
    pts = [e for e in cfg.evaluation if e.triangulation == name]
    if z_index is not None:
        if not 0 <= z_index < len(pts):
            raise ConfigError(f"--z {z_index} out of range ({len(pts)} evaluation points)")
        z, src = pts[z_index].z, f"evaluation[{z_index}]"
    elif pts:
        z, src = pts[0].z, "evaluation[0]"
    else:
        z, src = default_point(T), "default"
    policy = TruncationPolicy(bound=int(cfg.settings["bound"]))
    K = build_kring(T)
    S = quotient_basis(T)
    choice = choose_exponents(T, beta)
    Xi = evaluate_Xi(K, choice, z, policy)
    Psi = evaluate_Psi(S, choice, z, policy)
    res = xi_residuals(K, choice, z, policy)
    result = {
        "triangulation": name, "beta": list(beta), "z": _vec(z), "z_source": src,
        "args": [_num(np.angle(x)) for x in z],
        "xi": _vec(Xi.vector), "psi": _vec(Psi.vector),
        "functionals": _vec(Xi.vector),
        "tail_bound": _num(Xi.tail_bound), "terms": Xi.terms,
        "residuals": {"max_box": _num(res["max_box"]), "max_euler": _num(res["max_euler"])},
        "branch": choice.record(),
        "sectors": [{"v": list(s.box.v), "q": [str(x) for x in s.box.q], "dim": s.dim} for s in K.sectors],
    }
    return {"command": "solve", "config": cfg.resolved(), "result": result}


def _unessential_faces(ctx) -> List[Tuple[int, ...]]:
    """Faces of unessential cones lying in no essential cone on either side."""
    ess = [set(c) for c in ctx.ess_plus + ctx.ess_minus]
    I = set(ctx.circuit.support)
    out = set()
    for c in ctx.T_minus.maximal_cones:
        if c in ctx.ess_minus:
            continue
        for k in range(1, len(c) + 1):
            for J in combinations(c, k):
                if not (set(J) & I) and not any(set(J) <= e for e in ess):
                    out.add(J)
    return sorted(out)


def cmd_verify(cfg: ConfigFile, flip: Optional[str] = None, nodes: Optional[int] = None,
               tolerance: Optional[float] = None, bound: Optional[int] = None,
               negative_control: bool = False) -> dict:
    conf, tris = _setup(cfg)
    if not cfg.flips:
        raise ConfigError("config defines no flips")
    name = flip or next(iter(cfg.flips))
    if name not in cfg.flips:
        raise ConfigError(f"unknown flip {name!r}")
    plus, minus = cfg.flips[name]
    Tp, Tm = tris[plus], tris[minus]
    beta = _beta(cfg, conf)
    nodes = int(nodes or cfg.settings["nodes"])
    tol = float(tolerance if tolerance is not None else cfg.settings["tolerance"])
    policy = TruncationPolicy(bound=int(bound or cfg.settings["bound"]))
    checks = {}
    vol = normalized_volume(conf)
    dims = {}
    for side, T in (("plus", Tp), ("minus", Tm)):
        dims[side] = {"quotient": quotient_basis(T).dim, "leading_module": mbeta_quotient(T, beta).dim}
    checks["dimension"] = {"volume": vol, **dims,
                           "passed": all(d["quotient"] == vol and d["leading_module"] >= vol
                                         for d in dims.values())}
    pres = {}
    for side, T in (("plus", Tp), ("minus", Tm)):
        pres[side] = {k: _num(v) for k, v in verify_presentation(build_kring(T)).items()}
    checks["presentation"] = {**pres, "passed": True}
    ctx = cont.build_flip_context(Tp, Tm)
    checks["box_correspondence"] = {**ctx.checks["box_correspondence"],
                                    "passed": all(ctx.checks["box_correspondence"].values())}
    sss = cont.check_supports(ctx, beta, int(cfg.settings["support_bound"]))
    checks["supports"] = {**sss, "bound": int(cfg.settings["support_bound"]), "passed": all(sss.values())}
    Km = ctx.K_minus
    Pm = np.eye(Km.dim, dtype=complex)
    for j in ctx.circuit.I_minus:
        Pm = Pm @ (np.eye(Km.dim) - Km.R_inv[j])
    halves = {"plus": _num(cont.phi_annihilation(ctx)), "minus": _num(np.max(np.abs(Pm)))}
    checks["circuit_halves"] = {**halves, "passed": max(halves.values()) <= 1e-10}
    fm = cont.fm_matrix(ctx, nodes)
    worst = 0.0
    for m in cont._monomials(conf.n, 3):
        worst = max(worst, float(np.max(np.abs(cont.fm_apply(ctx, m, nodes) - cont.fm_oracle(ctx, m)))))
    checks["fm_oracle"] = {"max_difference": _num(worst), "degree": 3, "consistency": _num(fm.consistency),
                           "recurrence": _num(cont.pushforward_recurrence_defect(ctx)),
                           "passed": worst <= 1e-8 and fm.consistency <= 1e-8}
    faces = _unessential_faces(ctx)
    une = cont.unessential_fixed(ctx, faces[0], cont._monomials(conf.n, 2), nodes) if faces else 0.0
    checks["unessential"] = {"faces": [list(J) for J in faces], "max_difference": _num(une),
                             "passed": une <= 1e-8}
    samples, paths = cont.sample_points(Tp, Tm, int(cfg.settings["samples"]))
    if len(samples) < int(cfg.settings["samples"]):
        raise PathInfeasible(f"only {len(samples)} sample points found")
    sign = -1.0 if negative_control else 1.0
    rep = cont.verify_diagram(ctx, beta, samples, policy, tol, nodes, kernel_sign=sign)
    diagram = _diagram_dict(rep)
    diagram["paths"] = [{"A": str(p.A), "w_minus": [str(x) for x in p.w_minus],
                         "args": [_num(a) for a in p.args], "arg_y": _num(p.arg_y())} for p in paths]
    diagram["kernel_sign"] = sign
    checks["diagram"] = diagram
    if not negative_control:
        neg = cont.verify_diagram(ctx, beta, samples, policy, tol, nodes, kernel_sign=-1.0)
        shift = [0] * conf.n
        shift[ctx.circuit.I_plus[0]] = 1
        br = cont.verify_diagram(ctx, beta, samples, policy, tol, nodes, branch_shift=shift)
        checks["controls"] = {
            "kernel_sign_flipped": [_num(r["residual"]) for r in neg.samples],
            "branch_shifted": [_num(r["residual"]) for r in br.samples],
            "kernel_vanishes": bool(cont.kernel_vanishes(ctx)),
        }
    passed = all(c.get("passed", True) for c in checks.values())
    result = {"flip": name, "plus": plus, "minus": minus, "beta": list(beta), "circuit": list(ctx.h),
              "thetas": [str(t) for t in ctx.global_thetas], "root_order": ctx.order,
              "checks": checks, "status": "PASS" if passed else "FAIL"}
    return {"command": "verify", "config": cfg.resolved(), "result": result}


def _diagram_dict(rep) -> dict:
    rows = []
    for r in rep.samples:
        rows.append({"z": [[_num(a), _num(b)] for a, b in r["z"]], "residual": _num(r["residual"]),
                     "scale": _num(r["scale"]), "mb_tail_bound": _num(r["mb_tail_bound"]),
                     "fm_tail_bound": _num(r["fm_tail_bound"]),
                     "per_sector": {k: _num(v) for k, v in r["per_sector"].items()},
                     "quadrature": {k: _num(v) for k, v in r["quadrature"].items()}})
    return {"passed": rep.passed, "tolerance": rep.tolerance, "samples": rows,
            "fm_consistency": _num(rep.fm_consistency), "fm_quadrature": _num(rep.fm_quadrature),
            "phi_annihilation": _num(rep.phi_annihilation)}


# ---------------------------------------------------------------------------
# click wrapper

INPUT_ERRORS = (ConfigError, ConfigurationError, OutsideDomain, PathInfeasible, PresentationViolation)
NUMERIC_ERRORS = (cont.QuadratureNotConverged, TailBoundExceeded, Inconclusive, cont.PhiTermNotAnnihilated)


def _run(fn, *a, **kw) -> int:
    try:
        out = fn(*a, **kw)
    except INPUT_ERRORS as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except NUMERIC_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    click.echo(dumps(out))
    status = out["result"].get("status", "PASS")
    return EXIT_PASS if status == "PASS" else EXIT_FAIL


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        log.error("input error: %s", exc)
        sys.exit(EXIT_INPUT)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging on stderr.")
def main(verbose):
    """GKZ series, K-theory and the flip diagram on small point configurations."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, help="TOML/JSON file or bundled config name.")
def info(config_path):
    """Lattice data, volume, triangulations and Box elements."""
    sys.exit(_run(cmd_info, _load(config_path)))


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--triangulation", default=None)
@click.option("--z", "z_index", type=int, default=None, help="Index into the evaluation points.")
@click.option("--bound", type=int, default=None)
def solve(config_path, triangulation, z_index, bound):
    """Gamma series values at one point of a convergence domain."""
    cfg = _load(config_path)
    if bound is not None:
        cfg.settings["bound"] = bound
    sys.exit(_run(cmd_solve, cfg, triangulation, z_index))


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--flip", default=None)
@click.option("--bound", type=int, default=None)
@click.option("--nodes", type=int, default=None)
@click.option("--tolerance", type=float, default=None)
@click.option("--negative-control", is_flag=True, help="Flip the kernel sign; the diagram must fail.")
def verify(config_path, flip, bound, nodes, tolerance, negative_control):
    """Full check of a flip, ending with the commuting diagram."""
    cfg = _load(config_path)
    sys.exit(_run(cmd_verify, cfg, flip, nodes, tolerance, bound, negative_control))


if __name__ == "__main__":  # pragma: no cover
    main()
