"""Command line front end.

Every run resolves a flat configuration (defaults < config file < flags),
validates it, executes one command and writes its artifacts plus
``manifest.json`` into the output directory.  The manifest is written on
failure paths too.

Exit status: 0 success, 2 invalid configuration, 3 solver did not converge.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, backend
from .constants import Params, constants_table
from .errors import ConfigurationError, DomainError, NodalFracError

log = logging.getLogger("nodalfrac")

COMMANDS = ("solve", "sweep-lambda", "sweep-s", "extend", "constants", "report")

# key -> (type, default, help)
KEYS = {
    "n": (int, 7, "ambient dimension"),
    "s": (float, 0.75, "fractional order in (0, 1)"),
    "R": (float, 1.0, "ball radius"),
    "lambda_frac": (float, 0.1, "lambda as a fraction of lambda_1"),
    "lambda_fracs": (str, "0.3,0.2,0.1,0.05", "decreasing list for sweep-lambda"),
    "s_list": (str, "0.75,0.85,0.95", "increasing list for sweep-s"),
    "N": (int, 256, "number of elements"),
    "gamma_inner": (float, 6.0, "grading exponent at the origin"),
    "gamma_outer": (float, 2.0, "grading exponent at the boundary"),
    "tol": (float, 1e-8, "descent tolerance (preconditioned residual)"),
    "max_iters": (int, 4000, "descent step limit"),
    "init": (str, "tower", "tower | oscillatory | single_bubble | multistart"),
    "seed": (int, 0, "random seed"),
    "out": (str, "out", "output directory"),
    "solution": (str, "", "extend: existing solution.csv instead of solving"),
    "backend": (str, "", "cython | python (default: best available)"),
}


class ValidationError(ConfigurationError):
    pass


class NotConverged(NodalFracError):
    pass


def _parse(typ, key, raw):
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {path}")
    out = {}
    for no, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{no}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(command: str, file_cfg: dict, flags: dict) -> dict:
    unknown = sorted(set(file_cfg) - set(KEYS))
    if unknown:
        raise ValidationError("unknown config keys: " + ", ".join(unknown))
    cfg = {k: d for k, (_, d, _) in KEYS.items()}
    for k, v in file_cfg.items():
        cfg[k] = _parse(KEYS[k][0], k, v)
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    cfg["command"] = command
    validate(cfg)
    return cfg


def _floats(text, key):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"{key}: expected a comma separated list of numbers") from None


def validate(cfg: dict) -> None:
    cmd = cfg["command"]
    if not 0 < cfg["s"] < 1:
        raise ValidationError(f"s = {cfg['s']} must lie in (0, 1)")
    if cfg["n"] < 1 or cfg["R"] <= 0:
        raise ValidationError("need n >= 1 and R > 0")
    if cfg["N"] < 16:
        raise ValidationError("N must be at least 16")
    if cfg["backend"] not in ("", "cython", "python"):
        raise ValidationError(f"unknown backend {cfg['backend']!r}")
    if cfg["init"] not in ("tower", "oscillatory", "single_bubble", "multistart"):
        raise ValidationError(f"unknown init {cfg['init']!r}")
    if cmd in ("solve", "sweep-lambda", "extend") and not cfg["n"] > 6 * cfg["s"]:
        raise ValidationError(f"n = {cfg['n']}, s = {cfg['s']}: radial nodal solutions need n > 6s")
    if cmd in ("solve", "extend") and not 0 < cfg["lambda_frac"] < 1:
        raise ValidationError("lambda_frac must lie in (0, 1)")
    if cmd == "sweep-lambda":
        fr = _floats(cfg["lambda_fracs"], "lambda_fracs")
        if not fr or any(not 0 < f < 1 for f in fr) or any(b >= a for a, b in zip(fr, fr[1:])):
            raise ValidationError("lambda_fracs must be a strictly decreasing list in (0, 1)")
    if cmd == "sweep-s":
        sl = _floats(cfg["s_list"], "s_list")
        if any(not 0 < x < 1 for x in sl) or any(b <= a for a, b in zip(sl, sl[1:])):
            raise ValidationError("s_list must be strictly increasing in (0, 1)")
        bad = [x for x in sl if not cfg["n"] > 6 * x]
        if bad:
            raise ValidationError(f"s = {bad}: radial nodal solutions need n > 6s")


def _opts(cfg):
    from .solver import SolverOptions
    return SolverOptions(tol=cfg["tol"], max_iters=cfg["max_iters"], seed=cfg["seed"])


def _forms(cfg, params):
    from .discretization import assemble_forms, build_grid
    grid = build_grid(params, cfg["N"], cfg["gamma_inner"], cfg["gamma_outer"])
    return assemble_forms(grid, params, backend=cfg["backend"] or None)


def _solve(cfg, params0, forms):
    from .discretization import first_eigenvalue
    from .solver import make_initial, minimize, multistart, positive_level
    p = params0.with_lambda(cfg["lambda_frac"] * first_eigenvalue(forms))
    c_N = positive_level(p, forms)
    if cfg["init"] == "multistart":
        sol, _ = multistart(p, forms, opts=_opts(cfg))
    else:
        sol = minimize(p, forms, make_initial(cfg["init"], p, forms.grid), _opts(cfg), c_N=c_N)
    return p, sol


def cmd_constants(cfg, out: Path, times: dict) -> int:
    t = time.perf_counter()
    table = constants_table(cfg["n"], cfg["s"])
    times["constants"] = time.perf_counter() - t
    d = table.as_dict()
    (out / "constants.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    print(json.dumps(d, indent=2, sort_keys=True))
    return 0


def cmd_solve(cfg, out: Path, times: dict) -> int:
    from .solver import write_report_json, write_solution_csv
    params0 = Params(cfg["n"], cfg["s"], cfg["R"])
    t = time.perf_counter()
    forms = _forms(cfg, params0)
    times["assemble"] = time.perf_counter() - t
    t = time.perf_counter()
    p, sol = _solve(cfg, params0, forms)
    times["solve"] = time.perf_counter() - t
    write_solution_csv(sol, out / "solution.csv")
    write_report_json(sol, out / "report.json", {"lambda_frac": cfg["lambda_frac"]})
    print(f"energy {sol.report.energy:.10g}  sign changes {sol.sign_count}  "
          f"residual {sol.residual_norm:.3g}  converged {sol.converged}")
    if not sol.converged:
        raise NotConverged(f"residual {sol.residual_norm:.3g} after {sol.iterations} steps")
    return 0


def cmd_sweep_lambda(cfg, out: Path, times: dict) -> int:
    from .asymptotics import (bubble_fit, energy_limits_check, origin_check, rescale_positive,
                              sweep_lambda, trend_report, write_summary_json, write_sweep_csv)
    params0 = Params(cfg["n"], cfg["s"], cfg["R"])
    t = time.perf_counter()
    forms = _forms(cfg, params0)
    times["assemble"] = time.perf_counter() - t
    t = time.perf_counter()
    fracs = _floats(cfg["lambda_fracs"], "lambda_fracs")
    recs, sols = sweep_lambda(params0, fracs, forms=forms, opts=_opts(cfg),
                              init=cfg["init"] if cfg["init"] != "multistart" else "tower",
                              keep_solutions=True)
    times["sweep"] = time.perf_counter() - t
    write_sweep_csv(recs, out / "sweep.csv")
    fits = []
    for r, s in zip(recs, sols):
        if r.sign_count >= 1:
            p = params0.with_lambda(r.lam)
            fits.append(dict(lambda_frac=r.lambda_frac, fit=bubble_fit(rescale_positive(r, s.u, p), p)))
    summary = dict(
        trends=trend_report(recs, cfg["n"], cfg["s"]),
        energy_limits=energy_limits_check(recs, cfg["n"], cfg["s"]),
        origin=origin_check(recs, cfg["s"]),
        bubble_fits=fits,
    )
    write_summary_json(summary, out / "summary.json")
    for r in recs:
        print(f"lambda_frac {r.lambda_frac:<6g} energy {r.energies.energy:.8g}  "
              f"sign changes {r.sign_count}  M+ {r.M_plus:.4g}  M- {r.M_minus:.4g}")
    if len(recs) < len(fracs) or not all(r.converged for r in recs):
        raise NotConverged("some sweep points did not converge")
    return 0


def cmd_sweep_s(cfg, out: Path, times: dict) -> int:
    from .asymptotics import sweep_s
    params0 = Params(cfg["n"], cfg["s"], cfg["R"])
    t = time.perf_counter()
    sl = _floats(cfg["s_list"], "s_list")
    recs = sweep_s(params0, sl, cfg["lambda_frac"], _opts(cfg), cfg["N"], cfg["gamma_inner"],
                   cfg["gamma_outer"], init="tower" if cfg["init"] == "multistart" else cfg["init"])
    times["sweep"] = time.perf_counter() - t
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["s", "sign_count", "energy", "eta", "converged", "nodes", "flags"])
        for r in recs:
            wr.writerow([repr(r.s), r.sign_count, repr(r.report.energy) if r.report else "",
                         repr(r.report.eta) if r.report else "", r.converged,
                         " ".join(repr(x) for x in r.nodes), ";".join(r.flags)])
    for r in recs:
        print(f"s {r.s:<6g} sign changes {r.sign_count}  converged {r.converged}  {';'.join(r.flags)}")
    if len(recs) < len(sl) or not all(r.converged for r in recs):
        raise NotConverged("some continuation points did not converge")
    return 0


def _read_solution(path, params0, cfg):
    from .discretization import RadialFn, grid_from_nodes
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = grid_from_nodes(data[:, 0], params0.n)
    return RadialFn(grid, data[:, 1])


def cmd_extend(cfg, out: Path, times: dict) -> int:
    from .discretization import assemble_forms, first_eigenvalue, gagliardo_norm
    from .extension import dump_field, extend, extension_energy, nodal_regions_two_levels
    params0 = Params(cfg["n"], cfg["s"], cfg["R"])
    t = time.perf_counter()
    if cfg["solution"]:
        if not Path(cfg["solution"]).is_file():
            raise ValidationError(f"solution file not found: {cfg['solution']}")
        u = _read_solution(cfg["solution"], params0, cfg)
        forms = assemble_forms(u.grid, params0, backend=cfg["backend"] or None)
        p = params0.with_lambda(cfg["lambda_frac"] * first_eigenvalue(forms))
        converged = True
    else:
        forms = _forms(cfg, params0)
        p, sol = _solve(cfg, params0, forms)
        u, converged = sol.u, sol.converged
    times["solve"] = time.perf_counter() - t
    t = time.perf_counter()
    field = extend(u, p, backend_name=cfg["backend"] or None)
    val, rem = extension_energy(field)
    coarse, fine, agree = nodal_regions_two_levels(u, p)
    times["extend"] = time.perf_counter() - t
    dump_field(field, out / "extension.csv")
    gag = gagliardo_norm(u, forms)
    d = dict(extension_energy=val, remainder=rem, gagliardo=gag,
             relative_gap=(val + rem - gag) / gag if gag else None,
             nodal_regions=coarse, nodal_regions_refined=fine, regions_agree=agree)
    (out / "extension.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    print(json.dumps(d, indent=2, sort_keys=True))
    if not converged:
        raise NotConverged("the extended solution did not converge")
    return 0


def cmd_report(cfg, out: Path, times: dict) -> int:
    """Summarise the artifacts already present in the output directory."""
    found = {}
    for name in ("report.json", "summary.json", "extension.json", "constants.json"):
        f = out / name
        if f.is_file():
            found[name] = json.loads(f.read_text())
    if (out / "sweep.csv").is_file():
        with open(out / "sweep.csv") as fh:
            found["sweep.csv"] = list(csv.DictReader(fh))
    if not found:
        raise ValidationError(f"no artifacts to report in {out}")
    lines = []
    if "report.json" in found:
        r = found["report.json"]
        lines.append(f"solution: energy {r['energy']:.10g}, sign changes {r['sign_count']}, "
                     f"residual {r['residual_norm']:.3g}, converged {r['converged']}")
    if "sweep.csv" in found:
        lines.append(f"sweep: {len(found['sweep.csv'])} rows")
    if "summary.json" in found:
        tr = found["summary.json"].get("trends", {})
        verdicts = {k: v for k, v in tr.items() if isinstance(v, str)}
        lines.append("trends: " + ", ".join(f"{k}={v}" for k, v in sorted(verdicts.items())))
    if "extension.json" in found:
        e = found["extension.json"]
        lines.append(f"extension: regions {e['nodal_regions']}, energy gap {e['relative_gap']:.3g}")
    if "constants.json" in found:
        c = found["constants.json"]
        lines.append(f"constants: S = {c['s_sobolev']:.10g}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


HANDLERS = {
    "constants": cmd_constants, "solve": cmd_solve, "sweep-lambda": cmd_sweep_lambda,
    "sweep-s": cmd_sweep_s, "extend": cmd_extend, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nodalfrac", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value file; flags override it")
        sp.add_argument("-v", "--verbose", action="store_true")
        for key, (typ, _, hlp) in KEYS.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=hlp)
    return ap


def _write_manifest(out: Path, cfg, status, times, error=None):
    d = dict(
        status=status, config=cfg, error=error, wall_times=times,
        versions=dict(nodalfrac=__version__, numpy=np.__version__, scipy=scipy.__version__,
                      python=platform.python_version(), backend=backend.NAME),
        platform=platform.platform(),
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(d, indent=2, sort_keys=True, default=str) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k) for k in KEYS}
    out = Path(flags["out"] or KEYS["out"][1])
    times = {}
    t0 = time.perf_counter()
    cfg = {"command": args.command, **{k: v for k, v in flags.items() if v is not None}}
    status, error, code = "ok", None, 0
    try:
        file_cfg = read_config(args.config) if args.config else {}
        cfg = resolve(args.command, file_cfg, flags)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[args.command](cfg, out, times)
    except (ValidationError, ConfigurationError, DomainError) as exc:
        status, error, code = "invalid", str(exc), 2
        print(f"error: {exc}", file=sys.stderr)
    except NotConverged as exc:
        status, error, code = "not_converged", str(exc), 3
        print(f"solver did not converge: {exc}", file=sys.stderr)
    except NodalFracError as exc:
        status, error, code = "not_converged", str(exc), 3
        print(f"solver failure: {exc}", file=sys.stderr)
    finally:
        times["total"] = time.perf_counter() - t0
        try:
            _write_manifest(out, cfg, status, times, error)
        except OSError as exc:  # unwritable output directory
            print(f"could not write manifest: {exc}", file=sys.stderr)
            code = code or 2
    return code


if __name__ == "__main__":
    sys.exit(main())
