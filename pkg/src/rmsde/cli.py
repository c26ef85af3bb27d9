"""Command-line entry point.

Every subcommand takes its keys from flags and/or a flat ``key = value``
config file (flags win), writes its tables and JSON to ``--out-dir`` and
drops a manifest next to them. Exit codes: 0 success, 2 usage or
validation error, 3 simulation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from rmsde import __version__
from rmsde.ctmc import density_path, simulate
from rmsde.errors import (
    BlowupError,
    BudgetExceededError,
    DegenerateCovarianceError,
    DivergenceError,
    EnsembleError,
    InputDomainError,
    StiffnessError,
)
from rmsde.model import ModelParams, classify_regime
from rmsde.montecarlo import (
    EnsembleConfig,
    compare_covariance,
    compare_factorizations,
    extinction_probe,
    lln_diagnostic,
    moment_sups,
    run_ensemble,
    simulate_ensemble,
    write_cloud_csv,
    write_json,
)
from rmsde.ode import dissipativity_check, integrate, write_state_csv
from rmsde.sde import FactorizationKind, simulate_absorbed
from rmsde.streams import check_seed, path_stream

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

RUNTIME_ERRORS = (
    BlowupError,
    BudgetExceededError,
    DegenerateCovarianceError,
    DivergenceError,
    EnsembleError,
    StiffnessError,
    FloatingPointError,
)


class UsageError(Exception):
    pass


def _seed(text):
    return check_seed(int(str(text), 0))


def _kind(text):
    return FactorizationKind.parse(text).short_name


def _omegas(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _positive_int(text):
    value = int(str(text))
    if value < 1:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return value


# (key, parser, default, help); a default of None means "unset"
COMMON = [
    ("k", float, 3.0, "carrying-capacity parameter"),
    ("m", float, 2.0, "maximal predation/conversion rate"),
    ("c", float, 0.8, "predator mortality rate"),
    ("omega", float, None, "system size (default 100 unless --rho is given)"),
    ("rho", float, None, "noise amplitude omega^-1/2 (exclusive with --omega; 0 disables noise)"),
    ("seed", _seed, 42, "master seed (unsigned 64-bit)"),
    ("out_dir", str, "out", "output directory"),
    ("workers", _positive_int, 1, "worker processes"),
]

_START = [
    ("n0", float, 0.8, "initial prey density"),
    ("p0", float, 0.6, "initial predator density"),
]
_EM = [
    ("dt", float, 0.01, "Euler-Maruyama step"),
    ("horizon", float, 100.0, "final time"),
]
_ENSEMBLE = _START + _EM + [
    ("paths", _positive_int, 2000, "number of paths M"),
    ("stride", _positive_int, 10, "record every stride-th step"),
]

SUBCOMMANDS = {
    "classify": ("equilibria, Hopf threshold and regime as JSON", []),
    "ode": (
        "integrate the deterministic ODE",
        _START
        + [
            ("horizon", float, 200.0, "final time"),
            ("rel_tol", float, 1e-8, "relative tolerance"),
            ("abs_tol", float, 1e-10, "absolute tolerance"),
            ("grid_dt", float, 0.1, "output grid spacing"),
            ("beta", float, 1.0, "weight of P in the dissipativity functional"),
            ("eps", float, 0.1, "slack on the N + beta P level"),
            ("delta", float, 0.1, "slack on the N level"),
        ],
    ),
    "ssa": (
        "one exact CTMC path",
        _START
        + [
            ("horizon", float, 10.0, "final time"),
            ("grid_dt", float, 0.1, "density grid spacing"),
            ("max_jumps", _positive_int, 10**9, "jump budget"),
        ],
    ),
    "sde": (
        "one absorbed Euler-Maruyama path",
        _START + _EM + [("kind", _kind, "cholesky", "event, cholesky or diagonal"), ("path_index", int, 0, "stream index")],
    ),
    "survival": (
        "Monte Carlo survival curve",
        _ENSEMBLE + [("kind", _kind, "cholesky", "event, cholesky or diagonal")],
    ),
    "compare-fact": ("event versus Cholesky factorization", _ENSEMBLE),
    "compare-cov": ("full covariance versus diagonal surrogate", _ENSEMBLE),
    "lln": (
        "CTMC ensemble mean versus ODE for increasing system size",
        _START
        + [
            ("omegas", _omegas, "100,1000,10000", "comma-separated system sizes"),
            ("horizon", float, 10.0, "final time"),
            ("replicates", _positive_int, 500, "CTMC paths per system size"),
            ("grid_dt", float, 0.1, "comparison grid spacing"),
        ],
    ),
    "extinction": ("extinction fractions over absorbed Cholesky paths", _ENSEMBLE[:-1]),
    "moments": (
        "sup over time of the mean |Z|^2 and |Z|^4",
        _ENSEMBLE + [("kind", _kind, "cholesky", "event, cholesky or diagonal")],
    ),
}


def _specs(command):
    return {key: (parse, default, help_) for key, parse, default, help_ in COMMON + SUBCOMMANDS[command][1]}


def build_parser():
    parser = argparse.ArgumentParser(prog="rmsde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rmsde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (summary, _) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        for key, (_, default, help_) in _specs(name).items():
            text = help_ if default is None else f"{help_} (default: {default})"
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=key.upper(), help=text)
        p.add_argument("--config", default=None, help="flat key = value file; flags override it")
    return parser


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def resolve(command, flags, config_path=None):
    """Defaults, then config file, then flags; every value parsed and checked."""
    specs = _specs(command)
    raw = {}
    if config_path:
        try:
            from_file = read_config(config_path)
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        unknown = sorted(set(from_file) - set(specs))
        if unknown:
            raise UsageError(f"unknown key(s) for {command}: {', '.join(unknown)}")
        raw.update(from_file)
    raw.update({k: v for k, v in flags.items() if v is not None})
    if raw.get("omega") not in (None, "") and raw.get("rho") not in (None, ""):
        raise UsageError("give either omega or rho, not both")
    resolved = {}
    for key, (parse, default, _) in specs.items():
        value = raw.get(key, default)
        if value is None or value == "":
            resolved[key] = None
            continue
        try:
            resolved[key] = parse(value)
        except (ValueError, InputDomainError) as exc:
            raise UsageError(f"invalid value for {key}: {value!r} ({exc})") from exc
    if resolved["omega"] is None and resolved["rho"] is None:
        resolved["omega"] = 100.0
    return resolved


def make_params(cfg):
    if cfg.get("rho") is not None:
        return ModelParams.from_rho(cfg["k"], cfg["m"], cfg["c"], cfg["rho"])
    return ModelParams(cfg["k"], cfg["m"], cfg["c"], cfg["omega"])


def _grid(horizon, spacing):
    if not spacing > 0:
        raise InputDomainError(f"grid spacing must be positive, got {spacing!r}")
    n = int(math.floor(horizon / spacing + 1e-9))
    return np.arange(n + 1) * spacing


def _ensemble_config(cfg, params, kind=None):
    return EnsembleConfig(
        params,
        (cfg["n0"], cfg["p0"]),
        cfg["dt"],
        cfg["horizon"],
        kind or cfg.get("kind", "cholesky"),
        cfg["paths"],
        cfg["seed"],
        cfg.get("stride", 1),
    )


class Outputs:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.paths = []
        os.makedirs(out_dir, exist_ok=True)

    def __call__(self, name):
        path = os.path.join(self.out_dir, name)
        self.paths.append(path)
        return path


# -- subcommands -----------------------------------------------------------------


def cmd_classify(cfg, params, out):
    report = classify_regime(params)
    payload = {**report.to_dict(), "params": params.to_dict(), "toolkit_version": __version__}
    write_json(out("classify.json"), payload)
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_ode(cfg, params, out):
    grid = _grid(cfg["horizon"], cfg["grid_dt"])
    traj = integrate(params, (cfg["n0"], cfg["p0"]), cfg["horizon"], cfg["rel_tol"], cfg["abs_tol"], output_grid=grid)
    traj.to_csv(out("ode.csv"))
    report = dissipativity_check(traj, params, cfg["beta"], cfg["eps"], cfg["delta"])
    summary = {
        "final_state": traj.final_state.tolist(),
        "regime": classify_regime(params).to_dict(),
        "dissipativity": report.to_dict(),
        "solver_steps": traj.n_steps,
        "toolkit_version": __version__,
    }
    write_json(out("ode.json"), summary)
    n, p = traj.final_state
    print(f"final_state=({n:.6g}, {p:.6g}) entered_absorbing_set={report.entered}")


def cmd_ssa(cfg, params, out):
    if math.isinf(params.omega):
        raise InputDomainError("ssa needs a finite omega")
    x0 = (int(math.floor(params.omega * cfg["n0"] + 0.5)), int(math.floor(params.omega * cfg["p0"] + 0.5)))
    rng = path_stream(cfg["seed"], "ssa", 0)
    path = simulate(params, x0, cfg["horizon"], rng, cfg["max_jumps"])
    path.to_csv(out("ssa_jumps.csv"))
    grid = _grid(cfg["horizon"], cfg["grid_dt"])
    write_state_csv(out("ssa_density.csv"), grid, density_path(path, grid))
    final = path.state_at_index(path.n_jumps)
    write_json(out("ssa.json"), {"x0": list(x0), "n_jumps": path.n_jumps, "final_state": list(final), "toolkit_version": __version__})
    print(f"n_jumps={path.n_jumps} final_counts=({final[0]}, {final[1]})")


def cmd_sde(cfg, params, out):
    kind = FactorizationKind.parse(cfg["kind"])
    rng = path_stream(cfg["seed"], kind.short_name, cfg["path_index"])
    path = simulate_absorbed(params, (cfg["n0"], cfg["p0"]), cfg["dt"], cfg["horizon"], kind, rng)
    path.to_csv(out("sde_path.csv"))
    path.write_summary(out("sde_summary.json"))
    print(f"absorption_time={path.absorption_time} absorbed_axis={None if path.absorbed_axis is None else path.absorbed_axis.value}")


def cmd_survival(cfg, params, out):
    stats = run_ensemble(_ensemble_config(cfg, params), cfg["workers"])
    stats.write_survival_csv(out("survival.csv"))
    stats.write_json(out("survival.json"))
    stats.write_cloud_csv(out("terminal_cloud.csv"))
    print(f"survivor_fraction={stats.survivor_fraction:.3f}")


def cmd_compare_fact(cfg, params, out):
    report = compare_factorizations(_ensemble_config(cfg, params), cfg["workers"])
    write_json(out("compare_fact.json"), report.to_dict())
    report.stats_event.write_json(out("stats_event.json"))
    report.stats_cholesky.write_json(out("stats_cholesky.json"))
    report.stats_event.write_survival_csv(out("survival_event.csv"))
    report.stats_cholesky.write_survival_csv(out("survival_cholesky.csv"))
    print(
        f"survivor_fraction_event={report.stats_event.survivor_fraction:.3f} "
        f"survivor_fraction_cholesky={report.stats_cholesky.survivor_fraction:.3f} "
        f"overlap={report.terminal_hist_overlap:.3f}"
    )


def cmd_compare_cov(cfg, params, out):
    report = compare_covariance(_ensemble_config(cfg, params), cfg["workers"])
    write_json(out("compare_cov.json"), report.to_dict())
    report.stats_full.write_json(out("stats_full.json"))
    report.stats_diagonal.write_json(out("stats_diagonal.json"))
    report.stats_full.write_survival_csv(out("survival_full.csv"))
    report.stats_diagonal.write_survival_csv(out("survival_diagonal.csv"))
    write_cloud_csv(out("cloud_full.csv"), report.terminal_cloud_full)
    write_cloud_csv(out("cloud_diagonal.csv"), report.terminal_cloud_diag)
    fr = report.survivor_fractions
    print(f"survivor_fraction_full={fr['full']:.3f} survivor_fraction_diagonal={fr['diagonal']:.3f}")


def cmd_lln(cfg, params, out):
    grid = _grid(cfg["horizon"], cfg["grid_dt"])
    report = lln_diagnostic(
        params, (cfg["n0"], cfg["p0"]), cfg["omegas"], cfg["horizon"], cfg["replicates"], grid, cfg["seed"], cfg["workers"]
    )
    write_json(out("lln.json"), report.to_dict())
    with open(out("lln.csv"), "w", newline="") as fh:
        fh.write("omega,deviation\n")
        for omega, dev in zip(report.omegas, report.deviations):
            fh.write(f"{omega:.17g},{dev:.17g}\n")
    print("deviations=" + ",".join(f"{d:.4g}" for d in report.deviations))


def cmd_extinction(cfg, params, out):
    report = extinction_probe(params, (cfg["n0"], cfg["p0"]), cfg["dt"], cfg["horizon"], cfg["paths"], cfg["seed"], cfg["workers"])
    write_json(out("extinction.json"), report.to_dict())
    print(f"extinct_fraction={report.extinct_fraction:.3f} predator_axis_fraction={report.predator_axis_fraction}")


def cmd_moments(cfg, params, out):
    raw = simulate_ensemble(_ensemble_config(cfg, params), cfg["workers"])
    sups = moment_sups(raw, (2, 4))
    write_json(out("moments.json"), {"sup_mean_norm_p2": sups[2], "sup_mean_norm_p4": sups[4], "toolkit_version": __version__})
    print(f"sup_mean_norm_p2={sups[2]:.6g} sup_mean_norm_p4={sups[4]:.6g}")


COMMANDS = {
    "classify": cmd_classify,
    "ode": cmd_ode,
    "ssa": cmd_ssa,
    "sde": cmd_sde,
    "survival": cmd_survival,
    "compare-fact": cmd_compare_fact,
    "compare-cov": cmd_compare_cov,
    "lln": cmd_lln,
    "extinction": cmd_extinction,
    "moments": cmd_moments,
}


def _write_manifest(command, cfg, out, started):
    stem = command.replace("-", "_")
    cfg_path = os.path.join(out.out_dir, f"{stem}.resolved.cfg")
    with open(cfg_path, "w") as fh:
        for key, value in cfg.items():
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(f"{v:.17g}" for v in value)
            elif isinstance(value, float):
                value = f"{value:.17g}"
            fh.write(f"{key} = {value}\n")
    manifest = {
        "subcommand": command,
        "config": cfg,
        "master_seed": cfg["seed"],
        "toolkit_version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
        "outputs": list(out.paths),
        "replay_config": cfg_path,
    }
    write_json(os.path.join(out.out_dir, f"{stem}.manifest.json"), manifest)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    started = time.perf_counter()
    try:
        cfg = resolve(args.command, flags, args.config)
        params = make_params(cfg)
        out = Outputs(cfg["out_dir"])
        COMMANDS[args.command](cfg, params, out)
        _write_manifest(args.command, cfg, out, started)
    except (UsageError, InputDomainError) as exc:
        print(f"rmsde {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"rmsde {args.command}: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
