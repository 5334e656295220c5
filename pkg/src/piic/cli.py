"""Command-line entry point.

Subcommands ``analyze``, ``simulate``, ``causal-sim`` and ``diabetes`` each
read a JSON run-config and write ``report.json``, ``table.csv`` and
``manifest.json`` into ``--out``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .criteria import UnderflowError
from .hyperopt import ObjectiveError
from .inference import ConvergenceError, SamplerDiagnosticError
from .models import ModelError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Stable JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False)


def _write_table(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _versions() -> dict:
    import numba
    import scipy

    return {"piic": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _load_config(path) -> dict:
    from .workflows import ConfigError

    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_analyze(cfg, args):
    from .workflows import analyze, analyze_table

    result = analyze(cfg, criteria=args.criteria, cross_check=args.cross_check)
    return result, analyze_table(result)


def _cmd_simulate(cfg, args):
    from .experiments import ScenarioConfig, run_comparison, scenario_set
    from .workflows import ConfigError

    overrides = dict(cfg.get("overrides", {}))
    overrides["seed"] = cfg["seed"]
    spec = cfg.get("scenarios")
    if isinstance(spec, str):
        scenarios = scenario_set(spec, **overrides)
    elif isinstance(spec, list):
        scenarios = [ScenarioConfig.from_dict({**s, **overrides}) for s in spec]
    else:
        raise ConfigError("'scenarios' must name a preset or list scenario objects")
    if "rows" in cfg:
        scenarios = [scenarios[i] for i in cfg["rows"]]
    rows, header = [], None
    out = []
    for sc in scenarios:
        row = run_comparison(sc, workers=int(cfg.get("workers", 1)))
        header = row.csv_header()
        rows.append(row.csv_cells())
        out.append(row.to_dict())
    return {"rows": out}, (header or [], rows)


def _cmd_causal(cfg, args):
    from .causal import evaluate_ip, ipw_setup, simulate_msm
    from .hyperopt import XiSearchSpace, minimize_criterion
    from .inference import SamplerConfig
    from .models import LikelihoodModel, PriorSpec

    H = int(cfg.get("H", 2))
    n = int(cfg.get("n", 200))
    R = int(cfg.get("R", 1))
    effects = cfg.get("effects", list(range(H)))
    coef = cfg.get("coef", [[0.0, 0.0]] + [[0.0, 1.0]] * (H - 1))
    fitted = cfg.get("propensity", "known") == "fitted"
    family = cfg.get("prior", {}).get("family", "normal")
    sigma2 = float(cfg.get("sigma2", 1.0 + cfg.get("confounding", 1.0) ** 2))
    seed = int(cfg["seed"])
    reps, rows = [], []
    for r in range(R):
        rng = np.random.default_rng([seed, r])
        msm, prop = simulate_msm(n, H, effects, coef, rng, cfg.get("confounding", 1.0))
        setup = ipw_setup(msm, None if fitted else prop)
        model = LikelihoodModel.linear_gaussian(sigma2)
        prior = PriorSpec.shared(family, H, 1.0, n)
        scfg = SamplerConfig.from_dict({**cfg.get("sampler", {}), "seed": seed + r})

        def objective(xi, prior=prior, setup=setup, scfg=scfg, model=model):
            return evaluate_ip(model, prior.with_xi(xi), setup, scfg).piic

        res = minimize_criterion(objective, XiSearchSpace.from_dict(1, cfg.get("search")))
        rep = evaluate_ip(model, prior.with_xi(res.xi_hat), setup, scfg, with_xi_penalty=True)
        theta = rep.fit.theta_hat
        reps.append({"replication": r, "xi_hat": res.xi_hat, "report": rep.to_dict(),
                     "theta_hat": theta, "clipped": setup.clipped,
                     "sha256": setup.data.digest()})
        rows.append([str(r), f"{res.xi_hat[0]:.6g}", f"{rep.piic:.3f}", f"{rep.piic2:.3f}",
                     f"{rep.piic_penalty:.3f}", f"{rep.j_penalty:.3f}"]
                    + [f"{v:.3f}" for v in theta] + [str(setup.clipped)])
    header = ["replication", "xi_hat", "piic_ip", "piic2_ip", "penalty_theta", "penalty_xi"] \
        + [f"effect{h + 1}" for h in range(H)] + ["clipped"]
    return {"replications": reps}, (header, rows)


def _cmd_diabetes(cfg, args):
    from .workflows import diabetes_table, diabetes_workflow

    result = diabetes_workflow(cfg)
    header, rows, _ = diabetes_table(result)
    return result, (header, rows)


COMMANDS = {
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "causal-sim": _cmd_causal,
    "diabetes": _cmd_diabetes,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="piic", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run-config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--criteria", help="comma-separated subset of waic,piic,piic2,dic")
        sp.add_argument("--cross-check", action="store_true",
                        help="compare analytic and sampled criteria where both exist")
    return ap


def run(argv=None) -> int:
    from .workflows import CRITERIA, ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        if "seed" not in cfg:
            raise ConfigError("a seed is required (--seed or 'seed' in the config)")
        if args.criteria:
            args.criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
            unknown = [c for c in args.criteria if c not in CRITERIA]
            if unknown:
                raise ConfigError(f"unknown criteria {unknown}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result, (header, rows) = COMMANDS[args.command](cfg, args)
    except (ConfigError, KeyError, TypeError, FileNotFoundError, PermissionError) as exc:
        print(f"config error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"config error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, SamplerDiagnosticError, UnderflowError, ObjectiveError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": args.command,
        "config": cfg,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": cfg["seed"],
        "criteria": args.criteria,
        "cross_check": args.cross_check,
        "versions": _versions(),
        "backend": _accel.backend(),
    }
    (out / "report.json").write_text(dumps(result) + "\n")
    (out / "manifest.json").write_text(dumps(manifest) + "\n")
    _write_table(out / "table.csv", header, rows)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
