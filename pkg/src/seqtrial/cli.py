"""Command-line entry point.

Each subcommand takes its parameters from flags, from a JSON config file
(``--config``; a top-level ``"command"`` plus parameter fields), or both, with
flags taking precedence. Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # float, int, str, bool, floats, ints, priors
    default: Any
    help: str

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _prior_params(prefix: str, who: str) -> list[Param]:
    return [Param(f"{prefix}-alpha", "float", 1.0, f"{who} Beta prior alpha (pseudo-successes)"),
            Param(f"{prefix}-beta", "float", 1.0, f"{who} Beta prior beta (pseudo-failures)")]


_SEED = Param("seed", "int", 0, "root seed of the random streams (64-bit unsigned integer)")
_THREADS = Param("threads", "int", None, "worker threads (count; default SEQTRIAL_THREADS or all cores)")
_DRAWS = Param("declare-draws", "int", 10_000,
               "posterior draws per declaration probability (count; 0 = exact closed form)")

COMMANDS: dict[str, tuple[str, list[Param]]] = {
    "design-binary": ("Solve the two-arm Beta-Binomial stopping problem.", [
        *_prior_params("prior1", "treatment"), *_prior_params("prior0", "control"),
        Param("cost", "float", 5e-4, "sampling cost per stage (utility units per patient pair)"),
        Param("horizon", "int", 200, "maximum number of stages (patients per arm)"),
        Param("gamma", "float", 0.975, "declaration threshold on Pr(p1 > p0) (probability)"),
        Param("calibrated", "bool", False, "gate the terminal utility by the declaration threshold"),
    ]),
    "design-normal": ("Solve the Normal-model stopping problem on a grid.", [
        Param("sigma2", "float", 4.0, "outcome variance (squared outcome units)"),
        Param("sigma0-2", "float", 1.0, "prior variance of the effect (squared outcome units)"),
        Param("cost", "float", 0.005, "sampling cost per patient (utility units)"),
        Param("horizon", "int", 50, "maximum number of patients (count)"),
        Param("grid-min", "float", -6.0, "lower end of the posterior-mean grid (outcome units)"),
        Param("grid-max", "float", 6.0, "upper end of the posterior-mean grid (outcome units)"),
        Param("grid-points", "int", 4001, "grid size (count)"),
    ]),
    "simulate": ("Operating characteristics of the four comparison designs.", [
        Param("p0", "float", 0.30, "control success rate (probability)"),
        Param("deltas", "floats", [0.0, 0.05, 0.15, 0.25], "treatment effects p1 - p0 (comma-separated probabilities)"),
        Param("reps", "int", 10_000, "replications per scenario (count)"),
        _DRAWS, _SEED, _THREADS,
    ]),
    "frontier": ("Power frontier of the calibrated design across per-stage costs.", [
        Param("costs", "floats", [1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2],
              "per-stage costs (comma-separated utility units, within [1e-4, 1e-2])"),
        Param("p0", "float", 0.30, "control success rate (probability)"),
        Param("deltas", "floats", [0.0, 0.05, 0.15, 0.25], "treatment effects p1 - p0 (comma-separated probabilities)"),
        Param("reps", "int", 5000, "replications per scenario (count)"),
        _DRAWS, _SEED, _THREADS,
    ]),
    "prior-sensitivity": ("Calibrated design under symmetric priors.", [
        Param("priors", "priors", [[1.0, 1.0], [0.5, 0.5], [3.0, 7.0]],
              "Beta priors placed on both arms (a,b pairs separated by ';', e.g. '1,1;3,7')"),
        Param("cost", "float", 5e-4, "sampling cost per stage (utility units per patient pair)"),
        Param("horizon", "int", 200, "maximum number of stages (patients per arm)"),
        Param("gamma", "float", 0.975, "declaration threshold (probability)"),
        Param("p0", "float", 0.30, "control success rate (probability)"),
        Param("deltas", "floats", [0.0, 0.05, 0.15, 0.25], "treatment effects p1 - p0 (comma-separated probabilities)"),
        Param("reps", "int", 5000, "replications per scenario (count)"),
        _DRAWS, _SEED, _THREADS,
    ]),
    "pg-validate": ("Accuracy of the Polya-Gamma Laplace approximation.", [
        Param("ns", "ints", [10, 50, 200], "patients per arm in the validation panel (comma-separated counts)"),
        Param("deltas", "floats", [0.0, 0.15, 0.25], "treatment effects (comma-separated probabilities)"),
        Param("n-datasets", "int", 50, "random datasets per cell (count)"),
        _SEED,
    ]),
    "ecmo": ("Posterior summaries and design operating characteristics for the ECMO data.", [
        Param("reps", "int", 10_000, "replications per scenario (count)"),
        _DRAWS, _SEED, _THREADS,
    ]),
    "samplesize": ("Fixed-sample size and the goal-function constant.", [
        Param("alpha", "float", 0.05, "one-sided type I error (probability)"),
        Param("beta", "float", 0.10, "type II error (probability)"),
        Param("sigma", "float", 1.0, "outcome standard deviation (outcome units)"),
        Param("delta", "float", 0.10, "target difference (outcome units)"),
        Param("pi0", "float", 0.5, "prior probability of the null (probability)"),
        Param("K", "float", 1.0, "loss of a false rejection relative to a false acceptance (ratio)"),
    ]),
    "gibbs": ("Multi-centre logistic-normal Gibbs sampler.", [
        Param("data", "str", None, "CSV with columns centre,y_trt,n_trt,y_ctrl,n_ctrl (path; default bundled synthetic file)"),
        Param("iw-df", "float", 3.0, "inverse-Wishart degrees of freedom (count)"),
        Param("burn", "int", 2000, "burn-in iterations (count)"),
        Param("keep", "int", 8000, "kept iterations (count)"),
        Param("thin", "int", 1, "thinning interval (iterations)"),
        _SEED,
    ]),
    "implied-prior": ("Histogram of the treatment effect implied by two Beta priors.", [
        *_prior_params("prior1", "treatment"), *_prior_params("prior0", "control"),
        Param("draws", "int", 1_000_000, "Monte Carlo draws (count, at least 1000)"),
        Param("bins", "int", 201, "histogram bins over [-1, 1] (count)"),
        _SEED,
    ]),
}


def _parse_list(kind: str, text: str):
    try:
        if kind == "floats":
            return [float(x) for x in text.split(",") if x.strip()]
        if kind == "ints":
            return [int(x) for x in text.split(",") if x.strip()]
        pairs = [[float(v) for v in p.split(",")] for p in text.split(";") if p.strip()]
        if any(len(p) != 2 for p in pairs):
            raise ValueError
        return pairs
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as {kind}") from None


def _flag_type(p: Param) -> Callable | None:
    if p.kind in ("floats", "ints", "priors"):
        return lambda s: _parse_list(p.kind, s)
    return {"float": float, "int": int, "str": str}.get(p.kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqtrial", description="Bayesian sequential trial design tools.")
    parser.add_argument("--config", help="JSON config file with a top-level \"command\" field")
    sub = parser.add_subparsers(dest="command")
    for name, (desc, params) in COMMANDS.items():
        sp = sub.add_parser(name, help=desc, description=desc)
        sp.add_argument("--config", help="JSON config file; flags override its fields")
        sp.add_argument("--out", default=".", help="output directory (path)")
        for p in params:
            default = "" if p.default is None else f" [default: {p.default}]"
            if p.kind == "bool":
                sp.add_argument(f"--{p.name}", dest=p.dest, action=argparse.BooleanOptionalAction,
                                default=None, help=p.help + default)
            else:
                sp.add_argument(f"--{p.name}", dest=p.dest, type=_flag_type(p), default=None,
                                help=p.help + default)
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return 1


def load_config(path: str) -> tuple[dict, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: malformed JSON: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    return doc, text


def _coerce(p: Param, value: Any, where: str):
    bad = ConfigError(f"{where}: field '{p.name}' expects {p.kind}, got {value!r}")
    if p.kind == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if p.kind == "int":
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise bad
        return int(value)
    if p.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad
        return float(value)
    if p.kind == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if not isinstance(value, list):
        raise bad
    try:
        if p.kind == "floats":
            return [float(v) for v in value]
        if p.kind == "ints":
            return [int(v) for v in value]
        out = [[float(a), float(b)] for a, b in value]
        return out
    except (TypeError, ValueError):
        raise bad from None


def resolve(command: str, args: argparse.Namespace, config: dict | None, config_path: str = "",
            config_text: str = "") -> dict:
    """Merge defaults, config fields and explicit flags (in that order of precedence)."""
    params = COMMANDS[command][1]
    by_name = {p.name: p for p in params} | {p.dest: p for p in params}
    values = {p.dest: p.default for p in params}
    if config:
        cmd = config.get("command", command)
        if cmd != command:
            raise ConfigError(f"{config_path}:{_line_of(config_text, 'command')}: "
                              f"config is for '{cmd}', not '{command}'")
        for key, val in config.items():
            if key in ("command", "out"):
                continue
            where = f"{config_path}:{_line_of(config_text, key)}"
            if key not in by_name:
                raise ConfigError(f"{where}: unknown field '{key}' for command '{command}'")
            p = by_name[key]
            values[p.dest] = _coerce(p, val, where)
    for p in params:
        v = getattr(args, p.dest, None)
        if v is not None:
            values[p.dest] = v
    return values


# -- command implementations -------------------------------------------------

def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _draws(v: int) -> int | None:
    if v < 0:
        raise ValueError("declare-draws must be >= 0")
    return None if v == 0 else v


def cmd_design_binary(v: dict, out: Path) -> None:
    from .binary import BinaryDesignSpec, solve, stopping_region
    from .dist import BetaParams

    spec = BinaryDesignSpec(BetaParams(v["prior1_alpha"], v["prior1_beta"]),
                            BetaParams(v["prior0_alpha"], v["prior0_beta"]),
                            v["cost"], v["horizon"], v["gamma"], v["calibrated"])
    table = solve(spec)
    region = stopping_region(table)
    _write(out, "policy.json", table.to_json())
    _write(out, "region.csv", "# stopping boundaries on the posterior-mean effect scale, per stage\n"
           + region.to_csv())
    print(f"states={table.n_states} value_at_start={table.value(0, 0, 0):.8f} "
          f"first_action={table.action(0, 0, 0).name}")


def cmd_design_normal(v: dict, out: Path) -> None:
    from .normal import NormalDesignSpec, solve_normal

    spec = NormalDesignSpec(v["sigma2"], v["sigma0_2"], v["cost"], v["horizon"],
                            v["grid_min"], v["grid_max"], v["grid_points"])
    pol = solve_normal(spec)
    _write(out, "normal_boundaries.csv", "# continuation region of the posterior mean, per stage\n"
           + pol.boundaries_csv())
    print(f"V0(0)={pol.value_at_zero(0):.8f}")


def cmd_simulate(v: dict, out: Path) -> None:
    from .harness import comparison_designs, compare_designs, oc_csv, scenarios

    scen = scenarios(v["deltas"], v["p0"], v["reps"], v["seed"])
    rows = compare_designs(comparison_designs(_draws(v["declare_draws"])), scen, v["threads"])
    text = oc_csv(rows, f"operating characteristics of four monitoring designs, p0={v['p0']}, "
                        f"{v['reps']} replications, seed {v['seed']}")
    _write(out, "oc.csv", text)
    sys.stdout.write(text)


def cmd_frontier(v: dict, out: Path) -> None:
    from .harness import frontier_csv, power_frontier

    pts = power_frontier(v["costs"], v["deltas"], v["reps"], v["seed"], p0=v["p0"], threads=v["threads"],
                         declare_draws=_draws(v["declare_draws"]))
    text = frontier_csv(pts, f"calibrated backward induction across per-stage costs, "
                             f"{v['reps']} replications, seed {v['seed']}")
    _write(out, "frontier.csv", text)
    sys.stdout.write(text)


def cmd_prior_sensitivity(v: dict, out: Path) -> None:
    from .dist import BetaParams
    from .harness import prior_sensitivity, sensitivity_csv

    priors = [BetaParams(a, b) for a, b in v["priors"]]
    rows = prior_sensitivity(priors, v["deltas"], v["reps"], v["seed"], v["cost"], v["horizon"], v["gamma"],
                             v["p0"], v["threads"], _draws(v["declare_draws"]))
    text = sensitivity_csv(rows, f"calibrated backward induction under symmetric priors, "
                                 f"{v['reps']} replications, seed {v['seed']}")
    _write(out, "prior_sensitivity.csv", text)
    sys.stdout.write(text)


def cmd_pg_validate(v: dict, out: Path) -> None:
    from .pg import validate_pg_laplace, validation_csv

    if v["n_datasets"] < 1:
        raise ValueError("n-datasets must be >= 1")
    cells = validate_pg_laplace(v["ns"], v["deltas"], v["n_datasets"], v["seed"])
    text = ("# absolute error of the Polya-Gamma Laplace approximation against the exact "
            "posterior probability\n" + validation_csv(cells))
    _write(out, "pg_validation.csv", text)
    sys.stdout.write(text)


def cmd_ecmo(v: dict, out: Path) -> None:
    from .harness import ecmo_json, ecmo_study

    report = ecmo_study(v["seed"], v["reps"], v["threads"], _draws(v["declare_draws"]))
    _write(out, "ecmo.json", ecmo_json(report))
    print(f"superiority={report['superiority']} treatment_mean={report['treatment_mean']} "
          f"control_mean={report['control_mean']}")
    for oc in report["operating_characteristics"]:
        print(f"p1={oc['p1']} p0={oc['p0']} E[N]={oc['expected_n_per_arm']:.2f} "
              f"median={oc['median_stop_stage']:g} declare={oc['declare_rate']:.4f}")


def cmd_samplesize(v: dict, out: Path) -> None:
    from .samplesize import (DEFAULT_DELTAS, DEFAULT_SIGMAS, DesignInputs, constancy_grid, freq_n, grid_csv,
                             inoue_constant)

    inp = DesignInputs(v["alpha"], v["beta"], v["sigma"], v["delta"], v["pi0"], v["K"])
    n_real, n_ceil = freq_n(inp)
    const = inoue_constant(inp.alpha, inp.beta, inp.pi0, inp.K)
    rows = constancy_grid(inp, DEFAULT_DELTAS, DEFAULT_SIGMAS)
    _write(out, "samplesize.csv", "# goal function at the frequentist sample size over (delta, sigma)\n"
           + grid_csv(rows))
    print(f"n={n_ceil} n_real={n_real:.4f} r*={const:.3f}")


def cmd_gibbs(v: dict, out: Path) -> None:
    from .pg import CentreData, GibbsConfig, gibbs_multicentre

    if v["data"] is None:
        with resources.as_file(resources.files("seqtrial") / "data" / "synthetic_centres.csv") as p:
            data = CentreData.from_csv(p)
    else:
        data = CentreData.from_csv(v["data"])
    cfg = GibbsConfig(v["iw_df"], np.eye(2), v["burn"], v["keep"], v["thin"], v["seed"])
    res = gibbs_multicentre(data, cfg)
    _write(out, "chain.csv", res.chain_csv())
    m = res.mu.mean(axis=0)
    print(f"Pr(mu1 > mu2)={res.prob_mu1_gt_mu2:.4f} mean_mu1={m[0]:.4f} mean_mu2={m[1]:.4f}")


def cmd_implied_prior(v: dict, out: Path) -> None:
    from .dist import BetaParams
    from .priors import implied_delta_prior

    h = implied_delta_prior(BetaParams(v["prior1_alpha"], v["prior1_beta"]),
                            BetaParams(v["prior0_alpha"], v["prior0_beta"]), v["draws"], v["bins"], v["seed"])
    _write(out, "implied_prior.csv", "# implied prior on p1 - p0 (histogram)\n" + h.to_csv())
    print(f"mass(|delta| <= 0.15)={h.mass_between(-0.15, 0.15):.4f}")


HANDLERS = {
    "design-binary": cmd_design_binary,
    "design-normal": cmd_design_normal,
    "simulate": cmd_simulate,
    "frontier": cmd_frontier,
    "prior-sensitivity": cmd_prior_sensitivity,
    "pg-validate": cmd_pg_validate,
    "ecmo": cmd_ecmo,
    "samplesize": cmd_samplesize,
    "gibbs": cmd_gibbs,
    "implied-prior": cmd_implied_prior,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # a bare `--config FILE` takes the subcommand from the file
        if argv[:1] == ["--config"] and len(argv) >= 2 and not any(a in COMMANDS for a in argv):
            doc, _ = load_config(argv[1])
            cmd = doc.get("command")
            if cmd not in COMMANDS:
                raise ConfigError(f"{argv[1]}:1: missing or unknown \"command\" field")
            argv = [cmd] + argv
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return EXIT_OK if e.code == 0 else EXIT_CONFIG
        if args.command is None:
            parser.print_help()
            return EXIT_CONFIG
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config, text = (None, "")
        if args.config:
            config, text = load_config(args.config)
        values = resolve(args.command, args, config, args.config or "", text)
        out = Path(config.get("out", args.out) if config and args.out == "." else args.out)
        if values.get("threads") is not None and values["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        HANDLERS[args.command](values, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
