"""Command-line front end.

Experiments are described by an INI file with an ``[experiment]`` section
(policy, budgets, trials, seed, output) and a ``[scenario]`` section naming a
generator and its parameters, or model files. Flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .engine import DetectionConfig
from .errors import ConfigError, DetectionError
from .experiments import (
    CSV_COLUMNS,
    SCENARIO_GENERATORS,
    Scenario,
    monte_carlo,
    stats_row,
    write_csv,
)
from .feasibility import feasibility_lower_bound
from .gmrf import GaussianModel, HypothesisPair, tree_covariance_completion
from .graph import Graph
from .policies import POLICIES

# ----------------------------------------------------------------------------
# Config schema
# ----------------------------------------------------------------------------


def _positive_int(v: str) -> int:
    x = int(v)
    if x < 1:
        raise ValueError(f"must be a positive integer, got {v}")
    return x


def _nonneg_int(v: str) -> int:
    x = int(v)
    if x < 0:
        raise ValueError(f"must be a non-negative integer, got {v}")
    return x


def _unit_open(v: str) -> float:
    x = float(v)
    if not 0.0 < x < 1.0:
        raise ValueError(f"must lie in (0, 1), got {v}")
    return x


def _corr(v: str) -> float:
    x = float(v)
    if not -1.0 < x < 1.0:
        raise ValueError(f"must lie in (-1, 1), got {v}")
    return x


def _unit_half_open(v: str) -> float:
    x = float(v)
    if not 0.0 <= x < 1.0:
        raise ValueError(f"must lie in [0, 1), got {v}")
    return x


def _nonneg_float(v: str) -> float:
    x = float(v)
    if not (math.isfinite(x) and x >= 0):
        raise ValueError(f"must be a non-negative number, got {v}")
    return x


def _policy(v: str) -> str:
    if v not in POLICIES:
        raise ValueError(f"unknown policy '{v}'; choose from {', '.join(sorted(POLICIES))}")
    return v


def _policy_list(v: str) -> tuple:
    items = tuple(s.strip() for s in v.split(",") if s.strip())
    if not items:
        raise ValueError("must list at least one policy")
    for p in items:
        _policy(p)
    return items


def _budget_list(v: str) -> tuple:
    items = tuple(_unit_open(s.strip()) for s in v.split(",") if s.strip())
    if not items:
        raise ValueError("must list at least one value")
    return items


def _subset_cap(v: str):
    if v.strip().lower() in ("none", "unbounded"):
        return None
    return _positive_int(v)


# key -> (parser, default); a default of REQUIRED marks a mandatory key.
REQUIRED = object()

EXPERIMENT_KEYS: dict[str, tuple[Callable, object]] = {
    "policy": (_policy, "correlation"),
    "policies": (_policy_list, ("chernoff", "correlation", "random")),
    "alpha": (_unit_open, REQUIRED),
    "beta": (_unit_open, REQUIRED),
    "trials": (_positive_int, 1000),
    "seed": (_nonneg_int, None),
    "max_subset_size": (_subset_cap, 4),
    "out": (str, None),
    "sweep": (_budget_list, (0.3, 0.2, 0.1, 0.05)),
}

GENERATOR_KEYS: dict[str, dict[str, tuple[Callable, object]]] = {
    "replicated": {"copies": (_positive_int, REQUIRED), "strong_corr": (_corr, 0.5),
                   "weak_corr": (_corr, 0.1)},
    "tree": {"n": (_positive_int, REQUIRED), "sigma": (_corr, REQUIRED)},
    "cluster": {"n": (_positive_int, REQUIRED), "p": (_positive_int, REQUIRED),
                "sigma_A": (_corr, REQUIRED)},
    "two-cluster": {"n": (_positive_int, REQUIRED), "p": (_positive_int, REQUIRED),
                    "a_corr": (_corr, REQUIRED), "b_corr": (_corr, REQUIRED)},
    "nearest-neighbor": {"n": (_positive_int, REQUIRED), "M": (_unit_half_open, REQUIRED),
                         "a": (_nonneg_float, REQUIRED)},
    "file": {"model": (str, REQUIRED), "null_model": (str, None)},
}
SCENARIO_COMMON = {"generator": (str, REQUIRED), "seed": (_nonneg_int, None)}


@dataclass(frozen=True)
class ExperimentConfig:
    generator: str
    scenario_params: dict
    alpha: float
    beta: float
    policy: str = "correlation"
    policies: tuple = ("chernoff", "correlation", "random")
    trials: int = 1000
    seed: int | None = None
    scenario_seed: int | None = None
    max_subset_size: int | None = 4
    out: str | None = None
    sweep: tuple = (0.3, 0.2, 0.1, 0.05)
    base_dir: str = field(default=".", compare=False)

    @property
    def detection(self) -> DetectionConfig:
        return DetectionConfig(self.alpha, self.beta)


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for diagnostics."""
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and line and line[0] not in "#;":
            for sep in ("=", ":"):
                if sep in line:
                    out[(section, line.split(sep, 1)[0].strip())] = no
                    break
    return out


def _where(lines: dict, section: str, key: str, source: str | None) -> str:
    no = lines.get((section, key))
    prefix = f"{source}:" if source else ""
    loc = f"{prefix}line {no}: " if no else (f"{source}: " if source else "")
    return f"{loc}[{section}] {key}"


def parse_config(text: str, source: str | None = None, base_dir: str = ".") -> ExperimentConfig:
    """Validate an INI experiment description, reporting every problem at once."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"{source or '<config>'}: {exc}") from None
    lines = _key_lines(text)
    errors: list[str] = []

    def take(section: str, schema: dict) -> dict:
        vals = {}
        present = dict(cp.items(section)) if cp.has_section(section) else {}
        for key in present:
            if key not in schema:
                errors.append(f"{_where(lines, section, key, source)}: unknown key")
        for key, (parse, default) in schema.items():
            if key in present:
                try:
                    vals[key] = parse(present[key])
                except ValueError as exc:
                    errors.append(f"{_where(lines, section, key, source)}: {exc}")
            elif default is REQUIRED:
                errors.append(f"{_where(lines, section, key, source)}: missing required key")
            else:
                vals[key] = default
        return vals

    for sec in cp.sections():
        if sec not in ("experiment", "scenario"):
            errors.append(f"{source + ': ' if source else ''}unknown section [{sec}]")
    exp = take("experiment", EXPERIMENT_KEYS)
    scen_present = dict(cp.items("scenario")) if cp.has_section("scenario") else {}
    gen = scen_present.get("generator")
    params: dict = {}
    scenario_seed = None
    if gen is None:
        errors.append(f"{_where(lines, 'scenario', 'generator', source)}: missing required key")
    elif gen not in GENERATOR_KEYS:
        errors.append(f"{_where(lines, 'scenario', 'generator', source)}: unknown generator "
                      f"'{gen}'; choose from {', '.join(sorted(GENERATOR_KEYS))}")
    else:
        schema = dict(SCENARIO_COMMON)
        schema.update(GENERATOR_KEYS[gen])
        params = take("scenario", schema)
        params.pop("generator", None)
        scenario_seed = params.pop("seed", None)
        if gen in ("cluster", "two-cluster") and "n" in params and "p" in params:
            n, p = params["n"], params["p"]
            if p > n or (gen == "two-cluster" and p == n):
                errors.append(f"{_where(lines, 'scenario', 'p', source)}: must be "
                              f"{'<' if gen == 'two-cluster' else '<='} n={n}, got {p}")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        generator=gen, scenario_params=params, alpha=exp["alpha"], beta=exp["beta"],
        policy=exp["policy"], policies=exp["policies"], trials=exp["trials"], seed=exp["seed"],
        scenario_seed=scenario_seed, max_subset_size=exp["max_subset_size"], out=exp["out"],
        sweep=exp["sweep"], base_dir=base_dir,
    )


def _ser(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_ser(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`parse_config` maps back to an equal config."""
    lines = ["[experiment]"]
    for key in EXPERIMENT_KEYS:
        v = getattr(cfg, key)
        if v is None and key != "max_subset_size":
            continue
        lines.append(f"{key} = {_ser(v)}")
    lines += ["", "[scenario]", f"generator = {cfg.generator}"]
    if cfg.scenario_seed is not None:
        lines.append(f"seed = {cfg.scenario_seed}")
    for key, v in cfg.scenario_params.items():
        if v is not None:
            lines.append(f"{key} = {_ser(v)}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# Model files
# ----------------------------------------------------------------------------

def parse_model_file(text: str, source: str = "<model>") -> GaussianModel:
    """Read a Gaussian model.

    Lines: ``n N``, optional ``mean m1 ... mN``, then either ``covariance``
    followed by ``N`` rows, or optional ``variances v1 ... vN`` and ``tree``
    followed by ``i j rho`` edge lines. ``#`` starts a comment.
    """
    rows = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((no, line.split()))
    n = mean = variances = None
    cov_rows: list = []
    tree_edges: dict = {}
    mode = None

    def fail(no, msg):
        raise ConfigError(f"{source}:line {no}: {msg}")

    for no, parts in rows:
        head = parts[0].lower()
        try:
            if head == "n" and len(parts) == 2:
                n = int(parts[1])
                if n < 1:
                    fail(no, "n must be positive")
                mode = None
            elif head == "mean":
                mean = [float(x) for x in parts[1:]]
                mode = None
            elif head == "variances":
                variances = [float(x) for x in parts[1:]]
                mode = None
            elif head in ("covariance", "tree") and len(parts) == 1:
                mode = head
            elif mode == "covariance":
                cov_rows.append([float(x) for x in parts])
            elif mode == "tree":
                if len(parts) != 3:
                    fail(no, "tree lines must be 'i j rho'")
                tree_edges[(int(parts[0]), int(parts[1]))] = float(parts[2])
            else:
                fail(no, f"unexpected line {' '.join(parts)!r}")
        except ValueError:
            fail(no, f"malformed number in {' '.join(parts)!r}")
    if n is None:
        raise ConfigError(f"{source}: missing 'n' line")
    for name, vec in (("mean", mean), ("variances", variances)):
        if vec is not None and len(vec) != n:
            raise ConfigError(f"{source}: {name} has {len(vec)} entries, expected {n}")
    if cov_rows and tree_edges:
        raise ConfigError(f"{source}: give either a covariance or a tree, not both")
    try:
        if cov_rows:
            cov = np.array(cov_rows, dtype=float)
            if cov.shape != (n, n):
                raise ConfigError(f"{source}: covariance is {cov.shape}, expected ({n}, {n})")
        elif tree_edges:
            tree = Graph.from_edges(n, tree_edges.keys())
            cov = tree_covariance_completion(tree_edges, tree, variances)
        else:
            cov = np.diag(variances) if variances is not None else np.eye(n)
        return GaussianModel(None if mean is None else np.array(mean), cov)
    except ConfigError:
        raise
    except DetectionError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    params = dict(cfg.scenario_params)
    if cfg.generator == "file":
        base = Path(cfg.base_dir)
        path1 = base / params["model"]
        try:
            f1 = parse_model_file(path1.read_text(), str(path1))
            if params.get("null_model"):
                path0 = base / params["null_model"]
                f0 = parse_model_file(path0.read_text(), str(path0))
            else:
                f0 = GaussianModel(f1.mean, np.eye(f1.node_count))
        except OSError as exc:
            raise ConfigError(f"[scenario] model: cannot read {exc.filename}: {exc.strerror}") from None
        return Scenario(HypothesisPair(f0, f1), "file", {"model": params["model"]})
    gen = SCENARIO_GENERATORS[cfg.generator]
    if cfg.generator == "replicated":
        return gen(**params)
    seed = cfg.scenario_seed if cfg.scenario_seed is not None else cfg.seed
    return gen(**params, rng=np.random.default_rng(seed))


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def _simulate(cfg: ExperimentConfig, scenario: Scenario) -> str:
    st = monte_carlo(scenario, cfg.policy, cfg.detection, cfg.trials, cfg.seed,
                     max_subset_size=cfg.max_subset_size)
    return write_csv([stats_row(scenario.name, st)])


def _compare(cfg: ExperimentConfig, scenario: Scenario) -> str:
    rows = [stats_row(scenario.name, monte_carlo(scenario, p, cfg.detection, cfg.trials, cfg.seed,
                                                 max_subset_size=cfg.max_subset_size))
            for p in cfg.policies]
    return write_csv(rows)


def _sweep(cfg: ExperimentConfig, scenario: Scenario) -> str:
    rows = []
    for a in cfg.sweep:
        st = monte_carlo(scenario, cfg.policy, DetectionConfig(a, a), cfg.trials, cfg.seed,
                         max_subset_size=cfg.max_subset_size)
        rows.append(stats_row(scenario.name, st))
    return write_csv(rows)


FEASIBILITY_COLUMNS = ("scenario", "n", "alpha", "beta", "bhattacharyya", "kappa_n",
                       "lower_bound", "raw_bound")


def _feasibility(cfg: ExperimentConfig, scenario: Scenario) -> str:
    rep = feasibility_lower_bound(scenario.pair, cfg.detection)
    row = {"scenario": scenario.name, "n": scenario.node_count, "alpha": cfg.alpha,
           "beta": cfg.beta, "bhattacharyya": rep.bhattacharyya, "kappa_n": rep.kappa_n,
           "lower_bound": rep.lower_bound, "raw_bound": rep.raw_bound}
    return write_csv([row], columns=FEASIBILITY_COLUMNS)


COMMANDS = {"simulate": _simulate, "compare-policies": _compare, "sweep": _sweep,
            "feasibility": _feasibility}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrfdetect",
                                     description="Sequential correlation-model detection on Markov networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--policy", help="selection rule")
        p.add_argument("--alpha", help="false-alarm budget in (0, 1)")
        p.add_argument("--beta", help="missed-detection budget in (0, 1)")
        p.add_argument("--trials", help="trials per hypothesis")
        p.add_argument("--seed", help="base seed for every random stream")
        p.add_argument("--out", help="CSV output path (stdout when omitted)")
        p.add_argument("--max-subset-size", dest="max_subset_size",
                       help="subset cap for exhaustive search, or 'none'")
    return parser


DETERMINISTIC_GENERATORS = ("replicated", "file")

FLAG_NAMES = {"policy": "--policy", "alpha": "--alpha", "beta": "--beta", "trials": "--trials",
              "seed": "--seed", "out": "--out", "max_subset_size": "--max-subset-size"}


def _apply_flags(cfg: ExperimentConfig, args: argparse.Namespace, command: str) -> ExperimentConfig:
    errors, updates = [], {}
    for key, flag in FLAG_NAMES.items():
        raw = getattr(args, key)
        if raw is None:
            continue
        try:
            updates[key] = EXPERIMENT_KEYS[key][0](raw)
        except ValueError as exc:
            errors.append(f"{flag}: {exc}")
    if errors:
        raise ConfigError(errors)
    cfg = replace(cfg, **updates)
    # feasibility draws nothing itself; it only needs a seed for a random scenario
    needs_seed = command != "feasibility" or (
        cfg.generator not in DETERMINISTIC_GENERATORS and cfg.scenario_seed is None)
    if cfg.seed is None and needs_seed:
        raise ConfigError("--seed: no seed given on the command line or as [experiment] seed")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {args.config}: {exc.strerror}") from None
        cfg = parse_config(text, source=str(path), base_dir=str(path.parent))
        cfg = _apply_flags(cfg, args, args.command)
        scenario = build_scenario(cfg)
        csv_text = COMMANDS[args.command](cfg, scenario)
        if cfg.out:
            try:
                with open(cfg.out, "w", newline="") as fh:
                    fh.write(csv_text)
            except OSError as exc:
                raise ConfigError(f"--out: cannot write {cfg.out}: {exc.strerror}") from None
        else:
            sys.stdout.write(csv_text)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"error: {msg}", file=sys.stderr)
        return 2
    except DetectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
