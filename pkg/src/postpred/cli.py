"""``postpred`` command line: estimate on grids, compare risks, run self-checks.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical tolerance
breach, 5 risk-ordering violation.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .core import FinitePrior, GammaPrior, NormalPrior, SupportError, UniformPrior, validate_sample
from .discrete_oracle import TableSizeError
from .estimators import BayesPredictiveEstimator
from .integrate import IntegrationError, QuadratureSettings
from .models import FiniteTableFamily, make_family
from .predictive import NonIntegrableMeanError, NullConditioningError
from .risk import LossKind, RiskHarnessError, RiskReport, compare_estimators, competitor
from .validation import validate_continuous, validate_finite

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TOLERANCE, EXIT_ORDER = 0, 2, 3, 4, 5
ENGINE_TOLERANCE = 1e-4
ORDER_SES = 3.0
ORDER_FLOOR = 1e-12  # risks equal up to round-off are not an ordering violation
DEFAULT_COMPETITORS = ("prior_predictive", "perturbed_bayes(0.2)", "plug_in_posterior_mean", "plug_in_mle")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class ToleranceBreach(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    family: str = "gamma"
    family_hyper: dict = field(default_factory=dict)
    prior: str | None = None
    prior_hyper: dict = field(default_factory=dict)
    settings: QuadratureSettings = QuadratureSettings()
    samples: str | None = None
    out: str | None = None
    x1_grid: str | None = None
    x2_grid: str | None = None
    t_grid: str | None = None
    engine: str = "auto"
    n: int | None = None
    reps: int = 2000
    seed: int = 0
    x1_per_rep: int = 4
    jobs: int = 1
    estimators: str = ",".join(DEFAULT_COMPETITORS)
    losses: str = ",".join(k.value for k in LossKind)
    cases: int = 20


_RUN_KEYS = {
    "samples": str, "out": str, "x1_grid": str, "x2_grid": str, "t_grid": str, "engine": str,
    "n": int, "reps": int, "seed": int, "x1_per_rep": int, "jobs": int,
    "estimators": str, "losses": str, "cases": int,
}
_SETTING_TYPES = {f.name: f.type for f in dataclasses.fields(QuadratureSettings)}


def _cast(kind, raw, where):
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from None


def parse_selector(text: str):
    """``name`` or ``name:key=value,key=value`` to ``(name, {key: value})``."""
    name, _, rest = text.partition(":")
    hyper = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        k, eq, v = item.partition("=")
        if not eq or not k.strip():
            raise ConfigError(f"bad selector item {item!r} in {text!r}; expected key=value")
        hyper[k.strip()] = v.strip()
    if not name.strip():
        raise ConfigError(f"empty selector {text!r}")
    return name.strip(), hyper


def read_config_file(path: str, cfg: RunConfig) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    for section in parser.sections():
        items = dict(parser.items(section))
        if section in ("family", "prior"):
            if "name" not in items:
                raise ConfigError(f"{path}: [{section}] needs a name")
            name = items.pop("name")
            if section == "family":
                cfg.family, cfg.family_hyper = name, items
            else:
                cfg.prior, cfg.prior_hyper = name, items
        elif section == "quadrature":
            vals = {}
            for k, v in items.items():
                if k not in _SETTING_TYPES:
                    raise ConfigError(f"{path}: unknown key {k!r} in [quadrature]")
                vals[k] = _cast(_SETTING_TYPES[k], v, f"{path} [quadrature] {k}")
            try:
                cfg.settings = dataclasses.replace(cfg.settings, **vals)
            except ValueError as e:
                raise ConfigError(f"{path}: {e}") from None
        elif section == "run":
            for k, v in items.items():
                key = k.replace("-", "_")
                if key not in _RUN_KEYS:
                    raise ConfigError(f"{path}: unknown key {k!r} in [run]")
                setattr(cfg, key, _cast(_RUN_KEYS[key], v, f"{path} [run] {k}"))
        else:
            raise ConfigError(f"{path}: unknown section [{section}]")
    return cfg


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = read_config_file(args.config, cfg)
    if args.family:
        cfg.family, cfg.family_hyper = parse_selector(args.family)
    if args.prior:
        cfg.prior, cfg.prior_hyper = parse_selector(args.prior)
    for key in _RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def _floats(text, what):
    try:
        return tuple(float(v) for v in text.split(";") if v.strip())
    except ValueError:
        raise ConfigError(f"{what}: expected ';'-separated numbers, got {text!r}") from None


def build_prior(name, hyper):
    if name is None:
        return None
    try:
        if name == "gamma":
            return GammaPrior(float(hyper.pop("shape", 1.0)), float(hyper.pop("scale", 1.0)), **hyper)
        if name == "normal":
            return NormalPrior(float(hyper.pop("loc", 0.0)), float(hyper.pop("var", 1.0)), **hyper)
        if name == "uniform":
            return UniformPrior(float(hyper.pop("lo", 0.0)), float(hyper.pop("hi", 1.0)), **hyper)
        if name == "point":
            theta = float(hyper.pop("theta"))
            if hyper:
                raise TypeError(f"unexpected keys {sorted(hyper)}")
            return FinitePrior.point_mass(theta)
        if name == "finite":
            pts = _floats(hyper.pop("points"), "finite prior points")
            w = _floats(hyper.pop("weights"), "finite prior weights") if "weights" in hyper else (1.0 / len(pts),) * len(pts)
            if hyper:
                raise TypeError(f"unexpected keys {sorted(hyper)}")
            return FinitePrior(pts, w)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"prior {name!r}: {e}") from None
    raise ConfigError(f"unknown prior {name!r}; choose gamma, normal, uniform, point or finite")


def build_family(cfg: RunConfig):
    try:
        return make_family(cfg.family, **dict(cfg.family_hyper))
    except (TypeError, ValueError, KeyError, OSError) as e:
        raise ConfigError(f"family {cfg.family!r}: {e}") from None


def parse_grid(text: str | None, what: str):
    """``a:b:k`` (k evenly spaced points) or ``v1;v2;...``."""
    if text is None:
        return None
    parts = text.split(":")
    try:
        if len(parts) == 3:
            a, b, k = float(parts[0]), float(parts[1]), int(parts[2])
            if k < 1 or not (math.isfinite(a) and math.isfinite(b)) or (k > 1 and b < a):
                raise ValueError
            return np.linspace(a, b, k) if k > 1 else np.array([a])
        if len(parts) == 1:
            return np.array(_floats(text, what))
    except ValueError:
        pass
    raise ConfigError(f"{what}: expected a:b:k or v1;v2;..., got {text!r}")


# ---------------------------------------------------------------------------
# data


def read_samples(path: str | None) -> np.ndarray:
    """Pairs from an ``x1,x2`` text file; ``#`` starts a comment."""
    if path is None:
        return np.empty((0, 2))
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as e:
        raise DataError(f"cannot read samples {path}: {e.strerror}") from None
    rows = []
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        cells = [c.strip() for c in body.split(",")]
        if len(cells) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 comma-separated values, got {len(cells)}")
        try:
            pair = [float(c) for c in cells]
        except ValueError:
            raise DataError(f"{path}:{lineno}: not a number in {body!r}") from None
        if not all(math.isfinite(v) for v in pair):
            raise DataError(f"{path}:{lineno}: non-finite value in {body!r}")
        rows.append(pair)
    return np.array(rows, dtype=float).reshape(-1, 2)


def read_table(text: str) -> list:
    """Parse a table written by this CLI into a list of dicts (numbers as floats)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    header = lines[0].split(",")
    out = []
    for ln in lines[1:]:
        row = {}
        for k, v in zip(header, ln.split(",")):
            try:
                row[k] = float(v) if v != "" else None
            except ValueError:
                row[k] = v
        out.append(row)
    return out


def _g(v) -> str:
    return "" if v is None else f"{float(v):.12g}"


# ---------------------------------------------------------------------------
# commands


def _fit(family, prior, X, engine, settings):
    try:
        return BayesPredictiveEstimator(family, prior, engine, settings).fit(X)
    except (NotImplementedError, ValueError) as e:
        if isinstance(e, SupportError):
            raise
        raise ConfigError(f"engine {engine!r} unavailable for this family/prior: {e}") from None


def _estimate_rows(est, family, x1s, x2s, ts):
    rows = []
    for a in x1s:
        rows.append(("regression", a, None, est.predict([a])[0]))
        if x2s is not None:
            for b, v in zip(x2s, np.atleast_1d(est.conditional_density(a, x2s))):
                rows.append(("density", a, b, v))
        if ts is not None:
            order = np.argsort(ts, kind="stable")
            F = np.atleast_1d(est.conditional_cdf(a, ts[order]))
            F = np.maximum.accumulate(F)  # guard the printed column against round-off dips
            for b, v in zip(ts[order], F):
                rows.append(("cdf", a, b, v))
    return rows


def cmd_estimate(cfg: RunConfig, out) -> int:
    family = build_family(cfg)
    prior = build_prior(cfg.prior, dict(cfg.prior_hyper))
    X = validate_sample(family, read_samples(cfg.samples))
    x1s = parse_grid(cfg.x1_grid, "--x1-grid")
    if x1s is None:
        raise ConfigError("estimate needs --x1-grid")
    off = ~family.x1_support.contains(x1s)
    if off.any():
        raise DataError(f"--x1-grid point {int(np.argmax(off))} ({x1s[off][0]:g}) outside the x1 support {family.x1_support}")
    x2s = parse_grid(cfg.x2_grid, "--x2-grid")
    if x2s is None and family.x2_support.discrete:
        x2s = family.x2_support.array
    ts = parse_grid(cfg.t_grid, "--t-grid")
    if cfg.engine not in ("auto", "closed-form", "numeric", "both"):
        raise ConfigError(f"unknown engine {cfg.engine!r}")
    if cfg.engine != "both":
        rows = _estimate_rows(_fit(family, prior, X, cfg.engine, cfg.settings), family, x1s, x2s, ts)
        out.write("quantity,x1,arg,value\n")
        for q, a, b, v in rows:
            out.write(f"{q},{_g(a)},{_g(b)},{_g(v)}\n")
        return EXIT_OK
    cf = _estimate_rows(_fit(family, prior, X, "closed-form", cfg.settings), family, x1s, x2s, ts)
    nm = _estimate_rows(_fit(family, prior, X, "numeric", cfg.settings), family, x1s, x2s, ts)
    worst = 0.0
    out.write("quantity,x1,arg,closed_form,numeric,discrepancy\n")
    for (q, a, b, v), (_, _, _, w) in zip(cf, nm):
        d = abs(v - w) / max(1.0, abs(v))
        worst = max(worst, d)
        out.write(f"{q},{_g(a)},{_g(b)},{_g(v)},{_g(w)},{_g(d)}\n")
    _note(f"max engine discrepancy {worst:.3g} (limit {ENGINE_TOLERANCE:g})")
    if worst > ENGINE_TOLERANCE:
        raise ToleranceBreach(f"closed-form and numeric engines differ by {worst:.3g} > {ENGINE_TOLERANCE:g}")
    return EXIT_OK


def cmd_risk(cfg: RunConfig, out) -> int:
    family = build_family(cfg)
    prior = build_prior(cfg.prior, dict(cfg.prior_hyper))
    names = ["bayes"] + [s.strip() for s in cfg.estimators.split(",") if s.strip() and s.strip() != "bayes"]
    try:
        losses = [LossKind(s.strip()) for s in cfg.losses.split(",") if s.strip()]
        estimators = {nm: competitor(nm, family, prior, settings=cfg.settings) for nm in names}
        cmp = compare_estimators(
            family, prior, estimators, losses, cfg.n if cfg.n is not None else 5, cfg.reps, cfg.seed,
            cfg.x1_per_rep, cfg.jobs, cfg.settings,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out.write(RiskReport.HEADER + ",margin,margin_se\n")
    violations = []
    for loss in losses:
        for nm in names:
            rep = cmp.report(nm, loss)
            diff, se = (0.0, 0.0) if nm == "bayes" else cmp.margin(nm, "bayes", loss)
            out.write(f"{rep.to_line()},{diff:.12g},{se:.12g}\n")
            if diff < -(ORDER_SES * se + ORDER_FLOOR):
                violations.append(f"{nm} beats bayes on {loss.value} by {-diff:.3g} ({-diff / se:.1f} SE)")
    for v in violations:
        _note(v)
    return EXIT_ORDER if violations else EXIT_OK


def cmd_validate(cfg: RunConfig, out) -> int:
    family = build_family(cfg)
    if isinstance(family, FiniteTableFamily):
        checks = validate_finite(family, cfg.n if cfg.n is not None else 3)
    else:
        prior = build_prior(cfg.prior, dict(cfg.prior_hyper))
        checks = validate_continuous(family, prior, cfg.cases, cfg.seed, cfg.settings)
    out.write("check,max_violation,tolerance,status\n")
    for c in checks:
        out.write(c.to_line() + "\n")
    bad = [c.name for c in checks if not c.ok]
    if bad:
        _note("tolerance breach: " + ", ".join(bad))
        return EXIT_TOLERANCE
    return EXIT_OK


# ---------------------------------------------------------------------------


def _note(msg: str, err: bool = False):
    tag = "error" if err else "note"
    if sys.stderr.isatty() and not os.environ.get("NO_COLOR"):
        tag = f"\033[{31 if err else 33}m{tag}\033[0m"
    print(f"{tag}: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [family], [prior], [quadrature], [run] sections")
    common.add_argument("--family", help="e.g. gamma:lam=1, coin, normal:sigma=1,rho=0, finite:name=ternary")
    common.add_argument("--prior", help="e.g. gamma:shape=1,scale=1, uniform, point:theta=2, finite:points=1;2,weights=.5;.5")
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=int, help="sample size (risk) or max enumeration size (validate)")
    common.add_argument("--out", help="write the table here instead of stdout")

    p = argparse.ArgumentParser(prog="postpred", description="Posterior-predictive estimators of conditional laws.")
    sub = p.add_subparsers(dest="command", required=True)
    est = sub.add_parser("estimate", parents=[common], help="evaluate the Bayes estimators on grids")
    est.add_argument("--samples", help="x1,x2 per line; # comments")
    est.add_argument("--x1-grid", dest="x1_grid", metavar="A:B:K")
    est.add_argument("--x2-grid", dest="x2_grid", metavar="A:B:K", help="density evaluation points")
    est.add_argument("--t-grid", dest="t_grid", metavar="A:B:K", help="CDF evaluation points")
    est.add_argument("--engine", choices=["closed-form", "numeric", "both"])
    risk = sub.add_parser("risk", parents=[common], help="paired Monte-Carlo risk comparison")
    risk.add_argument("--reps", type=int)
    risk.add_argument("--x1-per-rep", dest="x1_per_rep", type=int)
    risk.add_argument("--jobs", type=int)
    risk.add_argument("--estimators", help="comma list of competitors; bayes is always included")
    risk.add_argument("--losses", help="comma list from " + ",".join(k.value for k in LossKind))
    val = sub.add_parser("validate", parents=[common], help="run the self-check suite for a family")
    val.add_argument("--cases", type=int, help="random cases for continuous families")
    return p


COMMANDS = {"estimate": cmd_estimate, "risk": cmd_risk, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if cfg.out:
            with open(cfg.out, "w") as fh:
                return COMMANDS[args.command](cfg, fh)
        return COMMANDS[args.command](cfg, sys.stdout)
    except (ConfigError, TableSizeError) as e:
        _note(str(e), err=True)
        return EXIT_CONFIG
    except (DataError, SupportError, NullConditioningError) as e:
        _note(str(e), err=True)
        return EXIT_DATA
    except (ToleranceBreach, RiskHarnessError, IntegrationError, NonIntegrableMeanError) as e:
        _note(str(e), err=True)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
