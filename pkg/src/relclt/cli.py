"""Command-line entry point ``relclt``.

Each subcommand reads one declarative config document (TOML or JSON),
materializes every default, writes its report files into ``--out-dir`` and
finishes with ``manifest.json``.  ``--threads`` only changes how replicate
chunks are scheduled, never the numbers.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import mean_estimator_from, multiplier_spec_from
from .dgp import TimeSeriesSample, simulate_path, simulate_paths, spec_from_dict
from .errors import CapabilityError, ConfigError, SingularCovarianceError
from .inference import ks_nonstationarity_test, run_test, uniform_band
from .io import FORMATS, ingest_csv
from .mc import (ExperimentConfig, bootstrap_consistency_check, coverage_experiment,
                 level_power_experiment, relative_clt_check)
from .procspace import function_class_from, kernel_from, weight_family_from
from .rng import Stream

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_CAPABILITY, EXIT_NUMERIC = 0, 1, 2, 3

SUPPORTED_CELLS = (
    "exact covariance oracle: any process with identity / forward-differences classes; "
    "Gaussian processes (indep-hetero, regime-variance, tvar1, m-dependent-ma, trend-plus-noise) "
    "with monomials, indicators or paired-indicator-diff; centered-exponential indep-hetero "
    "with monomials or indicators")

_PROCESS = {"kind": "indep-hetero", "sigma": 1.0, "mean": 0.0}
_MULT = {"kind": "block-exponential", "m_rule": "cube-root", "unit_variance": False, "scale": 1.0}

DEFAULTS = {
    "simulate": {"process": _PROCESS, "n": 1000, "replicates": 1},
    "clt-check": {
        "process": {"kind": "regime-variance", "sigma1_sq": 1.0, "sigma2_sq": 4.0,
                    "pattern": {"kind": "oscillating-dyadic"}},
        "class": {"kind": "identity"}, "weights": {"kind": "constant", "value": 1.0},
        "grid": {"s_values": None}, "statistic": "sup",
        "n_schedule": [128, 512, 2048], "M": 10000, "threshold": 0.03, "variance_scale": 1.0},
    "bootstrap-check": {
        "process": {"kind": "indep-hetero", "sigma": {"kind": "sinusoid", "level": 1.0,
                                                      "amplitude": 0.5, "periods": 1.0}},
        "class": {"kind": "identity"}, "weights": {"kind": "sequential"},
        "grid": {"s_values": [round(0.05 * k, 10) for k in range(21)]}, "statistic": "sup",
        "n_schedule": [1024], "M": 5000, "threshold": 0.04,
        "multiplier": dict(_MULT, unit_variance=True), "centering": {"kind": "known"}},
    "trend-band": {
        "data": {"path": None, "format": "gistemp-wide", "impute": None},
        "process": _PROCESS, "n": 1000,
        "b": 0.1, "alpha": 0.1, "B": 300, "kernel": "triweight", "multiplier": _MULT},
    "test": {
        "data": {"path": None, "format": "gistemp-wide", "impute": None},
        "process": _PROCESS, "n": 1000,
        "class": {"kind": "identity"}, "weights": {"kind": "sequential"},
        "grid": {"s_values": None}, "alpha": 0.05, "B": 300,
        "multiplier": _MULT, "centering": {"kind": "zero"}},
    "ks-test": {
        "data": {"path": None, "format": "gistemp-wide", "impute": None},
        "process": _PROCESS, "n": 2000,
        "lag": 120, "thresholds": {"t_min": -5.0, "t_max": 5.0, "t_step": 0.05},
        "b": 0.05, "alpha": 0.05, "B": 1999, "kernel": "triweight",
        "grid": {"s_values": None}, "multiplier": _MULT},
    "coverage": {
        "process": {"kind": "trend-plus-noise",
                    "mean_fn": {"kind": "sinusoid", "level": 0.0, "amplitude": 1.0, "periods": 1.0},
                    "noise": {"kind": "tvar1", "phi": 0.5, "sigma": 1.0, "mean": 0.0}},
        "n": 1000, "b": 0.1, "alpha": 0.1, "B": 300, "runs": 200, "kernel": "triweight",
        "multiplier": _MULT},
    "level-power": {
        "h0": _PROCESS,
        "h1": {"kind": "trend-plus-noise", "mean_fn": {"kind": "linear", "intercept": 0.0, "slope": 2.0},
               "noise": _PROCESS},
        "n": 1000, "class": {"kind": "identity"}, "weights": {"kind": "sequential"},
        "grid": {"s_values": None}, "alphas": [0.05], "B": 300, "runs": 500, "runs_h1": 100,
        "multiplier": _MULT, "centering": {"kind": "zero"}},
}
SUBCOMMANDS = tuple(DEFAULTS)


# --------------------------------------------------------------------------
# config handling


def load_document(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError("--config", f"cannot read {p}: {e.strerror}") from None
    try:
        doc = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError("--config", f"cannot parse {p}: {e}") from None
    if doc.get("schema") == "relclt-manifest/1":
        doc = dict(doc["config"], seed=doc["seed"])
    return doc


def _merge(defaults, user, prefix=""):
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        name = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(name, f"unknown key; expected one of {sorted(defaults)}")
        d = defaults[key]
        if key == "thresholds" and isinstance(val, list):
            out[key] = list(val)
        elif isinstance(d, dict) and key in ("process", "h0", "h1", "class", "weights", "multiplier",
                                             "centering", "thresholds"):
            if not isinstance(val, dict):
                raise ConfigError(name, "expected a table")
            out[key] = copy.deepcopy(val)  # replaces the whole table: kinds carry their own keys
        elif isinstance(d, dict):
            if not isinstance(val, dict):
                raise ConfigError(name, "expected a table")
            out[key] = _merge(d, val, name + ".")
        else:
            out[key] = val
    return out


def resolve_config(subcommand: str, doc: dict) -> tuple[dict, int]:
    """Materialize defaults for ``subcommand``; returns (config, seed)."""
    doc = dict(doc)
    seed = doc.pop("seed", 0)
    section = doc.pop(subcommand, None)
    if section is None:
        section = {k: v for k, v in doc.items() if k not in SUBCOMMANDS}
    elif any(k not in SUBCOMMANDS for k in doc):
        bad = next(k for k in doc if k not in SUBCOMMANDS)
        raise ConfigError(bad, f"top-level key outside the [{subcommand}] table")
    cfg = _merge(DEFAULTS[subcommand], section)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    return cfg, seed


def _get(cfg, key, kind, check=None, what=""):
    val = cfg[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(key, f"expected an integer, got {val!r}")
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(key, f"expected a number, got {val!r}")
        val = float(val)
    if check is not None and not check(val):
        raise ConfigError(key, f"value {val!r} out of range{': ' + what if what else ''}")
    return val


def _build(key, factory, d):
    try:
        return factory(d)
    except KeyError as e:
        raise ConfigError(f"{key}.{e.args[0]}", "missing required key") from None
    except (ValueError, TypeError) as e:
        raise ConfigError(key, str(e)) from None


def _alpha(cfg, key="alpha"):
    return _get(cfg, key, float, lambda a: 0.0 < a < 1.0, "need 0 < alpha < 1")


def _pos_int(cfg, key):
    return _get(cfg, key, int, lambda v: v >= 1, "need a positive integer")


def _s_values(cfg, family):
    s = cfg["grid"].get("s_values")
    if s is None:
        return family.default_s_values()
    try:
        return np.asarray([float(v) for v in s])
    except (TypeError, ValueError):
        raise ConfigError("grid.s_values", "expected a list of numbers") from None


def _load_sample(cfg, stream: Stream) -> TimeSeriesSample:
    data = cfg["data"]
    if data.get("path"):
        if data.get("format") not in FORMATS:
            raise ConfigError("data.format", f"expected one of {FORMATS}")
        if data.get("impute") not in (None, "linear"):
            raise ConfigError("data.impute", "expected 'linear' or omitted")
        p = Path(data["path"])
        if not p.exists():
            raise ConfigError("data.path", f"file {p} not found")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sample = ingest_csv(p, data["format"], data.get("impute"))
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return sample
    spec = _build("process", spec_from_dict, cfg["process"])
    return simulate_path(spec, _pos_int(cfg, "n"), stream.child(0))


# --------------------------------------------------------------------------
# subcommands; each returns {filename: text}


def _cmd_simulate(cfg, seed, threads):
    spec = _build("process", spec_from_dict, cfg["process"])
    n, reps = _pos_int(cfg, "n"), _pos_int(cfg, "replicates")
    x = simulate_paths(spec, n, Stream(seed), reps)
    lines = [f"# relclt-series v1 spec={spec.spec_id} seed={seed}",
             ",".join(["i"] + [f"rep{k}" for k in range(reps)])]
    for i in range(n):
        lines.append(",".join([str(i + 1)] + [repr(float(v)) for v in x[:, i]]))
    return {"series.csv": "\n".join(lines) + "\n"}


def _experiment(cfg, seed, threads, with_bootstrap):
    family = _build("weights", weight_family_from, cfg["weights"])
    stat = cfg["statistic"]
    if stat != "sup":
        if not (isinstance(stat, list) and len(stat) == 3 and stat[0] == "marginal"):
            raise ConfigError("statistic", "expected 'sup' or ['marginal', j, k]")
        stat = tuple(stat)
    kw = {}
    if with_bootstrap:
        kw["multiplier"] = _build("multiplier", multiplier_spec_from, cfg["multiplier"])
        kw["centering"] = _build("centering", mean_estimator_from, cfg["centering"])
    else:
        kw["variance_scale"] = _get(cfg, "variance_scale", float, lambda v: v > 0)
    try:
        return ExperimentConfig(
            _build("process", spec_from_dict, cfg["process"]),
            _build("class", function_class_from, cfg["class"]), family,
            _s_values(cfg, family), stat, tuple(cfg["n_schedule"]), _pos_int(cfg, "M"),
            seed=seed, threshold=_get(cfg, "threshold", float, lambda v: v > 0), workers=threads, **kw)
    except ValueError as e:
        raise ConfigError("n_schedule" if "n_schedule" in str(e) else "M", str(e)) from None


def _cmd_clt_check(cfg, seed, threads):
    rep = relative_clt_check(_experiment(cfg, seed, threads, False))
    return {"distance.json": rep.to_json(), "distance.csv": rep.to_csv()}


def _cmd_bootstrap_check(cfg, seed, threads):
    rep = bootstrap_consistency_check(_experiment(cfg, seed, threads, True))
    return {"distance.json": rep.to_json(), "distance.csv": rep.to_csv()}


def _cmd_trend_band(cfg, seed, threads):
    root = Stream(seed)
    sample = _load_sample(cfg, root)
    band = uniform_band(sample, _get(cfg, "b", float, lambda b: 0 < b <= 1), _alpha(cfg),
                        _pos_int(cfg, "B"), _build("multiplier", multiplier_spec_from, cfg["multiplier"]),
                        root.child(1), _build("kernel", kernel_from, cfg["kernel"]), workers=threads)
    diag = dict(band.diagnostics(), schema="relclt-band/1", source=sample.spec_id)
    return {"band.csv": band.to_csv(), "band.json": json.dumps(diag, indent=2),
            "bootstrap.csv": band.run.to_csv()}


def _cmd_test(cfg, seed, threads):
    root = Stream(seed)
    sample = _load_sample(cfg, root)
    family = _build("weights", weight_family_from, cfg["weights"])
    rep = run_test(sample, _build("class", function_class_from, cfg["class"]), family, _alpha(cfg),
                   _pos_int(cfg, "B"), _build("multiplier", multiplier_spec_from, cfg["multiplier"]),
                   _build("centering", mean_estimator_from, cfg["centering"]), root.child(1),
                   _s_values(cfg, family), threads)
    return {"report.json": rep.to_json(), "bootstrap.csv": rep.run.to_csv()}


def _thresholds(cfg):
    t = cfg["thresholds"]
    if isinstance(t, list):
        return [float(v) for v in t]
    try:
        lo, hi, step = float(t["t_min"]), float(t["t_max"]), float(t["t_step"])
    except KeyError as e:
        raise ConfigError(f"thresholds.{e.args[0]}", "missing required key") from None
    if step <= 0 or hi < lo:
        raise ConfigError("thresholds", "need t_step > 0 and t_max >= t_min")
    count = int(round((hi - lo) / step)) + 1
    return list(np.round(lo + step * np.arange(count), 10))


def _cmd_ks_test(cfg, seed, threads):
    root = Stream(seed)
    sample = _load_sample(cfg, root)
    lag = _get(cfg, "lag", int, lambda v: 1 <= v < sample.n, "need 1 <= lag < n")
    s = cfg["grid"].get("s_values")
    rep = ks_nonstationarity_test(sample, lag, _thresholds(cfg), _get(cfg, "b", float, lambda b: 0 < b <= 1),
                                  _alpha(cfg), _pos_int(cfg, "B"), root.child(1),
                                  _build("kernel", kernel_from, cfg["kernel"]),
                                  None if s is None else [float(v) for v in s],
                                  _build("multiplier", multiplier_spec_from, cfg["multiplier"]), threads)
    return {"report.json": rep.to_json(), "bootstrap.csv": rep.run.to_csv()}


def _cmd_coverage(cfg, seed, threads):
    rep = coverage_experiment(_build("process", spec_from_dict, cfg["process"]), _pos_int(cfg, "n"),
                              _get(cfg, "b", float, lambda b: 0 < b <= 1), _alpha(cfg),
                              _pos_int(cfg, "B"), _pos_int(cfg, "runs"),
                              _build("multiplier", multiplier_spec_from, cfg["multiplier"]), seed,
                              _build("kernel", kernel_from, cfg["kernel"]), workers=threads)
    return {"coverage.json": rep.to_json()}


def _cmd_level_power(cfg, seed, threads):
    family = _build("weights", weight_family_from, cfg["weights"])
    alphas = cfg["alphas"]
    if not isinstance(alphas, list) or not alphas or not all(
            isinstance(a, (int, float)) and 0 < a < 1 for a in alphas):
        raise ConfigError("alphas", "expected a nonempty list of levels in (0, 1)")
    h1 = None if cfg["h1"] == {} else _build("h1", spec_from_dict, cfg["h1"])
    rep = level_power_experiment(
        _build("h0", spec_from_dict, cfg["h0"]), h1, _build("class", function_class_from, cfg["class"]),
        family, _pos_int(cfg, "n"), _pos_int(cfg, "B"), _pos_int(cfg, "runs"), sorted(alphas),
        _build("multiplier", multiplier_spec_from, cfg["multiplier"]),
        _build("centering", mean_estimator_from, cfg["centering"]), _s_values(cfg, family), seed,
        _pos_int(cfg, "runs_h1"), threads)
    return {"rejection.json": rep.to_json()}


COMMANDS = {
    "simulate": _cmd_simulate, "clt-check": _cmd_clt_check, "bootstrap-check": _cmd_bootstrap_check,
    "trend-band": _cmd_trend_band, "test": _cmd_test, "ks-test": _cmd_ks_test,
    "coverage": _cmd_coverage, "level-power": _cmd_level_power,
}


# --------------------------------------------------------------------------
# driver


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relclt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"relclt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run {name}")
        sp.add_argument("--config", help="TOML or JSON config document (a manifest also works)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out-dir", default=".", help="directory for reports and the manifest")
        sp.add_argument("--threads", type=int, default=1, help="worker threads; never affects results")
    return p


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def execute(command: str, doc: dict, seed: int | None, out_dir, threads: int = 1) -> dict:
    """Run a subcommand and write its files; returns the manifest dict."""
    cfg, cfg_seed = resolve_config(command, doc)
    seed = cfg_seed if seed is None else seed
    if seed < 0:
        raise ConfigError("--seed", "must be a nonnegative integer")
    if threads < 1:
        raise ConfigError("--threads", "must be at least 1")
    start = time.perf_counter()
    files = COMMANDS[command](cfg, seed, threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = {
        "schema": "relclt-manifest/1", "subcommand": command, "tool_version": __version__,
        "seed": seed, "config": cfg,
        "artifacts": {name: {"path": str(out / name), "sha256": _sha256(text)}
                      for name, text in files.items()},
        "threads": threads, "wall_clock_seconds": round(time.perf_counter() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        doc = load_document(args.config) if args.config else {}
        manifest = execute(args.command, doc, args.seed, args.out_dir, args.threads)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityError as e:
        print(f"capability error: {e}\nsupported cells: {SUPPORTED_CELLS}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (SingularCovarianceError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:  # data files that fail to parse
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({k: manifest[k] for k in ("subcommand", "seed", "artifacts")}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
