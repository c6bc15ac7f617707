"""Command line entry point: ``npp {bf-curves,kl-curves,median-exp,ate}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from ..causal import CausalDataset, FlexibleConfig, gnpp_ate
from ..core import SeededRng
from ..gbf import GbfConfig
from .experiments import (
    ConfigError,
    DataError,
    ExperimentConfig,
    ResultRow,
    run_bf_curves,
    run_kl_curves,
    run_median_experiment,
    summary_line,
    write_rows,
)

EXIT_CONFIG, EXIT_DATA = 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def load_config_file(path) -> dict:
    """Read a JSON or YAML mapping."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError("config file must contain a mapping")
    return obj


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="base seed (default 0 or the config value)")
    p.add_argument("--out", type=Path, default=None, help="output path for rows (CSV) or results (JSON)")
    p.add_argument("--config", type=Path, default=None, help="JSON/YAML config file")
    p.add_argument("--threads", type=int, default=1, help="worker processes for replicates")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="npp", description="NPP / gNPP experiments and the ATE workflow")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("bf-curves", "exact log BF and log gBF per replicate"),
                        ("kl-curves", "KL to truth of parametric, Polya-tree and NPP predictives"),
                        ("median-exp", "median error and interval coverage for pm / BB / gNPP")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--n-grid", type=_int_list, default=None, help="comma list, e.g. 5,50,500")
        p.add_argument("--scenarios", default=None, help="comma list of well_specified,misspecified")
    p = sub.add_parser("ate", help="gNPP average treatment effect from a CSV file")
    _common(p)
    p.add_argument("csv", type=Path)
    p.add_argument("--treatment", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--confounders", default="", help="comma list of column names")
    p.add_argument("--subsample", type=_int_list, default=None, help="comma list of subsample sizes")
    p.add_argument("--n-draws", type=int, default=2000)
    return parser


def _experiment_config(args) -> ExperimentConfig:
    mapping = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        mapping["seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        mapping["replicates"] = args.replicates
    if getattr(args, "n_grid", None) is not None:
        mapping["n_grid"] = args.n_grid
    if getattr(args, "scenarios", None):
        mapping["scenarios"] = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    return ExperimentConfig.from_mapping(mapping)


def read_causal_csv(path, treatment: str, outcome: str, confounders: list[str]) -> CausalDataset:
    """Parse a headered UTF-8 CSV; every selected cell must be a finite decimal number."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            cols = [treatment, outcome, *confounders]
            missing = [c for c in cols if c not in header]
            if missing:
                raise DataError(f"{path}: missing columns {missing}")
            idx = [header.index(c) for c in cols]
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
                try:
                    vals = [float(rec[i]) for i in idx]
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric or missing value") from None
                if not all(np.isfinite(vals)):
                    raise DataError(f"{path}:{lineno}: non-finite value")
                rows.append(vals)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two data rows")
    arr = np.array(rows)
    return CausalDataset(arr[:, 0], arr[:, 1], arr[:, 2:])


def run_ate(path, treatment, outcome, confounders, seed=0, subsample=None, gbf_cfg=GbfConfig(),
            flex_cfg=FlexibleConfig(), n_draws=2000):
    """Results for the full data and each subsample size: ``(json_obj, rows)``."""
    data = read_causal_csv(path, treatment, outcome, confounders)
    sizes = sorted(set(subsample or [])) + [data.n]
    results, rows = {}, []
    for k, n in enumerate(sizes):
        if n > data.n or n < 2:
            raise ConfigError(f"subsample size {n} outside [2, {data.n}]")
        rng = SeededRng(seed, 0).child(n)
        sub = data
        if n < data.n:
            sel = np.sort(rng.child(0).generator().choice(data.n, n, replace=False))
            sub = data.subset(sel)
        res = gnpp_ate(sub, gbf_cfg, flex_cfg, n_draws, rng.child(1))
        summary = res.summary()
        results[str(n)] = summary
        rows.append(ResultRow("ate", n, 0, "eta_hat", res.eta_hat))
        for name in ("parametric", "flexible", "gnpp"):
            rows.append(ResultRow("ate", n, 0, f"ate_p_positive_{name}", summary[name]["p_positive"]))
    return {"command": "ate", "n": data.n, "results": results}, rows


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.command == "ate":
            mapping = load_config_file(args.config) if args.config else {}
            try:
                gbf_cfg = GbfConfig(**mapping.get("gbf", {}))
                flex_cfg = FlexibleConfig(**mapping.get("flexible", {}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
            confounders = [c.strip() for c in args.confounders.split(",") if c.strip()]
            seed = args.seed if args.seed is not None else int(mapping.get("seed", 0))
            obj, rows = run_ate(args.csv, args.treatment, args.outcome, confounders, seed, args.subsample,
                                gbf_cfg, flex_cfg, args.n_draws)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    json.dump(obj, fh, indent=2, sort_keys=True)
            print(json.dumps(obj, sort_keys=True, separators=(",", ":")))
            return 0
        cfg = _experiment_config(args)
        runner = {"bf-curves": run_bf_curves, "kl-curves": run_kl_curves,
                  "median-exp": run_median_experiment}[args.command]
        rows = runner(cfg, threads=args.threads)
        if args.out:
            write_rows(args.out, rows)
        print(summary_line(args.command, rows))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # model-level failures on user data, e.g. a singular design
        if args.command == "ate":
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    raise SystemExit(main())
