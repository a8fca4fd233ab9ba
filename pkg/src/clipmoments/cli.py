"""Batch comparison of analytic and Monte Carlo moments over parameter sweeps.

Usage::

    clipmoments compute sweep.yaml [--output out.csv] [--method both]
                                   [--seed 7] [--samples 1000000] [--workers 4]

The config is YAML with the top-level keys ``problem``, ``family``,
``s_pairs``, ``h_grid`` and optionally ``x_grid``, ``method``, ``mc``,
``quadrature`` and ``output`` (see README.md). Exit status: 0 ok, 1 usage or
config error, 2 when any row has a z-score above 5, 3 on I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .analytic import FAMILIES, QuadratureRule, mu_dispatch
from .mc import McConfig, estimate_mu
from .model import ComplexExponential, Linear, ModelDomainError, Polynomial, ProblemSpec, TestPoint

__all__ = [
    "ConfigError",
    "OutputSpec",
    "SweepConfig",
    "COLUMNS",
    "parse_config",
    "run_sweep",
    "format_table",
    "main",
]

COLUMNS = (
    "family", "s1", "s2", "h1", "h2", "x",
    "mu_analytic", "method_tag", "mu_mc", "mc_stderr", "abs_diff", "z_score", "flags",
)
METHODS = ("analytic", "mc", "both")
FORMATS = ("csv", "json")
Z_ALARM = 5.0

EXIT_OK, EXIT_USAGE, EXIT_REGRESSION, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid sweep configuration; the message names the offending key."""


@dataclass(frozen=True)
class OutputSpec:
    path: Optional[str] = None  # None writes to stdout
    format: str = "csv"


@dataclass(frozen=True)
class SweepConfig:
    problem: ProblemSpec
    family: str
    s_pairs: Tuple[Tuple[int, int], ...]
    h_grid: Tuple[Tuple[float, float], ...]
    x_grid: Optional[Tuple[float, ...]] = None
    method: str = "both"
    mc: McConfig = field(default_factory=McConfig)
    quadrature: QuadratureRule = field(default_factory=QuadratureRule)
    output: OutputSpec = field(default_factory=OutputSpec)

    def points(self) -> List[TestPoint]:
        """Test points in grid order: s_pairs, then h_grid, then x_grid."""
        xs = self.x_grid if self.family == "conditional" else (None,)
        return [
            TestPoint(s1, s2, h1, h2, x)
            for s1, s2 in self.s_pairs
            for h1, h2 in self.h_grid
            for x in xs
        ]


# ---------------------------------------------------------------------------
# config parsing


def _where(path: str) -> str:
    return path or "<root>"


def _mapping(node, path: str, allowed: Sequence[str], required: Sequence[str] = ()) -> Dict[str, Any]:
    if not isinstance(node, dict):
        raise ConfigError(f"{_where(path)}: expected a mapping")
    for key in node:
        if key not in allowed:
            raise ConfigError(f"{_where(path)}: unknown key {key!r}")
    for key in required:
        if key not in node:
            raise ConfigError(f"{_where(path)}: missing required key {key!r}")
    return node


def _real(node, path: str, positive: bool = False) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {node!r}")
    value = float(node)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{path}: must be positive, got {node!r}")
    return value


def _int(node, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(node, bool) or not isinstance(node, int):
        raise ConfigError(f"{path}: expected an integer, got {node!r}")
    if minimum is not None and node < minimum:
        raise ConfigError(f"{path}: must be at least {minimum}, got {node!r}")
    return node


def _bool(node, path: str) -> bool:
    if not isinstance(node, bool):
        raise ConfigError(f"{path}: expected true or false, got {node!r}")
    return node


def _complex(node, path: str) -> complex:
    # a number, a [re, im] pair, or a string such as "1-2j"
    if isinstance(node, bool):
        raise ConfigError(f"{path}: expected a complex number, got {node!r}")
    if isinstance(node, (int, float)):
        return complex(_real(node, path))
    if isinstance(node, list) and len(node) == 2:
        return complex(_real(node[0], f"{path}[0]"), _real(node[1], f"{path}[1]"))
    if isinstance(node, str):
        try:
            return complex(node.replace(" ", ""))
        except ValueError:
            pass
    raise ConfigError(f"{path}: expected a complex number, got {node!r}")


def _list(node, path: str) -> list:
    if not isinstance(node, list):
        raise ConfigError(f"{path}: expected a list")
    if not node:
        raise ConfigError(f"{path}: must not be empty")
    return node


def _model(node, path: str):
    kind = _mapping(node, path, ("kind", "c", "frequencies", "amplitudes", "coefficients"), ("kind",))["kind"]
    expected = {
        "linear": ("c",),
        "complex_exponential": ("frequencies", "amplitudes"),
        "polynomial": ("coefficients",),
    }
    if kind not in expected:
        raise ConfigError(f"{path}.kind: must be one of {sorted(expected)}, got {kind!r}")
    _mapping(node, path, ("kind",) + expected[kind], expected[kind])
    try:
        if kind == "linear":
            c = _list(node["c"], f"{path}.c")
            return Linear([_real(v, f"{path}.c[{i}]") for i, v in enumerate(c)])
        if kind == "complex_exponential":
            w = _list(node["frequencies"], f"{path}.frequencies")
            a = _list(node["amplitudes"], f"{path}.amplitudes")
            return ComplexExponential(
                [_real(v, f"{path}.frequencies[{i}]") for i, v in enumerate(w)],
                [_complex(v, f"{path}.amplitudes[{i}]") for i, v in enumerate(a)],
            )
        rows = _list(node["coefficients"], f"{path}.coefficients")
        if not all(isinstance(r, list) for r in rows):
            rows = [rows]
        return Polynomial(
            [[_complex(v, f"{path}.coefficients[{k}][{j}]") for j, v in enumerate(_list(r, f"{path}.coefficients[{k}]"))]
             for k, r in enumerate(rows)]
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _pair(node, path: str, kind):
    if not isinstance(node, list) or len(node) != 2:
        raise ConfigError(f"{path}: expected a pair [a, b], got {node!r}")
    return tuple(kind(v, f"{path}[{i}]") for i, v in enumerate(node))


def parse_config(text: str) -> SweepConfig:
    """Parse and validate a YAML sweep configuration, filling defaults."""
    try:
        root = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: not valid YAML ({exc})") from None
    root = _mapping(
        root,
        "",
        ("problem", "family", "s_pairs", "h_grid", "x_grid", "method", "mc", "quadrature", "output"),
        ("problem", "family", "s_pairs", "h_grid"),
    )

    prob = _mapping(root["problem"], "problem", ("sigma_x", "sigma_v", "model", "n_y"), ("sigma_x", "sigma_v", "model"))
    sigma_x = _real(prob["sigma_x"], "problem.sigma_x", positive=True)
    sigma_v = _real(prob["sigma_v"], "problem.sigma_v", positive=True)
    model = _model(prob["model"], "problem.model")
    n_y = _int(prob["n_y"], "problem.n_y", 1) if "n_y" in prob else None
    if n_y is not None and n_y != model.n_y:
        raise ConfigError(f"problem.n_y: {n_y} does not match the model output dimension {model.n_y}")
    problem = ProblemSpec(sigma_x, sigma_v, model, n_y)

    family = root["family"]
    if family not in FAMILIES:
        raise ConfigError(f"family: must be one of {list(FAMILIES)}, got {family!r}")
    s_pairs = tuple(
        _pair(p, f"s_pairs[{i}]", lambda v, where: _int(v, where))
        for i, p in enumerate(_list(root["s_pairs"], "s_pairs"))
    )
    h_grid = tuple(
        _pair(p, f"h_grid[{i}]", _real) for i, p in enumerate(_list(root["h_grid"], "h_grid"))
    )
    x_grid = None
    if "x_grid" in root:
        x_grid = tuple(_real(v, f"x_grid[{i}]") for i, v in enumerate(_list(root["x_grid"], "x_grid")))
    if family == "conditional" and x_grid is None:
        raise ConfigError("<root>: missing required key 'x_grid' for the conditional family")

    method = root.get("method", "both")
    if method not in METHODS:
        raise ConfigError(f"method: must be one of {list(METHODS)}, got {method!r}")

    mc_node = _mapping(root.get("mc", {}), "mc", ("seed", "n_samples", "antithetic"))
    try:
        mc = McConfig(
            seed=_int(mc_node.get("seed", 0), "mc.seed", 0),
            n_samples=_int(mc_node.get("n_samples", 1_000_000), "mc.n_samples", 2),
            antithetic=_bool(mc_node.get("antithetic", False), "mc.antithetic"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"mc: {exc}") from None

    q_node = _mapping(
        root.get("quadrature", {}), "quadrature", ("kind", "order", "adaptive", "max_order", "target_abs_tol")
    )
    defaults = QuadratureRule()
    try:
        order = _int(q_node.get("order", defaults.order), "quadrature.order", 1)
        quadrature = QuadratureRule(
            kind=q_node.get("kind", defaults.kind),
            order=order,
            adaptive=_bool(q_node.get("adaptive", defaults.adaptive), "quadrature.adaptive"),
            max_order=_int(q_node.get("max_order", max(order, defaults.max_order)), "quadrature.max_order", 1),
            target_abs_tol=_real(
                q_node.get("target_abs_tol", defaults.target_abs_tol), "quadrature.target_abs_tol", positive=True
            ),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"quadrature: {exc}") from None

    out_node = _mapping(root.get("output", {}), "output", ("path", "format"))
    fmt = out_node.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError(f"output.format: must be one of {list(FORMATS)}, got {fmt!r}")
    path = out_node.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError(f"output.path: expected a string, got {path!r}")

    return SweepConfig(
        problem=problem,
        family=family,
        s_pairs=s_pairs,
        h_grid=h_grid,
        x_grid=x_grid,
        method=method,
        mc=mc,
        quadrature=quadrature,
        output=OutputSpec(path, fmt),
    )


# ---------------------------------------------------------------------------
# sweep


def _row(cfg: SweepConfig, tp: TestPoint) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "family": cfg.family, "s1": tp.s1, "s2": tp.s2, "h1": tp.h1, "h2": tp.h2, "x": tp.x_cond,
        "mu_analytic": None, "method_tag": None, "mu_mc": None, "mc_stderr": None,
        "abs_diff": None, "z_score": None, "flags": "",
    }
    flags = []
    try:
        if cfg.method in ("analytic", "both"):
            res = mu_dispatch(cfg.problem, cfg.family, tp, cfg.quadrature)
            row["mu_analytic"], row["method_tag"] = res.value, res.method
            if not res.converged:
                flags.append("quadrature_not_converged")
            if "pre_clamp" in res.diagnostics:
                flags.append("clamped")
        if cfg.method in ("mc", "both"):
            est = estimate_mu(cfg.problem, cfg.family, tp, cfg.mc)
            row["mu_mc"], row["mc_stderr"] = est.mean, est.std_err
            if cfg.method == "mc":
                row["method_tag"] = "mc"
    except ModelDomainError as exc:
        flags.append(f"domain_error: {exc}")
    if row["mu_analytic"] is not None and row["mu_mc"] is not None:
        diff = abs(row["mu_analytic"] - row["mu_mc"])
        row["abs_diff"] = diff
        se = row["mc_stderr"]
        row["z_score"] = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    row["flags"] = ";".join(flags)
    return row


def run_sweep(cfg: SweepConfig, workers: int = 1) -> List[Dict[str, Any]]:
    """One row per test point, in grid order regardless of ``workers``."""
    points = cfg.points()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda tp: _row(cfg, tp), points))
    return [_row(cfg, tp) for tp in points]


def regression(rows: Sequence[Dict[str, Any]]) -> bool:
    return any(r["z_score"] is not None and r["z_score"] > Z_ALARM for r in rows)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest string that round-trips
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def format_table(rows: Sequence[Dict[str, Any]], fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps([{k: _json_value(r[k]) for k in COLUMNS} for r in rows], indent=1) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow([_cell(r[k]) for k in COLUMNS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# entry point


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clipmoments", description="Clipped likelihood-ratio moments: analytic vs Monte Carlo.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    comp = sub.add_parser("compute", help="evaluate a sweep config and write a comparison table")
    comp.add_argument("config", help="YAML sweep configuration")
    comp.add_argument("--output", help="output path (overrides output.path; '-' for stdout)")
    comp.add_argument("--method", choices=METHODS)
    comp.add_argument("--seed", type=int)
    comp.add_argument("--samples", type=int)
    comp.add_argument("--workers", type=int, default=1, help="rows evaluated in parallel (output is unaffected)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        cfg = parse_config(text)
        if args.method is not None:
            cfg = replace(cfg, method=args.method)
        if args.seed is not None or args.samples is not None:
            cfg = replace(
                cfg,
                mc=McConfig(
                    seed=cfg.mc.seed if args.seed is None else args.seed,
                    n_samples=cfg.mc.n_samples if args.samples is None else args.samples,
                    antithetic=cfg.mc.antithetic,
                ),
            )
        if args.workers < 1:
            raise ConfigError("--workers: must be at least 1")
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    rows = run_sweep(cfg, workers=args.workers)
    table = format_table(rows, cfg.output.format)
    path = cfg.output.path if args.output is None else args.output
    try:
        if path is None or path == "-":
            sys.stdout.write(table)
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(table)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_REGRESSION if regression(rows) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
