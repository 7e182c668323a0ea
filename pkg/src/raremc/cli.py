"""Command-line front end.

Exit codes: 0 success, 2 configuration or domain error, 3 numerical non-convergence.
Results go to stdout (or ``--out``); diagnostics go to stderr as one line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from typing import Any

import numpy as np

from .chain import TANDEM_CONVENTIONS, build_tandem, build_two_state, chain_from_dict
from .errors import DomainError, NoConvergence, RareMCError
from .estimators import estimate, make_policy
from .largedev import DEFAULT_ALPHA_MAX, FeedbackController, TiltFamily, legendre_with
from .oracle import decay_rates, exact_probability, exact_result
from .target import TargetSet

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

PRESETS = ("two-state", "tandem")
SCHEMES = ("naive", "static", "adaptive")
TWO_STATE_DEFAULTS = {"p": 0.5, "a": 1 / 6, "b": 0.5}
TANDEM_DEFAULTS = {"lambda": 0.2, "mu1": 0.4, "mu2": 0.4, "B1": 6, "B2": 6,
                   "eps1": 0.3, "eps2": 0.4, "convention": "uniformized"}
# flag destination -> config key
OVERRIDABLE = {
    "preset": "preset", "p": "p", "a": "a", "b": "b", "lam": "lambda", "mu1": "mu1",
    "mu2": "mu2", "B1": "B1", "B2": "B2", "eps1": "eps1", "eps2": "eps2",
    "convention": "convention", "n": "n", "scheme": "scheme", "samples": "samples",
    "seed": "seed", "alpha_max": "alpha_max", "format": "format", "out": "out",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise DomainError(message)


@dataclass
class RunConfig:
    chain: Any
    g: Any
    target: TargetSet
    n: int | None
    scheme: str | None
    samples: int | None
    seed: int
    alpha_max: float
    fmt: str
    out: str | None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file; flags override its fields")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--p", type=float, help="two-state: P(+1 -> +1)")
    p.add_argument("--a", type=float, help="two-state: lower threshold")
    p.add_argument("--b", type=float, help="two-state: upper threshold")
    p.add_argument("--lambda", dest="lam", type=float, help="tandem: arrival rate")
    p.add_argument("--mu1", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--B1", type=int)
    p.add_argument("--B2", type=int)
    p.add_argument("--eps1", type=float)
    p.add_argument("--eps2", type=float)
    p.add_argument("--convention", choices=TANDEM_CONVENTIONS,
                   help="tandem: uniformized chain with self-loops (default) or jump chain")
    p.add_argument("--n", type=int, help="horizon")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--samples", type=int, help="replications K")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha-max", dest="alpha_max", type=float,
                   help=f"tilt box half-width (default {DEFAULT_ALPHA_MAX:g})")
    p.add_argument("--out", metavar="PATH", help="write the result here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raremc", description="Rare-event probabilities for Markov additive processes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("simulate", help="Monte Carlo estimate under a scheme"))
    _common(sub.add_parser("exact", help="exact probability and, with --scheme, policy moments"))
    rate = sub.add_parser("rate", help="rate function value or decay rates of the target")
    _common(rate)
    rate.add_argument("--beta", help="point at which to evaluate L, comma separated")
    rate.add_argument("--target", action="store_true", help="report naive/optimal/static decay rates")
    rep = sub.add_parser("reproduce", help="regenerate one of the reference tables as CSV")
    rep.add_argument("--table", type=int, required=True)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", metavar="PATH")
    return parser


# ---------------------------------------------------------------------------
# Config


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DomainError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DomainError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DomainError("config must be a JSON object")
    return doc


def merge_config(file_doc: dict, args: argparse.Namespace) -> dict:
    """Config file fields overridden by any flag that was given."""
    doc = dict(file_doc)
    for dest, key in OVERRIDABLE.items():
        value = getattr(args, dest, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "preset", None) is not None:
        doc.pop("chain", None)
    return doc


def _num(doc: dict, key: str, kind=float):
    try:
        return kind(doc[key])
    except (TypeError, ValueError) as exc:
        raise DomainError(f"field {key!r} must be a {kind.__name__}") from exc


def resolve(doc: dict) -> RunConfig:
    has_chain, preset = "chain" in doc, doc.get("preset")
    if has_chain == (preset is not None):
        raise DomainError("give exactly one of an inline chain or a preset")
    if preset == "two-state":
        vals = {**TWO_STATE_DEFAULTS, **{k: doc[k] for k in TWO_STATE_DEFAULTS if k in doc}}
        chain, g = build_two_state(_num(vals, "p"))
        target = TargetSet.two_sided(_num(vals, "a"), _num(vals, "b"))
    elif preset == "tandem":
        vals = {**TANDEM_DEFAULTS, **{k: doc[k] for k in TANDEM_DEFAULTS if k in doc}}
        chain, g, target = build_tandem(
            _num(vals, "lambda"), _num(vals, "mu1"), _num(vals, "mu2"), _num(vals, "B1", int),
            _num(vals, "B2", int), _num(vals, "eps1"), _num(vals, "eps2"), str(vals["convention"]))
    elif preset is None:
        chain, g = chain_from_dict(doc["chain"])
        if "target" not in doc:
            raise DomainError("an inline chain needs a target")
        target = TargetSet.from_dict(doc["target"])
    else:
        raise DomainError(f"unknown preset {preset!r}")
    if "target" in doc and preset is not None:
        target = TargetSet.from_dict(doc["target"])

    n = _num(doc, "n", int) if doc.get("n") is not None else None
    if n is not None and n < 1:
        raise DomainError("n must be at least 1")
    scheme = doc.get("scheme")
    if scheme is not None and scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    samples = _num(doc, "samples", int) if doc.get("samples") is not None else None
    fmt = doc.get("format", "json")
    if fmt not in ("json", "csv"):
        raise DomainError(f"unknown format {fmt!r}")
    alpha_max = _num(doc, "alpha_max") if doc.get("alpha_max") is not None else DEFAULT_ALPHA_MAX
    if not alpha_max > 0:
        raise DomainError("alpha-max must be positive")
    seed = _num(doc, "seed", int) if doc.get("seed") is not None else 0
    return RunConfig(chain, g, target, n, scheme, samples, seed, alpha_max, fmt, doc.get("out"))


# ---------------------------------------------------------------------------
# Commands


def _require_n(cfg: RunConfig) -> int:
    if cfg.n is None:
        raise DomainError("missing --n")
    return cfg.n


def cmd_simulate(cfg: RunConfig) -> str:
    n = _require_n(cfg)
    if cfg.samples is None:
        raise DomainError("missing --samples")
    if cfg.samples < 2:
        raise DomainError("--samples must be at least 2")
    scheme = cfg.scheme or "adaptive"
    fam = TiltFamily(cfg.chain, cfg.g)
    policy = make_policy(scheme, fam, cfg.target, cfg.alpha_max)
    res = estimate(cfg.chain, cfg.g, cfg.target, policy, n, cfg.samples, cfg.seed, fam=fam)
    return res.to_csv() if cfg.fmt == "csv" else res.to_json() + "\n"


def cmd_exact(cfg: RunConfig) -> str:
    n = _require_n(cfg)
    fam = TiltFamily(cfg.chain, cfg.g)
    policy = make_policy(cfg.scheme, fam, cfg.target, cfg.alpha_max) if cfg.scheme else None
    res = exact_result(cfg.chain, cfg.g, cfg.target, n, policy, fam=fam)
    return res.to_csv() if cfg.fmt == "csv" else res.to_json() + "\n"


def _parse_beta(text: str, d: int) -> np.ndarray:
    try:
        beta = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise DomainError(f"cannot parse --beta {text!r}") from exc
    if beta.size != d:
        raise DomainError(f"--beta needs {d} component(s), got {beta.size}")
    return beta


def _csv(header: list[str], row: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerow(row)
    return buf.getvalue()


def cmd_rate(cfg: RunConfig, beta: str | None = None, target: bool = False) -> str:
    fam = TiltFamily(cfg.chain, cfg.g)
    d = fam.d
    if beta is not None and not target:
        b = _parse_beta(beta, d)
        res = legendre_with(fam, b, cfg.alpha_max)
        doc = {"beta": b.tolist(), "L": res.L, "alpha": np.asarray(res.alpha).tolist(),
               "clamped": bool(res.clamped)}
        if cfg.fmt == "csv":
            return _csv([f"beta_{i + 1}" for i in range(d)] + ["L"]
                        + [f"alpha_{i + 1}" for i in range(d)] + ["clamped"],
                        [repr(v) for v in doc["beta"]] + [repr(doc["L"])]
                        + [repr(v) for v in doc["alpha"]] + [str(doc["clamped"]).lower()])
        return json.dumps(doc) + "\n"
    rates = decay_rates(cfg.chain, cfg.g, cfg.target, cfg.alpha_max, fam)
    opt = FeedbackController(fam, cfg.target, cfg.alpha_max).rate()
    doc = {"naive": rates.naive, "optimal": rates.optimal, "static": rates.static,
           "minimizer": opt.beta.tolist(), "alpha_star": opt.alpha.tolist(),
           "static_beta": rates.static_beta.tolist(), "static_index": rates.static_index,
           "clamped": bool(opt.clamped)}
    if cfg.fmt == "csv":
        return _csv(["naive", "optimal", "static"] + [f"minimizer_{i + 1}" for i in range(d)]
                    + [f"static_beta_{i + 1}" for i in range(d)] + ["static_index"],
                    [repr(doc["naive"]), repr(doc["optimal"]), repr(doc["static"])]
                    + [repr(v) for v in doc["minimizer"]] + [repr(v) for v in doc["static_beta"]]
                    + [doc["static_index"]])
    return json.dumps(doc) + "\n"


# ---------------------------------------------------------------------------
# Reference tables


@dataclass(frozen=True)
class TableSpec:
    model: str          # "two-state" or "tandem"
    params: tuple
    scheme: str
    horizons: tuple[int, ...]
    runs: int           # >1: repeated runs at one horizon with seeds seed, seed+1, ...
    percent: bool = False
    ratio: bool = False


REFERENCE_K = 10_000
_TWO = ("two-state", (0.5, 1 / 6, 0.5))
_TANDEM_A = ("tandem", (0.2, 0.4, 0.4, 6, 6, 0.3, 0.4))
_TANDEM_B = ("tandem", (0.1, 0.4, 0.5, 6, 6, 0.3, 0.4))
TABLES = {
    1: TableSpec(*_TWO, "naive", (60,), 4, percent=True),
    2: TableSpec(*_TWO, "static", (60,), 4, percent=True),
    3: TableSpec(*_TWO, "adaptive", (60,), 4, percent=True),
    4: TableSpec(*_TWO, "naive", (120, 180, 240), 1),
    5: TableSpec(*_TWO, "static", (120, 180, 240), 1),
    6: TableSpec(*_TWO, "adaptive", (120, 180, 240), 1, ratio=True),
    7: TableSpec(*_TANDEM_A, "static", (50,), 4),
    8: TableSpec(*_TANDEM_A, "adaptive", (50,), 4),
    9: TableSpec(*_TANDEM_B, "static", (50, 80, 110), 1),
    10: TableSpec(*_TANDEM_B, "adaptive", (50, 80, 110), 1, ratio=True),
}


def _table_model(spec: TableSpec):
    if spec.model == "two-state":
        p, a, b = spec.params
        chain, g = build_two_state(p)
        return chain, g, TargetSet.two_sided(a, b)
    # the jump-chain convention is the one that reproduces the reference values
    return build_tandem(*spec.params, convention="jump")


def cmd_reproduce(table: int, seed: int = 0, K: int = REFERENCE_K) -> str:
    """CSV with one column per run or horizon and one row per reported quantity."""
    spec = TABLES.get(table)
    if spec is None:
        raise DomainError(f"unknown table {table}; choose from 1-{len(TABLES)}")
    chain, g, A = _table_model(spec)
    fam = TiltFamily(chain, g)
    policy = make_policy(spec.scheme, fam, A).bind(fam, A)
    if spec.runs > 1:
        cols = [(f"run_{r + 1}", spec.horizons[0], seed + r) for r in range(spec.runs)]
    else:
        cols = [(f"n_{n}", n, seed) for n in spec.horizons]
    exact = {n: exact_probability(chain, g, A, n) for n in spec.horizons}
    results = [estimate(chain, g, A, policy, n, K, s, fam=fam) for _, n, s in cols]

    def fmt(v):
        if v is None:
            return "NA"
        return f"{100 * v:.2f}" if spec.percent else repr(float(v))

    unit = "_pct" if spec.percent else ""
    rows = [
        [f"theoretical_p_n{unit}"] + [fmt(exact[n]) for _, n, _ in cols],
        [f"estimate{unit}"] + [fmt(r.p_hat) for r in results],
        [f"std_err{unit}"] + [fmt(r.std_err if r.p_hat > 0 else None) for r in results],
        [f"ci_lo{unit}"] + [fmt(r.ci95[0] if r.p_hat > 0 else None) for r in results],
        [f"ci_hi{unit}"] + [fmt(r.ci95[1] if r.p_hat > 0 else None) for r in results],
    ]
    if spec.ratio:
        rows.append(["ratio"] + ["NA" if r.ratio is None else f"{r.ratio:.4f}" for r in results])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity"] + [c[0] for c in cols])
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Entry point


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DomainError(f"cannot write {out}: {exc.strerror}") from exc


def run(argv: list[str] | None = None) -> tuple[str, str | None]:
    """Parse ``argv`` and run the command; returns the document and its ``--out`` path."""
    args = build_parser().parse_args(argv)
    if args.command == "reproduce":
        return cmd_reproduce(args.table, args.seed), args.out
    cfg = resolve(merge_config(_read_config(args.config), args))
    if args.command == "simulate":
        return cmd_simulate(cfg), cfg.out
    if args.command == "exact":
        return cmd_exact(cfg), cfg.out
    return cmd_rate(cfg, args.beta, args.target), cfg.out


def main(argv: list[str] | None = None) -> int:
    try:
        text, out = run(argv)
        _emit(text, out)
    except NoConvergence as exc:
        print(f"raremc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RareMCError as exc:
        print(f"raremc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
