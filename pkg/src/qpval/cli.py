"""Command-line front door.

Exit codes
----------
reproduce : 0 exact match, 1 mismatch, 2 unknown example
price     : 0 success, 1 numeric failure, 2 invalid config
check     : 0 no-arbitrage witness, 3 arbitrage certificate, 4 inconclusive,
            5 financial market admits arbitrage, 2 invalid config
validate  : 0 all |z| within tolerance, 1 some |z| too large or numeric failure,
            2 invalid config or missing capability, 4 underpowered run
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from fractions import Fraction
from typing import Sequence

from . import __version__
from . import affine_engine as ae
from . import arbitrage as arb
from . import config as cfg
from . import constants
from . import finite_space as fs
from . import products as pr
from . import reference
from .montecarlo import NumericError, RngSpec, SimulationContext, intensity_violation_rate
from .stopping_times import CapabilityError
from .validation import oracle_comparisons

SCHEMA_VERSION = 1
CSV_COLUMNS = ("product", "t", "value", "stderr_if_mc", "method")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IFA = 3
EXIT_INCONCLUSIVE = 4
EXIT_MARKET_ARBITRAGE = 5


def _dump(report: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **report}, indent=2, sort_keys=True) + "\n"


def _frac(x: Fraction) -> str:
    return fs.format_fraction(x)


def _resolve_seed(cli_seed: int | None, config: cfg.Config | None) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("QPVAL_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise cfg.SchemaError(f"QPVAL_SEED must be an integer, got {env!r}") from None
    if config is not None and config.seed is not None:
        return config.seed
    return 0


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------


def reproduce_report(example: str) -> tuple[dict, bool]:
    """Recompute the reference example and compare with the stored rationals."""
    if example == "discrete-complete":
        ex = reference.complete_example()
        poly = fs.martingale_measures(ex.market)
        if len(poly.vertices) != 1:
            raise ArithmeticError("complete market should have a unique martingale measure")
        Q = poly.to_measure(poly.vertices[0])
        expected = (constants.COMPLETE_QP, constants.COMPLETE_EX, constants.COMPLETE_EY)
        params = {}
    else:
        ex = reference.discrete_example()
        s = constants.INCOMPLETE_S
        poly = fs.martingale_measures(ex.market)
        masses = (s, 1 - 2 * s, s)
        if not poly.satisfies(masses):
            raise ArithmeticError("family member is not a martingale measure")
        Q = poly.to_measure(masses)
        expected = (constants.INCOMPLETE_QP, constants.INCOMPLETE_EX, constants.INCOMPLETE_EY)
        params = {"s": _frac(s)}
    FT = ex.filtration[ex.filtration.horizon]
    qp = fs.qp_compose(Q, ex.P, FT)
    got = (qp.weights, fs.qp_expect(ex.X, Q, ex.P, FT), fs.qp_expect(ex.Y, Q, ex.P, FT))
    names = ("qp_measure", "E[X]", "E[Y]")
    diff = {}
    for name, g, e in zip(names, got, expected):
        if g != e:
            diff[name] = {"computed": _fmt(g), "expected": _fmt(e)}
    report = {
        "command": "reproduce",
        "example": example,
        "parameters": params,
        "outcomes": list(ex.space.outcomes),
        "qp_measure": _fmt(got[0]),
        "E[X]": _fmt(got[1]),
        "E[Y]": _fmt(got[2]),
        "match": not diff,
    }
    if diff:
        report["diff"] = diff
    return report, not diff


def _fmt(x):
    if isinstance(x, (tuple, list)):
        return [_frac(v) for v in x]
    return _frac(x)


def cmd_reproduce(args) -> int:
    report, ok = reproduce_report(args.example)
    sys.stdout.write(_dump(report))
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# price
# ---------------------------------------------------------------------------


def price_rows(config: cfg.Config, seed: int) -> list[dict]:
    rows = []
    for k, req in enumerate(config.product_requests()):
        spec = req.spec
        if isinstance(spec, cfg.LongevitySpec):
            rows.append(_row(spec.kind, spec.t, spec.value(), None, "mixture", None, None))
            continue
        v = pr.value_product(spec, req.method, req.n, RngSpec(seed, k))
        rows.append(_row(v.product, v.t, v.value, v.stderr, v.method, v.n, v.seed))
    for r in rows:
        if r["value"] != r["value"] or r["value"] in (float("inf"), float("-inf")):
            raise NumericError(f"non-finite value for {r['product']}")
    return rows


def _row(product, t, value, stderr, method, n, seed) -> dict:
    return {
        "product": product,
        "t": int(t),
        "value": float(value),
        "stderr_if_mc": None if stderr is None else float(stderr),
        "method": method,
        "n": n,
        "seed": seed,
    }


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([
            r["product"], r["t"], repr(r["value"]),
            "" if r["stderr_if_mc"] is None else repr(r["stderr_if_mc"]), r["method"],
        ])
    return buf.getvalue()


def cmd_price(args) -> int:
    config = cfg.load(args.config)
    seed = _resolve_seed(args.seed, config)
    rows = price_rows(config, seed)
    fmt = args.format or ("csv" if args.output and args.output.endswith(".csv") else "json")
    text = rows_to_csv(rows) if fmt == "csv" else _dump({"command": "price", "results": rows})
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def _rv_by_block(X: fs.FiniteRV, part: fs.FinitePartition) -> list:
    return [
        {"block": [X.space.outcomes[i] for i in block], "value": _frac(X.values[block[0]])}
        for block in part.blocks
    ]


def certificate_dict(cert: arb.ArbitrageCertificate, market: arb.InsuranceMarket) -> dict:
    F = market.financial.filtration
    space = market.financial.space
    strategy = []
    for offset, holding in enumerate(cert.hedge.strategy):
        s = cert.t + offset
        strategy.append({
            "time": s,
            "holdings": [_rv_by_block(xi, F[s]) for xi in holding],
        })
    return {
        "t": cert.t,
        "trigger_blocks": [[space.outcomes[i] for i in F[cert.t].blocks[k]] for k in cert.trigger_blocks],
        "trigger_probability": _frac(cert.trigger_probability),
        "premium_floor": _rv_by_block(cert.premium_floor, F[cert.t]),
        "hedge_price": _rv_by_block(cert.hedge_price, F[cert.t]),
        "strategy": strategy,
        "allocation": "uniform 1/n over n seekers on the trigger blocks",
    }


def check_report(config: cfg.Config) -> tuple[dict, int]:
    market = config.insurance_market()
    try:
        result = arb.check_market(market)
    except fs.MarketArbitrageError as exc:
        return {"command": "check", "verdict": "market_arbitrage", "message": str(exc)}, EXIT_MARKET_ARBITRAGE
    report = {
        "command": "check",
        "verdict": result.verdict,
        "candidates_tried": result.nifa.candidates_tried,
        "best_slack": {str(t): _frac(v) for t, v in result.nifa.slack.items()},
    }
    if result.verdict == "nifa":
        Q = result.nifa.measure
        report["witness"] = {o: _frac(w) for o, w in zip(Q.space.outcomes, Q.weights)}
        return report, EXIT_OK
    if result.verdict == "ifa":
        report["certificate"] = certificate_dict(result.certificate, market)
        return report, EXIT_IFA
    return report, EXIT_INCONCLUSIVE


def cmd_check(args) -> int:
    report, code = check_report(cfg.load(args.config))
    sys.stdout.write(_dump(report))
    return code


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def validate_report(config: cfg.Config, n: int | None, seed: int) -> tuple[dict, int]:
    bundle = config.model_bundle()
    val = config.validation
    tol = config.tolerances
    n = val["n"] if n is None else n
    if n < 2:
        raise cfg.SchemaError("need at least two paths")
    comps = oracle_comparisons(
        bundle.model, bundle.stock, bundle.intensity, bundle.intensity2,
        n, seed, val["T"], val["s"], val["antithetic"],
    )
    violations = {
        name: intensity_violation_rate(SimulationContext(bundle.model, bundle.stock, it), min(n, 20_000),
                                       val["T"], RngSpec(seed, 100 + k))
        for k, (name, it) in enumerate((("intensity", bundle.intensity), ("intensity2", bundle.intensity2)))
    }
    z_max = tol["z_max"]
    passed = all(abs(c.z) <= z_max for c in comps)
    underpowered = n < tol["min_validation_n"]
    warnings = []
    if underpowered:
        warnings.append(f"underpowered: n={n} is below the minimum {tol['min_validation_n']}")
    for name, rate in violations.items():
        if rate > tol["violation_rate"]:
            warnings.append(f"{name}: negative increments on {rate:.3g} of simulated steps")
    report = {
        "command": "validate",
        "n": n,
        "seed": seed,
        "T": val["T"],
        "s": val["s"],
        "z_max": z_max,
        "comparisons": [c.to_dict() for c in comps],
        "intensity_violation_rate": violations,
        "passed": passed and not underpowered,
        "warnings": warnings,
    }
    if underpowered:
        return report, EXIT_INCONCLUSIVE
    return report, EXIT_OK if passed else EXIT_FAIL


def cmd_validate(args) -> int:
    config = cfg.load(args.config)
    report, code = validate_report(config, args.n, _resolve_seed(args.seed, config))
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    sys.stdout.write(_dump(report))
    return code


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpval", description="Valuation of hybrid insurance-finance contracts.")
    parser.add_argument("--version", action="version", version=f"qpval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reproduce", help="recompute the six-state reference example")
    p.add_argument("example", choices=("discrete-complete", "discrete-incomplete"))
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("price", help="value the products in a config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("check", help="search for no-arbitrage witnesses or arbitrage certificates")
    p.add_argument("-c", "--config", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("validate", help="compare closed forms with simulation")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (cfg.SchemaError, ae.ConfigError, fs.StructuralError, fs.MeasurabilityError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, fs.FiniteSpaceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
