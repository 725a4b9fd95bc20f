"""Command-line entry point: ``ivstrength test|simulate|oracle``.

Exit codes: 0 ran and did not reject, 3 ran and rejected, 1 usage or input
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, DataFormatError, IVStrengthError
from .io import CsvSchema, emit_report, load_csv
from .model import DGPParams, ErrorFamily
from .procedure import Scaling, TestConfig, ThetaSource, run_spec_test
from .simulate import SimConfig, run_jsve_bias_experiment, run_power_experiment, run_size_experiment
from .theory import corollary1_variance, design_asym_params, null_covariance, sigma_blocks_gaussian, theorem1_limits

EXIT_KEEP = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_REJECT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _m_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or an integer, got {text!r}") from None
    if value < 2:
        raise argparse.ArgumentTypeError("m must be at least 2")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _fraction_list(text: str) -> tuple[Fraction, ...]:
    return tuple(Fraction(x) for x in text.split(","))


def _name_list(text: str) -> str | list[str]:
    return text.split(",") if "," in text else text


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivstrength", description="Test many weak against many strong instruments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="run the test on a CSV file")
    t.add_argument("--data", required=True, help="CSV file with a header row")
    t.add_argument("--lambda", dest="lam", type=float, default=0.45, help="deleted fraction (default 0.45)")
    t.add_argument("--m", type=_m_arg, default="auto", help="number of subsets or 'auto' (ceil(n^1.5), capped)")
    t.add_argument("--m-cap", type=int, default=20000, help="cap for --m auto (default 20000)")
    t.add_argument("--level", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--scaling", choices=[s.value for s in Scaling], default=Scaling.SAMPLE_SIZE.value)
    t.add_argument("--theta-source", choices=[s.value for s in ThetaSource], default=ThetaSource.SUBSAMPLE.value)
    t.add_argument("--format", choices=["text", "json"], default="text")
    t.add_argument("--outcome", default="y", help="outcome column (default y)")
    t.add_argument("--endogenous", default="Y", help="column prefix or comma-separated names (default prefix Y)")
    t.add_argument("--instruments", default="Z", help="column prefix or comma-separated names (default prefix Z)")
    t.add_argument("--delimiter", default=",")
    t.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("simulate", help="run a Monte Carlo table")
    s.add_argument("--table", type=int, choices=[1, 2, 3], required=True,
                   help="1: JSVE bias/RMSE, 2: empirical size, 3: empirical power")
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--p", type=_int_list, default=None, help="comma-separated, e.g. 1,2,3")
    s.add_argument("--K", type=_int_list, default=None, help="comma-separated, e.g. 50,100,200")
    s.add_argument("--ratios", type=_fraction_list, default=None,
                   help="K/n as multiples of (1-lambda), e.g. 1/3,1/2,2/3")
    s.add_argument("--rho", type=_float_list, default=None)
    s.add_argument("--errors", default=None, help="comma-separated: gaussian,student-t")
    s.add_argument("--c-n", type=float, default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=0.45)
    s.add_argument("--m", type=_m_arg, default="auto")
    s.add_argument("--m-cap", type=int, default=20000)
    s.add_argument("--scaling", choices=[x.value for x in Scaling], default=Scaling.SAMPLE_SIZE.value)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--format", choices=["text", "json"], default="text")

    o = sub.add_parser("oracle", help="evaluate a closed-form reference value")
    o.add_argument("--check", choices=["corollary1", "theorem1", "sigma-blocks"], required=True)
    o.add_argument("--p", type=int, default=1)
    o.add_argument("--rho", type=float, default=0.9)
    o.add_argument("--alpha", type=float, default=0.5)
    o.add_argument("--c-n", type=float, default=1.0)
    o.add_argument("--sigma-u2", type=float, default=None, help="corollary1 only; defaults to the design")
    o.add_argument("--sigma-vu", type=float, default=None)
    o.add_argument("--sigma-vv2", type=float, default=None)
    return parser


def _run_test(args) -> int:
    schema = CsvSchema(outcome=args.outcome, endogenous=_name_list(args.endogenous),
                       instruments=_name_list(args.instruments), delimiter=args.delimiter)
    data = load_csv(args.data, schema)
    config = TestConfig(lam=args.lam, m=args.m, level=args.level, seed=args.seed,
                        theta_source=args.theta_source, scaling=args.scaling,
                        m_cap=args.m_cap, workers=args.workers)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # warnings are part of the report
        result = run_spec_test(data, config)
    sys.stdout.buffer.write(emit_report(result, args.format))
    return EXIT_REJECT if result.reject else EXIT_KEEP


_TABLE_DEFAULTS = {
    1: dict(p_values=(1,), K_values=(30, 50, 100, 200), rhos=(0.9,)),
    2: dict(p_values=(1, 2, 3), K_values=(50, 100, 200), rhos=(0.9, 0.5),
            error_families=(ErrorFamily.GAUSSIAN, ErrorFamily.STUDENT_T)),
    3: dict(p_values=(1, 2, 3), K_values=(50, 100, 200), rhos=(0.9, 0.5),
            error_families=(ErrorFamily.GAUSSIAN, ErrorFamily.STUDENT_T)),
}


def _run_simulate(args) -> int:
    kw = dict(_TABLE_DEFAULTS[args.table])
    for key, value in (("p_values", args.p), ("K_values", args.K), ("ratios", args.ratios), ("rhos", args.rho)):
        if value is not None:
            kw[key] = value
    if args.errors is not None:
        kw["error_families"] = tuple(ErrorFamily(e) for e in args.errors.split(","))
    config = SimConfig(reps=args.reps, seed=args.seed, lam=args.lam, m=args.m, m_cap=args.m_cap,
                       c_n=args.c_n, scaling=args.scaling, workers=args.workers, **kw)
    run = {1: run_jsve_bias_experiment, 2: run_size_experiment, 3: run_power_experiment}[args.table]
    sys.stdout.buffer.write(emit_report(run(config), args.format))
    return EXIT_KEEP


def _run_oracle(args) -> int:
    params = DGPParams.paper(args.p, args.rho, args.c_n)
    if args.check == "corollary1":
        S = params.Sigma
        if args.p != 1 and None in (args.sigma_u2, args.sigma_vu, args.sigma_vv2):
            raise ConfigurationError("corollary1 is defined for one endogenous regressor; use --p 1")
        su2 = S[0, 0] if args.sigma_u2 is None else args.sigma_u2
        svu = S[1, 0] if args.sigma_vu is None else args.sigma_vu
        svv = S[1, 1] if args.sigma_vv2 is None else args.sigma_vv2
        out = {"check": "corollary1", "alpha": args.alpha, "variance": corollary1_variance(su2, svu, svv, args.alpha)}
    elif args.check == "theorem1":
        tsls, ols = theorem1_limits(design_asym_params(params, args.alpha))
        out = {"check": "theorem1", "alpha": args.alpha, "c_n": args.c_n,
               "tsls_limit": (params.beta + tsls).tolist(), "ols_limit": (params.beta + ols).tolist()}
    else:
        S3, S4 = sigma_blocks_gaussian(params.Sigma, args.alpha)
        out = {"check": "sigma-blocks", "alpha": args.alpha, "Sigma3": S3.tolist(), "Sigma4": S4.tolist(),
               "null_covariance": null_covariance(params.Sigma, args.alpha).tolist()}
    sys.stdout.write(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return EXIT_KEEP


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"test": _run_test, "simulate": _run_simulate, "oracle": _run_oracle}[args.command]
    try:
        return handler(args)
    except (ConfigurationError, DataFormatError, OSError) as exc:
        print(f"ivstrength: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IVStrengthError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"ivstrength: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
