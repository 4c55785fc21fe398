"""Command line front end.

Every subcommand reads a JSON system descriptor and writes data (CSV or
JSON) to stdout or --out; diagnostics always go to stderr.  Exit codes:
0 success, 1 verification gate failed, 2 invalid system, 3 unparseable
input, 4 critical (unsolvable) construction, 5 stability required but not
verified, 6 size or horizon cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager

import numpy as np

from . import jump_analysis, lyapunov_build, oracle_verify, rational_approx
from .errors import (
    CriticalSystem,
    DelayLyapError,
    HorizonTooLarge,
    NotStable,
    OutOfDomain,
    ParseError,
    SizeExceeded,
)
from .fundamental import (
    fundamental_matrix,
    simulate,
    simulate_cauchy,
    step_to_csv,
    trajectory_to_csv,
)
from .system_model import (
    InitialFunction,
    ValidatedSystem,
    WeightMatrix,
    load_system,
    stability_check,
    to_commensurate,
    validate,
)

DEFAULT_TOL = 1e-8
DEFAULT_SAMPLES = 201


def _diag(msg: str) -> None:
    print(msg, file=sys.stderr)


@contextmanager
def _out_stream(path: str | None):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh
    else:
        yield sys.stdout


def _dump_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    with _out_stream(path) as fh:
        fh.write(text + "\n")


def _load_validated(path: str) -> ValidatedSystem:
    try:
        return validate(load_system(path))
    except OSError as exc:
        raise ParseError(f"cannot read system descriptor {path}: {exc}") from exc


def _load_weight(source: str | None, n: int) -> WeightMatrix:
    if source is None or source == "identity":
        return WeightMatrix.identity(n)
    try:
        with open(source, "r", encoding="utf-8") as fh:
            data = json.load(fh, parse_constant=lambda s: (_ for _ in ()).throw(
                ParseError(f"non-finite number {s!r} in weight file")
            ))
    except OSError as exc:
        raise ParseError(f"cannot read weight file {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in weight file {source}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("W")
    try:
        mat = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"weight file {source} does not hold a matrix") from exc
    if mat.shape != (n, n):
        raise ParseError(f"weight must be {n}x{n}, got {mat.shape}")
    try:
        return WeightMatrix(mat)
    except DelayLyapError as exc:
        raise ParseError(str(exc)) from exc


def _load_phi(source: str | None, n: int) -> InitialFunction:
    if source is None:
        return InitialFunction.constant(np.ones(n))
    try:
        with open(source, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read initial function file {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in initial function file {source}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("initial function file must hold a JSON object")
    if "constant" in data:
        vec = np.array(data["constant"], dtype=float)
        if vec.shape != (n,):
            raise ParseError(f"constant initial value must have length {n}")
        return InitialFunction.constant(vec)
    if "segments" in data:
        segs = data["segments"]
        try:
            starts = [float(s["start"]) for s in segs]
            values = [np.array(s["value"], dtype=float) for s in segs]
            slopes = [
                np.array(s.get("slope", [0.0] * n), dtype=float) for s in segs
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed initial function segments: {exc}") from exc
        try:
            return InitialFunction(starts, values, slopes)
        except DelayLyapError as exc:
            raise ParseError(str(exc)) from exc
    raise ParseError("initial function file needs 'constant' or 'segments'")


def _build_u(vsys: ValidatedSystem, weight: WeightMatrix, order: int | None):
    """Route to the right construction.  Returns (U, system whose delays
    the function answers to), which differ only for approximated delays."""
    if len(vsys.entries) == 1:
        return lyapunov_build.build_single_delay(vsys, weight), vsys
    if vsys.is_rational:
        form = to_commensurate(vsys)
        return lyapunov_build.build_commensurate(form, weight), vsys
    if order is None:
        raise ParseError(
            "system has non-commensurate float delays; pass --order to "
            "approximate them by continued fraction convergents"
        )
    form = rational_approx.approximate_system(vsys, order)
    return lyapunov_build.build_commensurate(form, weight), form.to_system()


def _sample_grid(u, samples: int) -> np.ndarray:
    hz = u.horizon
    return np.unique(np.concatenate([u.knots(), np.linspace(-hz, hz, samples)]))


def cmd_check(args) -> int:
    try:
        vsys = _load_validated(args.config)
    except ParseError:
        raise
    except DelayLyapError as exc:
        _diag(f"invalid system: {exc}")
        return 2
    report = stability_check(vsys)
    payload = {
        "n": vsys.n,
        "delays": [float(d) for d in vsys.delays],
        "rational_delays": vsys.is_rational,
        "h_max": vsys.h_max,
        "valid": True,
        "stability": report.to_dict(),
    }
    _dump_json(payload, args.out)
    return 0


def cmd_k(args) -> int:
    vsys = _load_validated(args.config)
    horizon = args.horizon if args.horizon is not None else 5.0 * vsys.h_max
    kfun = fundamental_matrix(vsys, horizon, side=args.side)
    with _out_stream(args.out) as fh:
        step_to_csv(kfun, fh)
    _diag(f"{len(kfun.breakpoints)} breakpoints on [0, {horizon}]")
    return 0


def cmd_sim(args) -> int:
    vsys = _load_validated(args.config)
    horizon = args.horizon if args.horizon is not None else 5.0 * vsys.h_max
    samples = args.samples if args.samples is not None else DEFAULT_SAMPLES
    phi = _load_phi(args.phi, vsys.n)
    grid = np.linspace(0.0, horizon, samples)
    if args.method in ("recursive", "both"):
        states = simulate(vsys, phi, grid)
    else:
        states = simulate_cauchy(vsys, phi, grid)
    if args.method == "both":
        other = simulate_cauchy(vsys, phi, grid)
        gap = float(np.max(np.abs(states - other)))
        _diag(f"max gap between recursive and jump-convolution responses: {gap:.3e}")
    with _out_stream(args.out) as fh:
        trajectory_to_csv(grid, states, fh)
    return 0


def cmd_lyap(args) -> int:
    vsys = _load_validated(args.config)
    weight = _load_weight(args.weight, vsys.n)
    u, rsys = _build_u(vsys, weight, args.order)
    samples = args.samples if args.samples is not None else DEFAULT_SAMPLES
    grid = _sample_grid(u, samples)
    with _out_stream(args.out) as fh:
        lyapunov_build.piecewise_to_csv(u, grid, fh)
    report = lyapunov_build.residuals(u, rsys, weight)
    if args.out:
        _dump_json(report.to_dict(), f"{args.out}.residuals.json")
        _diag(f"wrote {args.out}.residuals.json")
    else:
        _diag(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_jumps(args) -> int:
    vsys = _load_validated(args.config)
    weight = _load_weight(args.weight, vsys.n)
    u, rsys = _build_u(vsys, weight, args.order)
    spectrum = jump_analysis.jumps_from_segments(u)
    if not args.segments_only:
        report = stability_check(rsys)
        props = jump_analysis.check_jump_properties(rsys, weight, report=report)
        deviation = 0.0
        for tau in spectrum.taus:
            series = jump_analysis.delta_u_prime(
                rsys, weight, float(tau), props.horizon, report=report
            )
            dev = float(np.max(np.abs(series.value - spectrum.jump_at(float(tau)))))
            deviation = max(deviation, dev)
        summary = props.to_dict()
        summary["route_deviation_max"] = deviation
        _diag(json.dumps(summary, sort_keys=True))
    with _out_stream(args.out) as fh:
        spectrum.to_csv(fh)
    return 0


def cmd_approx(args) -> int:
    vsys = _load_validated(args.config)
    weight = _load_weight(args.weight, vsys.n)
    try:
        orders = [int(tok) for tok in args.orders.split(",") if tok.strip()]
    except ValueError as exc:
        raise ParseError(f"cannot parse --orders {args.orders!r}: {exc}") from exc
    if not orders:
        raise ParseError("--orders must name at least one order")
    samples = args.samples if args.samples is not None else DEFAULT_SAMPLES
    steps = rational_approx.u_sequence(vsys, weight, orders, grid_points=samples)
    verdicts = {s.stability_verdict for s in steps}
    summary = {
        "orders": orders,
        "steps": [s.to_dict() for s in steps],
        "verdicts_agree": len(verdicts) == 1,
    }
    if args.out:
        for step in steps:
            path = f"{args.out}_s{step.order}.csv"
            grid = _sample_grid(step.u, samples)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                lyapunov_build.piecewise_to_csv(step.u, grid, fh)
            _diag(f"order {step.order}: wrote {path}")
        _dump_json(summary, f"{args.out}_convergence.json")
        _diag(f"wrote {args.out}_convergence.json")
    else:
        _dump_json(summary, None)
    return 0


def cmd_verify(args) -> int:
    vsys = _load_validated(args.config)
    weight = _load_weight(args.weight, vsys.n)
    tol = args.tol
    u, rsys = _build_u(vsys, weight, args.order)
    res = lyapunov_build.residuals(u, rsys, weight)
    gates = {"residuals": res.passed(tol)}
    payload = {"residuals": res.to_dict(), "tolerance": tol}
    report = stability_check(rsys)
    payload["stability"] = report.to_dict()
    if report.stable:
        cross = oracle_verify.cross_check(u, rsys, weight, slack=tol, report=report)
        gates["integral_cross_check"] = cross.passed
        payload["integral_cross_check"] = cross.to_dict()
        p_alg = lyapunov_build.p_matrix(rsys, weight)
        p_int = oracle_verify.p_integral_oracle(rsys, weight, report=report)
        p_err = float(np.max(np.abs(p_alg - p_int.value)))
        gates["p_matrix_oracle"] = p_err <= p_int.tail_bound + tol
        payload["p_matrix_oracle"] = {
            "error": p_err,
            "tail_bound": p_int.tail_bound,
            "horizon": p_int.horizon,
        }
    else:
        payload["integral_cross_check"] = (
            "skipped: stability not verified, residual gates only"
        )
    payload["gates"] = gates
    payload["passed"] = all(gates.values())
    _dump_json(payload, args.out)
    return 0 if payload["passed"] else 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON system descriptor")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="verification tolerance")
    p.add_argument("--horizon", type=float, help="time horizon")
    p.add_argument("--order", type=int, help="continued fraction order for float delays")
    p.add_argument("--samples", type=int, help="number of grid samples")
    p.add_argument(
        "--w",
        "--weight",
        dest="weight",
        default="identity",
        help="'identity' or path to a JSON symmetric matrix",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delaylyap",
        description="Delay Lyapunov matrices of linear delay difference equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a system and report stability")
    _add_common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("k", help="evaluate the fundamental matrix to CSV")
    _add_common(p)
    p.add_argument("--side", choices=("right", "left"), default="right")
    p.set_defaults(func=cmd_k)

    p = sub.add_parser("sim", help="simulate the time response to CSV")
    _add_common(p)
    p.add_argument(
        "--method", choices=("recursive", "cauchy", "both"), default="recursive"
    )
    p.add_argument("--phi", help="JSON initial function (default: constant ones)")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("lyap", help="construct the Lyapunov matrix to CSV")
    _add_common(p)
    p.set_defaults(func=cmd_lyap)

    p = sub.add_parser("jumps", help="jump spectrum of the derivative of U")
    _add_common(p)
    p.add_argument(
        "--segments-only",
        action="store_true",
        help="skip the series route (works for unstable systems)",
    )
    p.set_defaults(func=cmd_jumps)

    p = sub.add_parser("approx", help="continued fraction order ladder")
    _add_common(p)
    p.add_argument("--orders", required=True, help="comma separated orders, e.g. 1,4,7")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("verify", help="run all verification gates")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        _diag(f"parse error: {exc}")
        return 3
    except CriticalSystem as exc:
        _diag(f"critical system: {exc}")
        return 4
    except NotStable as exc:
        _diag(f"stability required: {exc}")
        return 5
    except (SizeExceeded, HorizonTooLarge) as exc:
        _diag(f"size cap: {exc}")
        return 6
    except OutOfDomain as exc:
        _diag(f"out of domain: {exc}")
        return 2
    except DelayLyapError as exc:
        _diag(f"invalid input: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
