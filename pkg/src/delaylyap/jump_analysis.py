"""Jump discontinuities of the derivative of the Lyapunov matrix.

U is continuous but its derivative jumps wherever the fundamental matrix
jumps.  For a stable system the jump at shift tau is the convergent series

    dU'(tau) = - sum_q dK(t_q)^T W dK(t_q + tau)

over the semigroup lattice, and the derivative itself is
U'(tau) = sum_q (K(t_q - tau) - K0)^T W dK(t_q).  Both series are
truncated with explicit geometric tail bounds.  The same jumps can be read
directly off the segment slopes of a built U with no truncation at all,
which makes the two routes independently checkable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NotStable
from .fundamental import JumpTable, delta_k, fundamental_matrix
from .lyapunov_build import PiecewiseAffineMatrixFunction
from .system_model import (
    StabilityReport,
    ValidatedSystem,
    WeightMatrix,
    k0,
    stability_check,
)

SERIES_TARGET = 1e-12
SPECTRUM_DROP_TOL = 1e-14


class TruncatedSeries(NamedTuple):
    value: np.ndarray
    tail_bound: float
    horizon: float


@dataclass(frozen=True)
class JumpSpectrum:
    """Jumps of U' at their shifts.  truncation_horizon is None when the
    spectrum was read exactly from segment slopes; otherwise tail_bound
    carries the worst series truncation bound."""

    taus: np.ndarray
    jumps: np.ndarray
    method: str
    truncation_horizon: float | None
    tail_bound: float

    @property
    def n(self) -> int:
        return self.jumps.shape[1]

    def jump_at(self, tau: float, tol: float = 1e-9) -> np.ndarray | None:
        idx = np.nonzero(np.abs(self.taus - tau) <= tol)[0]
        return self.jumps[idx[0]] if idx.size else None

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh)
        names = [f"dU{i + 1}{j + 1}" for i in range(self.n) for j in range(self.n)]
        writer.writerow(["tau"] + names + ["bound"])
        for t, v in zip(self.taus, self.jumps):
            writer.writerow(
                [repr(float(t))]
                + [repr(float(x)) for x in v.ravel()]
                + [repr(float(self.tail_bound))]
            )


@dataclass(frozen=True)
class JumpPropertyReport:
    """Worst residuals of the defining identities of dU' on a shift grid,
    all from the truncated series route."""

    symmetry: float
    dynamic: float
    algebraic: float
    nsd_max_eigenvalue: float
    tail_bound: float
    horizon: float
    grid_points: int

    def max_residual(self) -> float:
        return max(self.symmetry, self.dynamic, self.algebraic)

    def to_dict(self) -> dict:
        return {
            "symmetry": self.symmetry,
            "dynamic": self.dynamic,
            "algebraic": self.algebraic,
            "nsd_max_eigenvalue": self.nsd_max_eigenvalue,
            "tail_bound": self.tail_bound,
            "horizon": self.horizon,
            "grid_points": self.grid_points,
            "max_residual": self.max_residual(),
        }


def _require_stable(vsys: ValidatedSystem, report: StabilityReport | None) -> StabilityReport:
    if report is None:
        report = stability_check(vsys)
    if not report.stable:
        raise NotStable(
            f"jump series need a verified stable system, got verdict "
            f"{report.verdict!r} (method {report.method}, radius "
            f"{report.spectral_radius:.6g})"
        )
    if report.decay_gain is None or report.decay_rate is None:
        report = stability_check(vsys)
    return report


def default_series_horizon(
    vsys: ValidatedSystem, report: StabilityReport, target: float = SERIES_TARGET
) -> float:
    rho = report.spectral_radius
    t = report.rate_step * math.log(target) / math.log(rho)
    return max(t, 3.0 * vsys.h_max)


def _delta_series_tail(report: StabilityReport, w2: float, k0n: float, tau: float, horizon: float, gap: float) -> float:
    gamma, sigma = report.decay_gain, report.decay_rate
    denom = 1.0 - math.exp(-2.0 * sigma * gap)
    return (
        4.0
        * gamma**2
        * k0n**2
        * w2
        * math.exp(-sigma * tau)
        * math.exp(-2.0 * sigma * horizon)
        / denom
    )


def delta_u_prime(
    vsys: ValidatedSystem,
    weight: WeightMatrix,
    tau: float,
    horizon: float | None = None,
    *,
    report: StabilityReport | None = None,
    table: JumpTable | None = None,
) -> TruncatedSeries:
    """Jump of U' at shift tau by the truncated series with its tail
    bound.  Off-lattice shifts give an exact zero (the series has no
    aligned terms).  For non-commensurate systems the reported bound uses
    the smallest gap seen on the generated lattice, which is a heuristic
    because deeper lattice gaps can shrink further."""
    report = _require_stable(vsys, report)
    tau = float(tau)
    if horizon is None:
        horizon = max(default_series_horizon(vsys, report), abs(tau) + vsys.h_min)
    if table is None or table.horizon < horizon + max(tau, 0.0):
        table = delta_k(vsys, horizon + max(tau, 0.0) + vsys.h_min, drop_tol=0.0)
    w = weight.matrix
    n = vsys.n
    acc = np.zeros((n, n))
    for tq, dk in table.pairs():
        if tq > horizon + table.tol:
            break
        other = table.jump_at(tq + tau)
        if other is not None:
            acc -= dk.T @ w @ other
    base_norm = float(np.linalg.norm(k0(vsys), 2))
    tail = _delta_series_tail(
        report,
        float(np.linalg.norm(w, 2)),
        base_norm,
        tau,
        horizon,
        table.min_gap(),
    )
    return TruncatedSeries(value=acc, tail_bound=tail, horizon=float(horizon))


def u_prime_series(
    vsys: ValidatedSystem,
    weight: WeightMatrix,
    tau: float,
    horizon: float | None = None,
    *,
    report: StabilityReport | None = None,
) -> TruncatedSeries:
    """Derivative of U at an off-knot shift tau by the truncated series,
    with its tail bound.  Requires horizon >= |tau|."""
    report = _require_stable(vsys, report)
    tau = float(tau)
    if horizon is None:
        horizon = max(default_series_horizon(vsys, report), abs(tau) + vsys.h_min)
    table = delta_k(vsys, horizon + vsys.h_min, drop_tol=0.0)
    kfun = fundamental_matrix(vsys, horizon + max(-tau, 0.0) + vsys.h_min)
    base = k0(vsys)
    w = weight.matrix
    acc = np.zeros_like(base)
    for tq, dk in table.pairs():
        if tq > horizon + table.tol:
            break
        acc += (kfun.value(float(tq) - tau) - base).T @ w @ dk
    gamma, sigma = report.decay_gain, report.decay_rate
    w2 = float(np.linalg.norm(w, 2))
    k0n = float(np.linalg.norm(base, 2))
    gap = table.min_gap()
    tail = (
        2.0
        * gamma
        * w2
        * k0n**2
        * (
            gamma * math.exp(sigma * tau) * math.exp(-2.0 * sigma * horizon) / (1.0 - math.exp(-2.0 * sigma * gap))
            + math.exp(-sigma * horizon) / (1.0 - math.exp(-sigma * gap))
        )
    )
    return TruncatedSeries(value=acc, tail_bound=tail, horizon=float(horizon))


def jumps_from_segments(
    u: PiecewiseAffineMatrixFunction, *, drop_tol: float = SPECTRUM_DROP_TOL
) -> JumpSpectrum:
    """Exact jump spectrum of U' read from slope differences at interior
    knots of a built U.  No truncation is involved; a constant-slope U
    yields an empty spectrum."""
    knots = u.knots()
    taus = []
    jumps = []
    for p in range(1, 2 * u.m):
        jump = u.slopes[p] - u.slopes[p - 1]
        tau = float(knots[p])
        if float(np.max(np.abs(jump))) > drop_tol:
            taus.append(tau)
            jumps.append(jump)
    return JumpSpectrum(
        taus=np.array(taus, dtype=float),
        jumps=np.array(jumps, dtype=float).reshape(len(taus), u.n, u.n),
        method="segments",
        truncation_horizon=None,
        tail_bound=0.0,
    )


def check_jump_properties(
    vsys: ValidatedSystem,
    weight: WeightMatrix,
    *,
    tau_grid: Sequence[float] | None = None,
    horizon: float | None = None,
    report: StabilityReport | None = None,
) -> JumpPropertyReport:
    """Verify the defining identities of dU' on a grid of shifts, all
    computed by the truncated series:

    symmetry   dU'(-tau) = dU'(tau)^T
    dynamic    dU'(tau) = sum_j dU'(tau - h_j) A_j          (tau > 0)
               dU'(tau) = sum_j A_j^T dU'(tau + h_j)        (tau < 0)
    algebraic  sum_i sum_j A_i^T dU'(tau + h_i - h_j) A_j - dU'(tau)
                 = W dK(tau)                                 (tau >= 0)
    and the negative semidefiniteness of dU'(0) + W.

    The default grid is the set of knot shifts k h for commensurate
    systems, or lattice differences inside [-H, H] otherwise.
    """
    report = _require_stable(vsys, report)
    if horizon is None:
        horizon = default_series_horizon(vsys, report)
    hmax = vsys.h_max
    if tau_grid is None:
        if vsys.is_rational:
            from .system_model import to_commensurate

            form = to_commensurate(vsys)
            h = float(form.h)
            tau_grid = [k * h for k in range(-form.m, form.m + 1)]
        else:
            from .fundamental import discontinuity_instants

            inst = np.asarray(discontinuity_instants(vsys, hmax))
            diffs = np.unique(
                np.concatenate([inst, -inst, np.subtract.outer(inst, inst).ravel()])
            )
            tau_grid = [t for t in diffs if abs(t) <= hmax + 1e-12]
    tau_grid = np.asarray(tau_grid, dtype=float)
    max_shift = float(np.max(np.abs(tau_grid))) if tau_grid.size else 0.0
    horizon = max(horizon, max_shift + 2.0 * hmax + vsys.h_min)
    table = delta_k(vsys, horizon + max_shift + 2.0 * hmax + vsys.h_min, drop_tol=0.0)
    delays = [float(d) for d in vsys.delays]
    mats = list(vsys.matrices)
    w = weight.matrix
    scale = max(1.0, max_shift + 2.0 * hmax)

    cache: dict[int, TruncatedSeries] = {}

    def du(tau: float) -> TruncatedSeries:
        key = round(tau / (1e-12 * scale))
        hit = cache.get(key)
        if hit is None:
            hit = delta_u_prime(
                vsys, weight, tau, horizon, report=report, table=table
            )
            cache[key] = hit
        return hit

    sym = dyn = alg = 0.0
    for tau in tau_grid:
        tau = float(tau)
        here = du(tau).value
        if tau >= 0.0:
            sym = max(sym, float(np.max(np.abs(du(-tau).value - here.T))))
            dk = table.jump_at(tau)
            dk = np.zeros_like(w) if dk is None else dk
            acc = -here - w @ dk
            for hi, ai in zip(delays, mats):
                for hj, aj in zip(delays, mats):
                    acc = acc + ai.T @ du(tau + hi - hj).value @ aj
            alg = max(alg, float(np.max(np.abs(acc))))
        if tau > 0.0:
            acc = -here
            for hj, aj in zip(delays, mats):
                acc = acc + du(tau - hj).value @ aj
            dyn = max(dyn, float(np.max(np.abs(acc))))
        elif tau < 0.0:
            acc = -here
            for hj, aj in zip(delays, mats):
                acc = acc + aj.T @ du(tau + hj).value
            dyn = max(dyn, float(np.max(np.abs(acc))))
    at_zero = du(0.0).value + w
    nsd = float(np.max(np.linalg.eigvalsh(0.5 * (at_zero + at_zero.T))))
    worst_tail = max(s.tail_bound for s in cache.values()) if cache else 0.0
    return JumpPropertyReport(
        symmetry=sym,
        dynamic=dyn,
        algebraic=alg,
        nsd_max_eigenvalue=nsd,
        tail_bound=worst_tail,
        horizon=float(horizon),
        grid_points=int(tau_grid.size),
    )
