"""Construction of the delay Lyapunov matrix U.

U(tau) integrates (K(t) - K0)^T W K(t + tau) over t >= 0 for a stable
system, but it is constructed here purely algebraically: on each interval
[k h, (k+1) h) of the basic delay h the function is affine in the local
coordinate, and the segment coefficients solve a block linear system built
from the dynamic property U(tau) = sum_j U(tau - h_j) A_j and the symmetry
property U(-tau) = U(tau)^T + P - tau K0^T W K0.  The construction is
formal: it needs no stability, only solvability of the block system.

Single delay systems get the compact two-block Kronecker form; rational
multi-delay systems go through their commensurate rewrite with a dense or
sparse solver picked by problem size.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CriticalSystem, OutOfDomain, SizeExceeded
from .system_model import (
    CommensurateForm,
    ValidatedSystem,
    WeightMatrix,
    k0,
    validate,
)

# unknown counts above this use the sparse path
DENSE_CUTOFF = 2000
MAX_UNKNOWNS = 500_000
COND_WARN = 1e10
COND_FAIL = 1e12


def _vec(x: np.ndarray) -> np.ndarray:
    return x.ravel(order="F")


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape((n, n), order="F").copy()


@dataclass(frozen=True)
class PiecewiseAffineMatrixFunction:
    """Matrix function on [-H, H], affine on each [k h, (k+1) h):
    value = C[k+m] + xi * D[k+m] with xi = tau - k h, k = -m..m-1."""

    h: float
    m: int
    n: int
    coeffs: np.ndarray
    slopes: np.ndarray
    condition_estimate: float
    solver: str
    h_exact: Fraction | None = None

    def __post_init__(self):
        self.coeffs.setflags(write=False)
        self.slopes.setflags(write=False)

    @property
    def horizon(self) -> float:
        if self.h_exact is not None:
            return float(self.m * self.h_exact)
        return self.m * self.h

    def knots(self) -> np.ndarray:
        if self.h_exact is not None:
            return np.array(
                [float(k * self.h_exact) for k in range(-self.m, self.m + 1)]
            )
        return self.h * np.arange(-self.m, self.m + 1)

    def segment(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient and slope of segment k (k = -m..m-1)."""
        if not -self.m <= k < self.m:
            raise OutOfDomain(f"segment index {k} outside [{-self.m}, {self.m - 1}]")
        return self.coeffs[k + self.m], self.slopes[k + self.m]

    def _clip(self, tau: float) -> float:
        hz = self.horizon
        slack = 1e-9 * max(1.0, hz)
        if tau < -hz - slack or tau > hz + slack:
            raise OutOfDomain(f"function defined on [{-hz}, {hz}], got {tau}")
        return min(max(tau, -hz), hz)

    def evaluate(self, tau: float) -> np.ndarray:
        tau = self._clip(float(tau))
        k = min(max(int(math.floor(tau / self.h)), -self.m), self.m - 1)
        xi = tau - k * self.h
        return self.coeffs[k + self.m] + xi * self.slopes[k + self.m]

    def evaluate_many(self, taus: Sequence[float]) -> np.ndarray:
        taus = np.asarray(taus, dtype=float)
        flat = np.array([self._clip(float(t)) for t in taus.ravel()])
        k = np.clip(np.floor(flat / self.h).astype(int), -self.m, self.m - 1)
        xi = flat - k * self.h
        p = k + self.m
        out = self.coeffs[p] + xi[:, None, None] * self.slopes[p]
        return out.reshape(taus.shape + (self.n, self.n))


@dataclass(frozen=True)
class ResidualReport:
    """Worst-case defect of a built function against its defining
    identities, sampled on a grid that always contains the knots.
    All values are max-abs entry norms."""

    symmetry: float
    dynamic: float
    continuity: float
    grid_points: int
    condition_estimate: float

    def max_residual(self) -> float:
        return max(self.symmetry, self.dynamic, self.continuity)

    def passed(self, tol: float) -> bool:
        return self.max_residual() <= tol

    def to_dict(self) -> dict:
        return {
            "symmetry": self.symmetry,
            "dynamic": self.dynamic,
            "continuity": self.continuity,
            "grid_points": self.grid_points,
            "condition_estimate": self.condition_estimate,
            "max_residual": self.max_residual(),
        }


def p_matrix(vsys: ValidatedSystem, weight: WeightMatrix) -> np.ndarray:
    """The antisymmetric constant P = K0^T [sum_j h_j (W K0 A_j
    - A_j^T K0^T W)] K0 that closes the symmetry property of U."""
    weight.require_positive_definite()
    w = weight.matrix
    base = k0(vsys)
    n = vsys.n
    inner = np.zeros((n, n))
    for d, a in vsys.entries:
        inner += float(d) * (w @ base @ a - a.T @ base.T @ w)
    return base.T @ inner @ base


def _dense_condition(mat: np.ndarray, lu_piv) -> float:
    anorm = float(np.linalg.norm(mat, 1))
    gecon = sla.get_lapack_funcs("gecon", (mat,))
    rcond, info = gecon(lu_piv[0], anorm, norm="1")
    if info != 0 or not math.isfinite(rcond):
        return math.inf
    return math.inf if rcond == 0.0 else 1.0 / rcond


def _check_condition(cond: float, cond_warn: float, cond_fail: float, label: str) -> None:
    if not math.isfinite(cond) or cond > cond_fail:
        raise CriticalSystem(
            f"{label} block system is numerically singular "
            f"(condition estimate {cond:.3e}); the delay configuration sits "
            "at or near a critical pairing of coefficient eigenvalues"
        )
    if cond > cond_warn:
        warnings.warn(
            f"{label} block system is poorly conditioned "
            f"(condition estimate {cond:.3e}); results may lose accuracy",
            RuntimeWarning,
            stacklevel=3,
        )


def build_single_delay(
    vsys: ValidatedSystem,
    weight: WeightMatrix,
    *,
    cond_warn: float = COND_WARN,
    cond_fail: float = COND_FAIL,
) -> PiecewiseAffineMatrixFunction:
    """U for a single delay system x(t) = A x(t - H).

    The two unknown segments Y(xi) = U(xi) and Z(xi) = U(xi - H) satisfy
    Y - Z A = 0 and Z - A^T Y = -(A - I)^T P - (xi I + H K0^T) W K0, a
     2 n^2 linear system through the usual columnwise stacking.  The right
    side is affine in xi, so solving the same operator against the
    constant and the slope parts yields exact affine segments.  Raises
    CriticalSystem when the operator is singular, which happens exactly
    when some product of two eigenvalues of A equals 1.
    """
    if len(vsys.entries) != 1:
        raise ValueError("single delay construction needs exactly one entry")
    weight.require_positive_definite()
    delay, a = vsys.entries[0]
    hz = float(delay)
    n = vsys.n
    w = weight.matrix
    base = k0(vsys)
    p = p_matrix(vsys, weight)
    eye2 = np.eye(n * n)
    mat = np.block(
        [
            [eye2, -np.kron(a.T, np.eye(n))],
            [-np.kron(np.eye(n), a.T), eye2],
        ]
    )
    k0_invt = (a - np.eye(n)).T
    rhs_const = -(k0_invt @ p + hz * (base.T @ w @ base))
    rhs_slope = -(w @ base)
    b_const = np.concatenate([np.zeros(n * n), _vec(rhs_const)])
    b_slope = np.concatenate([np.zeros(n * n), _vec(rhs_slope)])
    try:
        lu_piv = sla.lu_factor(mat)
    except (sla.LinAlgError, ValueError) as exc:
        raise CriticalSystem(f"single delay block system failed to factor: {exc}") from exc
    cond = _dense_condition(mat, lu_piv)
    _check_condition(cond, cond_warn, cond_fail, "single delay")
    sol_c = sla.lu_solve(lu_piv, b_const)
    sol_s = sla.lu_solve(lu_piv, b_slope)
    coeffs = np.stack([_unvec(sol_c[n * n:], n), _unvec(sol_c[: n * n], n)])
    slopes = np.stack([_unvec(sol_s[n * n:], n), _unvec(sol_s[: n * n], n)])
    return PiecewiseAffineMatrixFunction(
        h=hz,
        m=1,
        n=n,
        coeffs=coeffs,
        slopes=slopes,
        condition_estimate=cond,
        solver="dense",
        h_exact=delay if isinstance(delay, Fraction) else None,
    )


def _commensurate_blocks(form: CommensurateForm, w: np.ndarray):
    """Block rows of the commensurate construction.

    Unknown p = k + m holds the segment U(k h + xi).  Dynamic rows cover
    k = 0..m-1, symmetry rows cover k = 1..m and land at p = m - k.  The
    right side is affine in xi; only symmetry rows have nonzero data.
    Yields (row, col, block) placements plus the two right-hand sides.
    """
    n = form.n
    m = form.m
    h = float(form.h)
    coeffs = form.coefficients
    s = np.sum(coeffs, axis=0)
    base = np.linalg.inv(s - np.eye(n))
    inner = np.zeros((n, n))
    q_acc = np.zeros((n, n))
    for j, c in enumerate(coeffs, start=1):
        if not np.any(c):
            continue
        hj = j * h
        inner += hj * (w @ base @ c - c.T @ base.T @ w)
        q_acc += hj * c.T
    p_mat = base.T @ inner @ base
    k0_invt = (s - np.eye(n)).T
    q_mat = q_acc @ base.T
    wk0 = w @ base
    n2 = n * n
    placements = []
    b_const = np.zeros(2 * m * n2)
    b_slope = np.zeros(2 * m * n2)
    eye_n = np.eye(n)
    eye_block = np.eye(n2)
    for k in range(0, m):
        row = k + m
        placements.append((row, row, eye_block))
        for j, c in enumerate(coeffs, start=1):
            if not np.any(c):
                continue
            placements.append((row, k - j + m, -np.kron(c.T, eye_n)))
    for k in range(1, m + 1):
        row = m - k
        placements.append((row, row, eye_block))
        for j, c in enumerate(coeffs, start=1):
            if not np.any(c):
                continue
            placements.append((row, m - k + j, -np.kron(eye_n, c.T)))
        rhs_c = -(k0_invt @ p_mat + (-k * h * eye_n + q_mat) @ wk0)
        b_const[row * n2:(row + 1) * n2] = _vec(rhs_c)
        b_slope[row * n2:(row + 1) * n2] = _vec(-wk0)
    return placements, b_const, b_slope


def build_commensurate(
    form: CommensurateForm,
    weight: WeightMatrix,
    *,
    dense_cutoff: int = DENSE_CUTOFF,
    max_unknowns: int = MAX_UNKNOWNS,
    cond_warn: float = COND_WARN,
    cond_fail: float = COND_FAIL,
) -> PiecewiseAffineMatrixFunction:
    """U for a commensurate form with basic delay h and m blocks.

    Solves for the 2m affine segments of U over [-m h, m h] in one linear
    system of 2 m n^2 unknowns (solved twice, for the constant and slope
    parts of the affine right side).  Uses a dense LU with a reciprocal
    condition estimate up to dense_cutoff unknowns and a sparse LU with a
    one-norm condition estimate beyond; raises SizeExceeded past
    max_unknowns and CriticalSystem when the operator is singular."""
    weight.require_positive_definite()
    n = form.n
    m = form.m
    n2 = n * n
    unknowns = 2 * m * n2
    if unknowns > max_unknowns:
        raise SizeExceeded(
            f"construction needs {unknowns} unknowns, cap is {max_unknowns}"
        )
    placements, b_const, b_slope = _commensurate_blocks(form, weight.matrix)
    if unknowns <= dense_cutoff:
        solver = "dense"
        mat = np.zeros((unknowns, unknowns))
        for r, c, blk in placements:
            mat[r * n2:(r + 1) * n2, c * n2:(c + 1) * n2] += blk
        try:
            lu_piv = sla.lu_factor(mat)
        except (sla.LinAlgError, ValueError) as exc:
            raise CriticalSystem(f"commensurate block system failed to factor: {exc}") from exc
        cond = _dense_condition(mat, lu_piv)
        _check_condition(cond, cond_warn, cond_fail, "commensurate")
        sol_c = sla.lu_solve(lu_piv, b_const)
        sol_s = sla.lu_solve(lu_piv, b_slope)
    else:
        solver = "sparse"
        rows = []
        cols = []
        data = []
        for r, c, blk in placements:
            rr, cc = np.nonzero(blk)
            rows.append(rr + r * n2)
            cols.append(cc + c * n2)
            data.append(blk[rr, cc])
        mat = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(unknowns, unknowns),
        ).tocsc()
        try:
            lu = spla.splu(mat)
        except RuntimeError as exc:
            raise CriticalSystem(f"commensurate block system failed to factor: {exc}") from exc
        inv_op = spla.LinearOperator(
            mat.shape,
            matvec=lu.solve,
            rmatvec=lambda v: lu.solve(v, trans="T"),
        )
        try:
            cond = float(spla.onenormest(mat)) * float(spla.onenormest(inv_op))
        except (RuntimeError, ValueError):
            cond = math.inf
        _check_condition(cond, cond_warn, cond_fail, "commensurate")
        sol_c = lu.solve(b_const)
        sol_s = lu.solve(b_slope)
    if not (np.all(np.isfinite(sol_c)) and np.all(np.isfinite(sol_s))):
        raise CriticalSystem("commensurate block system produced non-finite segments")
    coeffs = np.stack([_unvec(sol_c[p * n2:(p + 1) * n2], n) for p in range(2 * m)])
    slopes = np.stack([_unvec(sol_s[p * n2:(p + 1) * n2], n) for p in range(2 * m)])
    return PiecewiseAffineMatrixFunction(
        h=float(form.h),
        m=m,
        n=n,
        coeffs=coeffs,
        slopes=slopes,
        condition_estimate=cond,
        solver=solver,
        h_exact=form.h,
    )


def residual_grid(u: PiecewiseAffineMatrixFunction, per_segment: int = 50) -> np.ndarray:
    """Sample grid on [-H, H]: per_segment points inside every segment
    plus every knot."""
    taus = [u.knots()]
    offs = np.linspace(0.0, u.h, per_segment, endpoint=False)[1:]
    for k in range(-u.m, u.m):
        taus.append(k * u.h + offs)
    return np.unique(np.concatenate(taus))


def residuals(
    u: PiecewiseAffineMatrixFunction,
    vsys: ValidatedSystem,
    weight: WeightMatrix,
    *,
    per_segment: int = 50,
) -> ResidualReport:
    """Defect of u against the identities that define the Lyapunov matrix
    of vsys: symmetry with the antisymmetric constant P, the delay
    difference dynamic property, and continuity across segment ends."""
    w = weight.matrix
    base = k0(vsys)
    p = p_matrix(vsys, weight)
    wk = base.T @ w @ base
    taus = residual_grid(u, per_segment)
    nonneg = taus[taus >= 0.0]
    u_pos = u.evaluate_many(nonneg)
    u_neg = u.evaluate_many(-nonneg)
    sym = float(
        np.max(np.abs(u_neg - np.transpose(u_pos, (0, 2, 1)) - p + nonneg[:, None, None] * wk))
    )
    dyn_vals = -u_pos
    for d, a in vsys.entries:
        dyn_vals = dyn_vals + u.evaluate_many(nonneg - float(d)) @ a
    dyn = float(np.max(np.abs(dyn_vals)))
    cont = 0.0
    for pidx in range(2 * u.m - 1):
        left_end = u.coeffs[pidx] + u.h * u.slopes[pidx]
        gap = float(np.max(np.abs(left_end - u.coeffs[pidx + 1])))
        cont = max(cont, gap)
    return ResidualReport(
        symmetry=sym,
        dynamic=dyn,
        continuity=cont,
        grid_points=len(taus),
        condition_estimate=u.condition_estimate,
    )


def piecewise_to_csv(u: PiecewiseAffineMatrixFunction, taus: Sequence[float], fh) -> None:
    """One row per requested tau: tau, U11..Unn (row major)."""
    writer = csv.writer(fh)
    writer.writerow(
        ["tau"] + [f"U{i + 1}{j + 1}" for i in range(u.n) for j in range(u.n)]
    )
    vals = u.evaluate_many(taus)
    for t, v in zip(taus, vals):
        writer.writerow([repr(float(t))] + [repr(float(x)) for x in v.ravel()])
