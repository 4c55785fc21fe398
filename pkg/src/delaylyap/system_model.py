"""System definitions for continuous-time linear delay difference equations.

A system is x(t) = sum_j A_j x(t - h_j) for t >= 0, with delays
0 < h_1 < ... < h_m = H and an initial function on [-H, 0).  This module
owns the data types, structural validation, the constant matrix K0 that
anchors the fundamental matrix, stability diagnostics with a decay
envelope estimate, and the exact rewrite of rational-delay systems over a
common basic delay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    NonFiniteInput,
    NonincreasingDelays,
    NonRationalInput,
    ParseError,
    SingularK0,
)

Delay = Union[float, Fraction]

# |det(sum A_j - I)| must exceed this times the matrix norm to the n-th
# power, otherwise K0 is declared unreliable.
DET_RTOL = 1e-12


def _as_matrix(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def _is_exact(d: Delay) -> bool:
    return isinstance(d, (Fraction, int))


def _exact(d: Delay) -> Fraction:
    return d if isinstance(d, Fraction) else Fraction(d)


@dataclass(frozen=True)
class DelaySystem:
    """Raw description: state dimension and (delay, coefficient) pairs.

    Delays may be floats or exact Fractions; exactness is preserved and
    decides later whether lattice arithmetic is exact or merge-tolerant.
    Construction normalizes matrices to read-only float arrays; all
    structural rules are enforced by validate().
    """

    n: int
    entries: tuple

    def __init__(self, n: int, entries: Sequence[tuple]):
        object.__setattr__(self, "n", int(n))
        object.__setattr__(
            self,
            "entries",
            tuple((d if isinstance(d, Fraction) else (Fraction(d) if isinstance(d, int) else float(d)),
                   _as_matrix(a)) for d, a in entries),
        )

    @classmethod
    def single(cls, a, delay: Delay) -> "DelaySystem":
        mat = np.atleast_2d(np.array(a, dtype=float))
        return cls(mat.shape[0], [(delay, mat)])

    @property
    def delays(self) -> tuple:
        return tuple(d for d, _ in self.entries)

    @property
    def matrices(self) -> tuple:
        return tuple(a for _, a in self.entries)


@dataclass(frozen=True)
class ValidatedSystem:
    """A DelaySystem that passed validate().  Thin read-only view."""

    system: DelaySystem

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def entries(self) -> tuple:
        return self.system.entries

    @property
    def delays(self) -> tuple:
        return self.system.delays

    @property
    def matrices(self) -> tuple:
        return self.system.matrices

    @property
    def h_max(self) -> float:
        return float(self.system.entries[-1][0])

    @property
    def h_min(self) -> float:
        return float(self.system.entries[0][0])

    @property
    def is_rational(self) -> bool:
        return all(_is_exact(d) for d in self.delays)

    @property
    def coefficient_sum(self) -> np.ndarray:
        return np.sum(self.matrices, axis=0)


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric weight.  Symmetry is required exactly as stored; positive
    definiteness is checked where a construction actually needs it."""

    matrix: np.ndarray

    def __init__(self, matrix):
        mat = _as_matrix(matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch("weight matrix must be square")
        if not np.array_equal(mat, mat.T):
            raise DimensionMismatch("weight matrix must equal its transpose exactly")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls, n: int) -> "WeightMatrix":
        return cls(np.eye(n))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def require_positive_definite(self) -> None:
        w = np.linalg.eigvalsh(self.matrix)
        if w[0] <= 0.0:
            raise ValueError(
                f"weight matrix must be positive definite (min eigenvalue {w[0]:.3e})"
            )


@dataclass(frozen=True)
class InitialFunction:
    """Piecewise linear initial data on [-H, 0), evaluated right of each
    segment start.  Constant functions get an unbounded left domain so the
    same object works for any system."""

    starts: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    left_end: float

    def __init__(self, starts, values, slopes=None, left_end=None):
        starts = np.asarray(starts, dtype=float)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] != starts.shape[0]:
            raise DimensionMismatch("one value row per segment start required")
        if slopes is None:
            slopes = np.zeros_like(values)
        else:
            slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
            if slopes.shape != values.shape:
                raise DimensionMismatch("slopes must match values in shape")
        if np.any(np.diff(starts) <= 0):
            raise NonincreasingDelays("segment starts must be strictly increasing")
        if starts[-1] >= 0:
            raise ValueError("all segments must start before 0")
        for arr in (starts, values, slopes):
            arr.setflags(write=False)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "left_end", float(starts[0]) if left_end is None else float(left_end))

    @classmethod
    def constant(cls, vector) -> "InitialFunction":
        vec = np.atleast_1d(np.asarray(vector, dtype=float))
        return cls([-math.inf], [vec])

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def value(self, theta: float) -> np.ndarray:
        """Evaluate at theta < 0.  Tiny float overshoot below the left end
        is clamped; anything at or above 0 is rejected."""
        if theta >= 0.0:
            from .errors import OutOfDomain

            raise OutOfDomain(f"initial function is defined on [{self.left_end}, 0), got {theta}")
        lo = self.left_end
        if math.isfinite(lo):
            slack = 1e-9 * max(1.0, abs(lo))
            if theta < lo - slack:
                from .errors import OutOfDomain

                raise OutOfDomain(f"initial function is defined on [{lo}, 0), got {theta}")
            theta = max(theta, lo)
        k = int(np.searchsorted(self.starts, theta, side="right")) - 1
        k = max(k, 0)
        slope = self.slopes[k]
        if not slope.any():
            # keeps constant segments usable with an infinite left end
            return self.values[k].copy()
        return self.values[k] + (theta - self.starts[k]) * slope


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of a stability check.

    verdict is one of "stable", "unstable", "inconclusive".  For stable
    systems decay_rate (sigma) and decay_gain (gamma) describe the fitted
    envelope ||K(t)|| <= gamma * ||K0|| * exp(-sigma t); both are None
    otherwise.  rate_step is the time step the spectral radius refers to.
    """

    method: str
    spectral_radius: float
    verdict: str
    rate_step: float
    decay_gain: float | None = None
    decay_rate: float | None = None
    grid_points: int | None = None

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "spectral_radius": self.spectral_radius,
            "verdict": self.verdict,
            "rate_step": self.rate_step,
            "decay_gain": self.decay_gain,
            "decay_rate": self.decay_rate,
            "grid_points": self.grid_points,
        }


@dataclass(frozen=True)
class CommensurateForm:
    """Rewrite of a rational-delay system over a basic delay h: delays are
    j*h for j = 1..m with coefficient C_j (zero where the original system
    has no entry).  Sum of C_j equals the original coefficient sum exactly
    because the arrays are shared, not copied."""

    h: Fraction
    m: int
    coefficients: tuple
    origin: DelaySystem

    @property
    def n(self) -> int:
        return self.origin.n

    def delays(self) -> list[Fraction]:
        return [self.h * j for j in range(1, self.m + 1)]

    def to_system(self, keep_zero: bool = False) -> "ValidatedSystem":
        """The commensurate rewrite as a plain system (zero blocks dropped
        unless keep_zero)."""
        entries = [
            (self.h * (j + 1), c)
            for j, c in enumerate(self.coefficients)
            if keep_zero or np.any(c != 0.0)
        ]
        return validate(DelaySystem(self.n, entries))


def validate(system: DelaySystem, *, det_rtol: float = DET_RTOL) -> ValidatedSystem:
    """Check structure and the invertibility of sum(A_j) - I.

    Raises DimensionMismatch, NonincreasingDelays, NonFiniteInput or
    SingularK0.  The determinant test is relative: |det| must exceed
    det_rtol * ||sum A_j - I||_2 ** n.
    """
    n = system.n
    if n < 1:
        raise DimensionMismatch("state dimension must be at least 1")
    if not system.entries:
        raise DimensionMismatch("at least one delay entry is required")
    prev = None
    for d, a in system.entries:
        dv = float(d)
        if not math.isfinite(dv):
            raise NonFiniteInput("delays must be finite")
        if dv <= 0.0:
            raise NonincreasingDelays(f"delays must be positive, got {dv}")
        if prev is not None and not (d > prev):
            raise NonincreasingDelays("delays must be strictly increasing")
        prev = d
        if a.shape != (n, n):
            raise DimensionMismatch(f"coefficient for delay {dv} has shape {a.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("coefficient matrices must be finite")
    m = np.sum(system.matrices, axis=0) - np.eye(n)
    det = float(np.linalg.det(m))
    scale = float(np.linalg.norm(m, 2)) ** n
    if abs(det) <= det_rtol * scale:
        raise SingularK0(
            f"sum of coefficients minus identity is numerically singular (|det| = {abs(det):.3e})"
        )
    return ValidatedSystem(system)


def k0(vsys: ValidatedSystem) -> np.ndarray:
    """The constant value of the fundamental matrix on [-H, 0):
    K0 = (sum A_j - I)^-1."""
    m = vsys.coefficient_sum - np.eye(vsys.n)
    try:
        out = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise SingularK0(str(exc)) from exc
    out.setflags(write=False)
    return out


def _fraction_gcd(values: Sequence[Fraction]) -> Fraction:
    num = 0
    den = 1
    for v in values:
        num = math.gcd(num, v.numerator)
        den = den * v.denominator // math.gcd(den, v.denominator)
    return Fraction(num, den)


def _commensurate_data(delays: Sequence[Fraction], mats: Sequence[np.ndarray], n: int):
    h = _fraction_gcd(delays)
    ratio = delays[-1] / h
    m = int(ratio)
    zero = np.zeros((n, n))
    zero.setflags(write=False)
    coeffs = [zero] * m
    for d, a in zip(delays, mats):
        coeffs[int(d / h) - 1] = a
    return h, m, tuple(coeffs)


def to_commensurate(vsys: ValidatedSystem, rational_delays: Sequence[Delay] | None = None) -> CommensurateForm:
    """Exact rewrite over the gcd of the delays.

    rational_delays, when given, replaces the system's own delays entry by
    entry and must be exact (Fraction or int), positive and strictly
    increasing.  Without it the system's own delays must already be exact.
    """
    if rational_delays is None:
        if not vsys.is_rational:
            raise NonRationalInput(
                "system has float delays; pass exact replacements or approximate first"
            )
        exact = [_exact(d) for d in vsys.delays]
    else:
        if len(rational_delays) != len(vsys.entries):
            raise NonRationalInput(
                f"expected {len(vsys.entries)} delays, got {len(rational_delays)}"
            )
        exact = []
        for d in rational_delays:
            if not _is_exact(d):
                raise NonRationalInput(f"delay {d!r} is not an exact rational")
            exact.append(_exact(d))
        if any(d <= 0 for d in exact) or any(b <= a for a, b in zip(exact, exact[1:])):
            raise NonRationalInput("replacement delays must be positive and strictly increasing")
    h, m, coeffs = _commensurate_data(exact, vsys.matrices, vsys.n)
    return CommensurateForm(h=h, m=m, coefficients=coeffs, origin=vsys.system)


def _companion_radius(coeffs: Sequence[np.ndarray], n: int) -> float:
    m = len(coeffs)
    big = np.zeros((n * m, n * m))
    for j, c in enumerate(coeffs):
        big[:n, j * n:(j + 1) * n] = c
    if m > 1:
        big[n:, :-n] = np.eye(n * (m - 1))
    return float(np.max(np.abs(np.linalg.eigvals(big))))


def _torus_radius(delays: Sequence[float], mats: Sequence[np.ndarray], points: int) -> float:
    """Largest spectral radius of sum A_j exp(i theta_j) over a uniform
    grid on the torus.  A sampled lower bound of the true supremum, hence
    only a heuristic certificate."""
    m = len(delays)
    thetas = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    worst = 0.0
    for idx in np.ndindex(*([points] * m)):
        acc = np.zeros_like(mats[0], dtype=complex)
        for a, i in zip(mats, idx):
            acc = acc + a * np.exp(1j * thetas[i])
        r = float(np.max(np.abs(np.linalg.eigvals(acc))))
        if r > worst:
            worst = r
    return worst


def _fit_decay(vsys: ValidatedSystem, rho: float, step: float) -> tuple[float, float]:
    """Fit (gamma, sigma) so that ||K(t)||_2 <= gamma ||K0||_2 exp(-sigma t)
    holds on a deep sample horizon.  sigma keeps a 10 percent slack off the
    observed per-step decay so the margin grows with depth; gamma carries a
    further 5 percent cushion over the worst observed ratio."""
    from . import fundamental

    sigma = 0.9 * (-math.log(rho)) / step
    depth = step * math.log(1e-13) / math.log(rho)
    horizon = min(depth, 3000.0 * vsys.h_min)
    horizon = max(horizon, 3.0 * vsys.h_max)
    kfun = fundamental.fundamental_matrix(vsys, horizon)
    k0n = float(np.linalg.norm(kfun.pre_value, 2))
    ends = np.append(kfun.breakpoints[1:], kfun.horizon)
    gamma = 1.0
    for v, t_end in zip(kfun.values, ends):
        ratio = float(np.linalg.norm(v, 2)) * math.exp(sigma * t_end) / k0n
        if ratio > gamma:
            gamma = ratio
    return 1.05 * gamma, sigma


def stability_check(
    system: DelaySystem | ValidatedSystem,
    *,
    torus_points: int = 64,
    torus_margin: float = 1e-3,
    exact_margin: float = 1e-9,
    companion_cap: int = 4000,
    with_decay: bool = True,
) -> StabilityReport:
    """Classify the system as stable, unstable or inconclusive.

    Single delay: spectral radius of the lone coefficient.  All delays
    exact rationals: spectral radius of the block companion matrix of the
    commensurate rewrite (per basic-delay step).  Otherwise a torus grid
    search that can certify instability but never stability; near-unity
    results within torus_margin stay inconclusive.
    """
    raw = system.system if isinstance(system, ValidatedSystem) else system
    delays = raw.delays
    mats = raw.matrices
    n = raw.n
    grid_points = None

    if len(delays) == 1:
        method = "single_delay_spectral"
        rho = float(np.max(np.abs(np.linalg.eigvals(mats[0]))))
        step = float(delays[0])
        margin = exact_margin
    elif all(_is_exact(d) for d in delays):
        exact = [_exact(d) for d in delays]
        h, m, coeffs = _commensurate_data(exact, mats, n)
        if n * m <= companion_cap:
            method = "commensurate_companion"
            rho = _companion_radius(coeffs, n)
            step = float(h)
            margin = exact_margin
        else:
            method = "torus_grid_heuristic"
            rho = _torus_radius([float(d) for d in delays], mats, torus_points)
            step = float(delays[-1])
            margin = torus_margin
            grid_points = torus_points
    else:
        method = "torus_grid_heuristic"
        rho = _torus_radius([float(d) for d in delays], mats, torus_points)
        step = float(delays[-1])
        margin = torus_margin
        grid_points = torus_points

    if rho >= 1.0 + margin:
        verdict = "unstable"
    elif rho <= 1.0 - margin:
        # the sampled torus maximum is a lower bound, so a small value
        # cannot certify stability
        verdict = "inconclusive" if method == "torus_grid_heuristic" else "stable"
    else:
        verdict = "inconclusive"

    gamma = sigma = None
    if verdict == "stable" and with_decay:
        vsys = system if isinstance(system, ValidatedSystem) else validate(system)
        gamma, sigma = _fit_decay(vsys, rho, step)
    return StabilityReport(
        method=method,
        spectral_radius=rho,
        verdict=verdict,
        rate_step=step,
        decay_gain=gamma,
        decay_rate=sigma,
        grid_points=grid_points,
    )


def _reject_constant(token: str):
    raise ParseError(f"non-finite number {token!r} is not allowed in a system descriptor")


def _delay_from_json(obj) -> Delay:
    if isinstance(obj, bool):
        raise ParseError("delay must be a number or {num, den}")
    if isinstance(obj, int):
        return Fraction(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ParseError("delay must be finite")
        return obj
    if isinstance(obj, dict):
        try:
            num, den = obj["num"], obj["den"]
        except KeyError as exc:
            raise ParseError("rational delay needs both 'num' and 'den'") from exc
        if not isinstance(num, int) or not isinstance(den, int) or den == 0:
            raise ParseError("'num' and 'den' must be integers with den != 0")
        return Fraction(num, den)
    raise ParseError(f"cannot read a delay from {obj!r}")


def system_from_json(text: str) -> DelaySystem:
    """Parse the JSON descriptor {"n": int, "entries": [{"delay": ..., "A": [[...]]}]}.

    Delays may be floats, integers (exact) or {"num": p, "den": q}
    (exact).  NaN and infinities are rejected everywhere.
    """
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("descriptor must be a JSON object")
    try:
        n = data["n"]
        raw_entries = data["entries"]
    except KeyError as exc:
        raise ParseError(f"descriptor is missing {exc}") from exc
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ParseError("'n' must be a positive integer")
    if not isinstance(raw_entries, list) or not raw_entries:
        raise ParseError("'entries' must be a non-empty list")
    entries = []
    for item in raw_entries:
        if not isinstance(item, dict) or "delay" not in item or "A" not in item:
            raise ParseError("each entry needs 'delay' and 'A'")
        delay = _delay_from_json(item["delay"])
        try:
            a = np.array(item["A"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"matrix for delay {delay} is malformed: {exc}") from exc
        if a.shape != (n, n):
            raise ParseError(f"matrix for delay {delay} must be {n}x{n}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ParseError("matrix entries must be finite")
        entries.append((delay, a))
    return DelaySystem(n, entries)


def system_to_json(system: DelaySystem) -> str:
    """Inverse of system_from_json.  Exact delays round-trip as {num, den}."""

    def delay_out(d: Delay):
        if isinstance(d, Fraction):
            return {"num": d.numerator, "den": d.denominator}
        return float(d)

    data = {
        "n": system.n,
        "entries": [
            {"delay": delay_out(d), "A": [[float(x) for x in row] for row in a]}
            for d, a in system.entries
        ],
    }
    return json.dumps(data, sort_keys=True, indent=2)


def load_system(path) -> DelaySystem:
    with open(path, "r", encoding="utf-8") as fh:
        return system_from_json(fh.read())
