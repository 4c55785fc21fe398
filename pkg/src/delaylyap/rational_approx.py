"""Rational approximation of non-commensurate delays.

Float delays are replaced by convergents of their continued fraction
expansions, which are the best rational approximations at a given
denominator size.  The rationalized system is commensurate over the gcd
of the convergents, so the block construction applies; running a ladder
of orders and comparing consecutive Lyapunov functions on a shared grid
gives an empirical convergence picture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import NonFiniteInput, OrderUnavailable, SizeExceeded
from .lyapunov_build import (
    DENSE_CUTOFF,
    MAX_UNKNOWNS,
    PiecewiseAffineMatrixFunction,
    build_commensurate,
)
from .system_model import (
    CommensurateForm,
    DelaySystem,
    ValidatedSystem,
    WeightMatrix,
    stability_check,
    to_commensurate,
    validate,
)

MAX_TERMS = 64
BASIC_DELAY_CAP = 100_000


@dataclass(frozen=True)
class ContinuedFraction:
    """Expansion x = c0 + 1/(c1 + 1/(c2 + ...)).  c0 >= 0 and all later
    coefficients are >= 1.  exact means the expansion terminated on its
    own rather than being cut at the term cap; floats are expanded through
    their exact binary value, so every float input terminates eventually.
    """

    coefficients: tuple
    value: float
    exact: bool

    def __len__(self) -> int:
        return len(self.coefficients)


def continued_fraction(x, max_terms: int = MAX_TERMS) -> ContinuedFraction:
    """Expand a positive real (float or Fraction) by the Euclidean
    algorithm on its exact rational value."""
    if isinstance(x, float) and not math.isfinite(x):
        raise NonFiniteInput(f"cannot expand {x!r}")
    if x <= 0:
        raise ValueError(f"expansion needs a positive value, got {x}")
    frac = x if isinstance(x, Fraction) else Fraction(x)
    coeffs = []
    exact = False
    for _ in range(max_terms):
        q = frac.numerator // frac.denominator
        coeffs.append(int(q))
        rem = frac - q
        if rem == 0:
            exact = True
            break
        frac = 1 / rem
    return ContinuedFraction(coefficients=tuple(coeffs), value=float(x), exact=exact)


def convergent(cf: ContinuedFraction, order: int) -> Fraction:
    """Order-s convergent p_s/q_s by the standard three-term recurrence.
    Successive convergents alternate around the value and satisfy
    |x - p_s/q_s| <= 1/q_s^2."""
    if order < 0 or order >= len(cf.coefficients):
        raise OrderUnavailable(
            f"expansion has orders 0..{len(cf.coefficients) - 1}, requested {order}"
        )
    p_prev, p = 1, cf.coefficients[0]
    q_prev, q = 0, 1
    for c in cf.coefficients[1:order + 1]:
        p_prev, p = p, c * p + p_prev
        q_prev, q = q, c * q + q_prev
    return Fraction(p, q)


def convergents(cf: ContinuedFraction) -> list[Fraction]:
    return [convergent(cf, s) for s in range(len(cf.coefficients))]


def approximate_system(
    vsys: ValidatedSystem,
    order: int,
    *,
    max_terms: int = MAX_TERMS,
    m_cap: int = BASIC_DELAY_CAP,
) -> CommensurateForm:
    """Commensurate form whose delays replace every float delay by its
    order-s convergent.  Exact rational delays pass through untouched, so
    an already rational system gives the same form at every order.
    Convergent collisions merge by summing coefficients.  Raises
    SizeExceeded when the gcd step count m would exceed m_cap."""
    if vsys.is_rational:
        return to_commensurate(vsys)
    replaced: dict[Fraction, np.ndarray] = {}
    for d, a in vsys.entries:
        if isinstance(d, Fraction):
            r = d
        else:
            cf = continued_fraction(d, max_terms)
            s = min(order, len(cf.coefficients) - 1)
            r = convergent(cf, s)
        if r <= 0:
            raise ValueError(
                f"order-{order} convergent of delay {float(d)} is {r}; use a higher order"
            )
        if r in replaced:
            replaced[r] = replaced[r] + a
        else:
            replaced[r] = a
    entries = sorted(replaced.items())
    rationalized = validate(DelaySystem(vsys.n, entries))
    form = to_commensurate(rationalized)
    if form.m > m_cap:
        raise SizeExceeded(
            f"rationalized delays need m = {form.m} basic steps, cap is {m_cap}"
        )
    return CommensurateForm(
        h=form.h, m=form.m, coefficients=form.coefficients, origin=vsys.system
    )


@dataclass(frozen=True)
class ApproximationStep:
    """One rung of the order ladder: the rationalized delays, their
    commensurate geometry, the built U, and the sup difference against
    the previous rung on a shared grid (None for the first)."""

    order: int
    delays: tuple
    h: Fraction
    m: int
    u: PiecewiseAffineMatrixFunction
    system: ValidatedSystem
    stability_verdict: str
    spectral_radius: float
    sup_diff_prev: float | None

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "delays": [
                {"num": d.numerator, "den": d.denominator} for d in self.delays
            ],
            "h": {"num": self.h.numerator, "den": self.h.denominator},
            "m": self.m,
            "unknowns": 2 * self.m * self.u.n * self.u.n,
            "solver": self.u.solver,
            "condition_estimate": self.u.condition_estimate,
            "stability_verdict": self.stability_verdict,
            "spectral_radius": self.spectral_radius,
            "sup_diff_prev": self.sup_diff_prev,
        }


def u_sequence(
    vsys: ValidatedSystem,
    weight: WeightMatrix,
    orders: Sequence[int],
    *,
    grid_points: int = 401,
    dense_cutoff: int = DENSE_CUTOFF,
    max_unknowns: int = MAX_UNKNOWNS,
) -> list[ApproximationStep]:
    """Build U for each approximation order and measure successive sup
    differences on a shared grid over the common horizon.  Stability
    verdicts ride along because rationalizations of a borderline system
    can disagree across orders; callers should flag that."""
    steps: list[ApproximationStep] = []
    prev: ApproximationStep | None = None
    for order in orders:
        form = approximate_system(vsys, order)
        u = build_commensurate(
            form, weight, dense_cutoff=dense_cutoff, max_unknowns=max_unknowns
        )
        rsys = form.to_system()
        rep = stability_check(rsys, with_decay=False)
        sup_diff = None
        if prev is not None:
            shared = min(u.horizon, prev.u.horizon)
            grid = np.linspace(-shared, shared, grid_points)
            sup_diff = float(
                np.max(np.abs(u.evaluate_many(grid) - prev.u.evaluate_many(grid)))
            )
        step = ApproximationStep(
            order=order,
            delays=tuple(d for d, _ in rsys.entries),
            h=form.h,
            m=form.m,
            u=u,
            system=rsys,
            stability_verdict=rep.verdict,
            spectral_radius=rep.spectral_radius,
            sup_diff_prev=sup_diff,
        )
        steps.append(step)
        prev = step
    return steps
