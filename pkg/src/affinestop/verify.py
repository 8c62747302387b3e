"""Property suite for sampled value functions, solver-agnostic.

Every conclusion the theory guarantees about s is checked on a sampled
(v, s(v)) table: convexity, monotone decrease, the 0 <= s <= c and s >= f
bounds, the limit s -> c as v -> 0, the contact set being a lower interval,
and the equality of the raw and clipped-payoff problems.  Checks are pure
functions returning deterministic reports; nothing here raises on a failed
property, only on violated preconditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from affinestop.model import PayoffSpec, payoff

# Positivity of the clipped-problem value is only a sharp statement while
# truncation bias at the top of the grid is negligible; beyond this span
# (alpha * v_max / c) the check degrades to s >= -tol.
POSITIVITY_SPAN = 1e4


@dataclass(eq=False)
class SampledValueFunction:
    """A value function sampled on a strictly increasing grid.

    v, s      -- sample locations (> 0) and values
    payoff    -- the affine payoff the samples refer to
    tolerance -- slack used by every check on this sample
    """

    v: np.ndarray
    s: np.ndarray
    payoff: PayoffSpec
    tolerance: float

    def __post_init__(self) -> None:
        self.v = np.asarray(self.v, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if self.v.ndim != 1 or self.v.shape != self.s.shape:
            raise ValueError("v and s must be 1-d arrays of equal length")
        if len(self.v) < 3:
            raise ValueError("need at least 3 sample points")
        if not np.all(self.v > 0.0) or not np.all(np.diff(self.v) > 0.0):
            raise ValueError("v must be positive and strictly increasing")
        if not self.tolerance >= 0.0:
            raise ValueError("tolerance must be >= 0")

    def payoff_values(self, clipped: bool = False) -> np.ndarray:
        return np.asarray(payoff(self.payoff, self.v, clipped=clipped))


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    detail: str
    violations: tuple = ()

    def __bool__(self) -> bool:
        return self.passed


@dataclass(frozen=True)
class ContactReport:
    """Down-set structure of the contact set {i : |s_i - f(v_i)| <= tol}."""

    passed: bool
    b_hat: float | None
    detail: str
    gaps: tuple = ()
    inconclusive: bool = False

    def __bool__(self) -> bool:
        return self.passed


def check_convexity(svf: SampledValueFunction) -> CheckReport:
    """Convexity via chord gaps on the (possibly non-uniform) grid.

    For each interior point the convex-combination residual
    lam*s[i-1] + (1-lam)*s[i+1] - s[i], lam = (v[i+1]-v[i])/(v[i+1]-v[i-1]),
    must be >= -tolerance.  The residual carries the value scale (it is the
    local second divided difference times half the stencil width), so the
    tolerance composes with solver error rather than grid spacing.
    """
    v, s = svf.v, svf.s
    lam = (v[2:] - v[1:-1]) / (v[2:] - v[:-2])
    gap = lam * s[:-2] + (1.0 - lam) * s[2:] - s[1:-1]
    bad = np.flatnonzero(gap < -svf.tolerance) + 1
    worst = float(gap.min())
    return CheckReport(
        name="convexity",
        passed=len(bad) == 0,
        detail=f"min chord gap {worst:.3e} (tolerance -{svf.tolerance:.1e})",
        violations=tuple(int(i) for i in bad),
    )


def check_monotone_bounds(svf: SampledValueFunction) -> CheckReport:
    """s decreasing, -tol <= s <= c + tol, and s >= f - tol pointwise."""
    v, s, tol = svf.v, svf.s, svf.tolerance
    f = svf.payoff_values()
    bad_mono = np.flatnonzero(np.diff(s) > tol) + 1
    bad_lower = np.flatnonzero(s < -tol)
    bad_upper = np.flatnonzero(s > svf.payoff.c + tol)
    bad_env = np.flatnonzero(s < f - tol)
    problems = []
    if len(bad_mono):
        problems.append(f"increases at {len(bad_mono)} points")
    if len(bad_lower):
        problems.append(f"below 0 at {len(bad_lower)} points")
    if len(bad_upper):
        problems.append(f"above c at {len(bad_upper)} points")
    if len(bad_env):
        problems.append(f"below the payoff at {len(bad_env)} points")
    passed = not problems
    return CheckReport(
        name="monotone_bounds",
        passed=passed,
        detail="decreasing and within [0, c], dominating f" if passed
        else "; ".join(problems),
        violations=tuple(
            int(i)
            for arr in (bad_mono, bad_lower, bad_upper, bad_env)
            for i in arr
        ),
    )


def check_limit_at_zero(svf: SampledValueFunction) -> CheckReport:
    """|s - f| at the smallest sample, which must satisfy v <= 1e-3 * c/alpha.

    Raises ValueError when the grid does not reach small enough v; the
    limit statement cannot be tested on such a sample.
    """
    reach = 1e-3 * svf.payoff.root
    if svf.v[0] > reach:
        raise ValueError(
            f"grid starts at {svf.v[0]:g}, above the 1e-3 * c/alpha = "
            f"{reach:g} reach needed to probe the v -> 0 limit"
        )
    gap = abs(svf.s[0] - float(svf.payoff_values()[0]))
    return CheckReport(
        name="limit_at_zero",
        passed=gap <= svf.tolerance,
        detail=f"|s - f| = {gap:.3e} at v = {svf.v[0]:g}",
        violations=() if gap <= svf.tolerance else (0,),
    )


def check_contact_downset(svf: SampledValueFunction) -> ContactReport:
    """The contact set must be a prefix {0..k} of the grid; b_hat = v[k].

    An empty contact set passes but is flagged inconclusive (the grid may
    simply not reach below the threshold; refine it), since the theory
    guarantees a strictly positive threshold under the screens.
    """
    f = svf.payoff_values()
    contact = np.abs(svf.s - f) <= svf.tolerance
    idx = np.flatnonzero(contact)
    if len(idx) == 0:
        return ContactReport(
            passed=True,
            b_hat=None,
            detail="contact set empty; inconclusive: refine the grid "
            "toward v = 0",
            inconclusive=True,
        )
    k = int(idx[-1])
    gaps = tuple(int(i) for i in np.flatnonzero(~contact[: k + 1]))
    if gaps:
        return ContactReport(
            passed=False,
            b_hat=float(svf.v[k]),
            detail=f"contact set has gaps at indices {gaps[:8]}",
            gaps=gaps,
        )
    return ContactReport(
        passed=True,
        b_hat=float(svf.v[k]),
        detail=f"contact set is {{0..{k}}}, threshold estimate {svf.v[k]:g}",
    )


def check_put_equivalence(
    s_raw: SampledValueFunction, s_clipped: SampledValueFunction
) -> CheckReport:
    """Raw and clipped problems must agree in sup norm; the clipped value
    must be strictly positive while the grid span keeps truncation honest.

    The sup-norm budget is the sum of the two samples' tolerances.  Raises
    ValueError on mismatched grids.
    """
    if not np.array_equal(s_raw.v, s_clipped.v):
        raise ValueError("samples live on different grids")
    tol = s_raw.tolerance + s_clipped.tolerance
    sup = float(np.max(np.abs(s_raw.s - s_clipped.s)))
    min_clip = float(np.min(s_clipped.s))
    span = s_raw.payoff.alpha * s_raw.v[-1] / s_raw.payoff.c
    notes = [f"sup |s - s_clipped| = {sup:.3e} (budget {tol:.1e})"]
    passed = sup <= tol
    if span <= POSITIVITY_SPAN:
        if min_clip <= 0.0:
            passed = False
            notes.append(f"clipped value not strictly positive: min {min_clip:.3e}")
    else:
        if min_clip < -tol:
            passed = False
            notes.append(f"clipped value below -tol: min {min_clip:.3e}")
        elif min_clip <= 0.0:
            notes.append(
                "positivity not strict at large v (grid-truncation artifact)"
            )
    return CheckReport(
        name="put_equivalence",
        passed=passed,
        detail="; ".join(notes),
    )
