"""Finite-chain discretisation of V and the Snell value iteration.

The state space is a log-spaced grid; because X has stationary independent
increments, every kernel row is the same one-step increment distribution
shifted to the row's grid cell, so the whole kernel comes from a single
increment CDF evaluated at cell edges.  Mass escaping the grid piles onto
the boundary states (conservative at the lower boundary, where the payoff
is largest; slightly inflating at the top).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import ndtr

from affinestop.model import ModelSpec, PayoffSpec, payoff

# Kernel entries below this are dropped before row renormalisation; keeps
# diffusion kernels banded without visible effect at solver tolerances.
_ENTRY_FLOOR = 1e-16
# Poisson jump-count truncation: tail mass below this is ignored.
_POISSON_TAIL = 1e-12


class ConvergenceError(RuntimeError):
    """Value iteration failed to reach tolerance; carries the residual."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"value iteration did not converge: residual {residual:.3e} "
            f"after {iterations} sweeps"
        )


class StructureError(RuntimeError):
    """The stopping set is not a lower interval of the grid."""


@dataclass(eq=False)
class Chain:
    """Finite-state chain for V on a log-spaced grid.

    states    -- strictly increasing v values
    kernel    -- row-stochastic one-step transition matrix over dt
    dt        -- time step
    discount  -- exp(-r*dt)
    """

    states: np.ndarray
    kernel: np.ndarray
    dt: float
    discount: float

    def __post_init__(self) -> None:
        n = len(self.states)
        if self.kernel.shape != (n, n):
            raise ValueError("kernel shape does not match states")
        if not np.all(np.diff(self.states) > 0.0) or not self.states[0] > 0.0:
            raise ValueError("states must be strictly increasing and positive")
        if np.any(self.kernel < 0.0):
            raise ValueError("kernel entries must be nonnegative")
        rowsum = self.kernel.sum(axis=1)
        if np.max(np.abs(rowsum - 1.0)) > 1e-12:
            raise ValueError("kernel rows must sum to 1 within 1e-12")


@dataclass(eq=False)
class SnellResult:
    """Fixed point of the stopping Bellman operator on a chain.

    values          -- s_i aligned with chain states
    stop_set        -- indices where the payoff is attained (contact set)
    threshold_index -- largest stop index when stop_set is a lower
                       interval {0..k}, else None
    iterations      -- sweeps performed
    residual        -- final sup-norm change
    """

    values: np.ndarray
    stop_set: frozenset
    threshold_index: int | None
    iterations: int
    residual: float


def _poisson_weights(mean: float) -> np.ndarray:
    """Poisson pmf truncated where the remaining tail drops below 1e-12."""
    w = [math.exp(-mean)]
    total = w[0]
    n = 0
    while 1.0 - total > _POISSON_TAIL:
        n += 1
        w.append(w[-1] * mean / n)
        total += w[-1]
        if n > 10_000:  # pragma: no cover - mean would have to be absurd
            raise ValueError("Poisson truncation did not close; mean too large")
    return np.asarray(w)


def _increment_cdf_at(m: ModelSpec, dt: float, h: float, m_lo: int, m_hi: int) -> np.ndarray:
    """CDF of the increment of X over dt at the points (k - 0.5)*h, k=m_lo..m_hi.

    Conditions on the Poisson jump count: the zero-jump term is the exact
    Gaussian CDF (a unit step when sigma == 0); terms with n >= 1 jumps are
    built by convolving that base CDF with the jump density n times on a
    fine grid whose spacing divides h/2, so the requested points land on
    grid nodes exactly.
    """
    mean = m.mu * dt
    sd = m.sigma * math.sqrt(dt)
    lam = m.lambda_j * dt
    targets = (np.arange(m_lo, m_hi + 1) - 0.5) * h

    def base_cdf(z: np.ndarray) -> np.ndarray:
        if sd > 0.0:
            return ndtr((z - mean) / sd)
        return (z >= mean).astype(float)

    if lam == 0.0:
        return base_cdf(targets)

    weights = _poisson_weights(lam)
    n_max = len(weights) - 1
    if n_max == 0:
        return base_cdf(targets)

    # Fine grid: spacing h/(2q) makes every (k - 0.5)*h an exact node.
    scale = min(1.0 / m.eta_up, 1.0 / m.eta_down)
    raw = min(h, scale, sd if sd > 0.0 else math.inf) / 8.0
    q = max(1, math.ceil(h / (2.0 * raw)))
    delta = h / (2.0 * q)

    jump_reach = n_max * 37.0 / min(m.eta_up, m.eta_down)
    pad = abs(mean) + 12.0 * sd + jump_reach + 2.0 * delta
    lo_idx = math.floor((targets[0] - pad) / delta)
    hi_idx = math.ceil((targets[-1] + pad) / delta)
    if hi_idx - lo_idx > 4_000_000:
        raise ValueError("jump kernel refinement too large; coarsen the grid or dt")
    fine = np.arange(lo_idx, hi_idx + 1) * delta

    # Double-exponential jump density sampled on [-reach_down, reach_up].
    ku = math.ceil(37.0 / m.eta_up / delta)
    kd = math.ceil(37.0 / m.eta_down / delta)
    y = np.arange(-kd, ku + 1) * delta
    g = np.where(
        y > 0.0,
        m.p_up * m.eta_up * np.exp(-m.eta_up * y),
        (1.0 - m.p_up) * m.eta_down * np.exp(m.eta_down * y),
    )
    g[kd] = 0.5 * (m.p_up * m.eta_up + (1.0 - m.p_up) * m.eta_down)
    g /= g.sum() * delta

    cdf_n = base_cdf(fine)
    total = weights[0] * cdf_n
    for n in range(1, n_max + 1):
        full = fftconvolve(cdf_n, g) * delta
        cdf_n = np.clip(full[kd : kd + len(fine)], 0.0, 1.0)
        total += weights[n] * cdf_n

    idx = np.round(targets / delta).astype(int) - lo_idx
    return total[idx]


def build_chain(
    m: ModelSpec,
    v_min: float,
    v_max: float,
    n_states: int,
    dt: float,
) -> Chain:
    """Project the law of V over one step of dt onto a log-spaced grid.

    kernel[i, j] is the probability that V, started at states[i], lies in
    grid cell j after dt; cells are delimited by log-midpoints, with the
    outermost cells absorbing all escaped mass.  Rows are renormalised to
    sum to exactly 1.
    """
    if n_states < 1:
        raise ValueError(f"n_states must be >= 1, got {n_states}")
    if not (0.0 < v_min <= v_max) or (n_states >= 2 and v_min >= v_max):
        raise ValueError(f"need 0 < v_min < v_max, got [{v_min}, {v_max}]")
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")

    discount = math.exp(-m.r * dt)
    if n_states == 1:
        return Chain(
            states=np.array([v_min]), kernel=np.array([[1.0]]),
            dt=dt, discount=discount,
        )

    states = np.geomspace(v_min, v_max, n_states)
    h = (math.log(v_max) - math.log(v_min)) / (n_states - 1)

    if m.is_degenerate:
        # Deterministic shift by mu*dt: all row mass in one cell.
        kernel = np.zeros((n_states, n_states))
        shift = m.mu * dt
        for i in range(n_states):
            j = int(np.clip(round(shift / h + i), 0, n_states - 1))
            # round() places the landing point x_i + shift in its cell:
            # cell j covers ((j-0.5)h, (j+0.5)h) around x_i.
            kernel[i, j] = 1.0
        return Chain(states=states, kernel=kernel, dt=dt, discount=discount)

    # Offsets (j - i) run over [2-n, n-1]; CDF needed at ((j-i) - 0.5)*h.
    n = n_states
    cdf = _increment_cdf_at(m, dt, h, 2 - n, n - 1)

    j_idx = np.arange(1, n)[None, :]
    i_idx = np.arange(n)[:, None]
    gathered = cdf[(j_idx - i_idx) - (2 - n)]  # (n, n-1)

    kernel = np.empty((n, n))
    kernel[:, 0] = gathered[:, 0]
    kernel[:, 1 : n - 1] = np.diff(gathered, axis=1)
    kernel[:, n - 1] = 1.0 - gathered[:, n - 2]
    np.maximum(kernel, 0.0, out=kernel)
    kernel[kernel < _ENTRY_FLOOR] = 0.0
    kernel /= kernel.sum(axis=1, keepdims=True)
    return Chain(states=states, kernel=kernel, dt=dt, discount=discount)


def value_iteration(
    ch: Chain,
    p: PayoffSpec,
    clipped: bool = False,
    tol: float = 1e-9,
    max_iter: int = 500_000,
) -> SnellResult:
    """Iterate s <- max(f, discount * kernel @ s) from s0 = max(f, 0).

    Stops when the sup-norm change drops below ``tol``; raises
    ConvergenceError (with the residual) if ``max_iter`` sweeps do not get
    there.  Convergence is geometric with ratio exp(-r*dt).  Seeding at the
    clipped payoff keeps every iterate in [0, c] and makes each sweep
    monotone non-decreasing, which is asserted.

    The contact set uses tolerance max(10*tol, 1e-9) so the fixed-point
    residual cannot mask true contact.
    """
    if not tol > 0.0:
        raise ValueError(f"tol must be > 0, got {tol}")
    f = payoff(p, ch.states, clipped=clipped)
    f = np.atleast_1d(np.asarray(f, dtype=float))
    f_plus = np.maximum(f, 0.0)

    kernel = ch.kernel
    n = kernel.shape[0]
    density = np.count_nonzero(kernel) / max(n * n, 1)
    if n > 128 and density < 0.25:
        from scipy.sparse import csr_matrix

        kernel = csr_matrix(kernel)

    beta = ch.discount
    s = f_plus.copy()
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        s_new = np.maximum(f, beta * (kernel @ s))
        d = s_new - s
        if d.min() < -1e-12:
            raise RuntimeError(
                "value-iteration sweep decreased the iterate; the Bellman "
                "operator should be monotone from the clipped-payoff seed"
            )
        residual = max(float(d.max()), 0.0)
        s = s_new
        if residual < tol:
            break
    else:
        raise ConvergenceError(residual=residual, iterations=max_iter)

    atol = max(10.0 * tol, 1e-9)
    mask = s <= f + atol
    stop_set = frozenset(int(i) for i in np.flatnonzero(mask))
    threshold_index: int | None = None
    if stop_set and max(stop_set) == len(stop_set) - 1:
        threshold_index = max(stop_set)
    return SnellResult(
        values=s,
        stop_set=stop_set,
        threshold_index=threshold_index,
        iterations=iterations,
        residual=residual,
    )


def extract_threshold(res: SnellResult, ch: Chain) -> float:
    """The numerical threshold: the v of the largest state in the stop set.

    Requires the stop set to be a lower interval {0, ..., k}; anything else
    means the computed stopping region is not a threshold rule, which
    indicates a discretisation pathology and raises StructureError naming
    the offending indices.
    """
    if not res.stop_set:
        raise ValueError("stop_set is empty; no threshold to extract")
    idx = sorted(res.stop_set)
    expected = list(range(len(idx)))
    if idx != expected:
        missing = sorted(set(range(idx[-1] + 1)) - set(idx))
        raise StructureError(
            f"stop set is not a lower interval; gaps at indices {missing}"
        )
    return float(ch.states[idx[-1]])


def write_snell_csv(
    path,
    res: SnellResult,
    ch: Chain,
    p: PayoffSpec,
    clipped: bool = False,
) -> None:
    """Export a SnellResult as CSV with columns v,s,f,is_stop.

    Full-precision shortest round-trip decimals, one header row, newline
    line endings; byte-stable across runs for identical inputs.
    """
    f = np.atleast_1d(np.asarray(payoff(p, ch.states, clipped=clipped), dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("v,s,f,is_stop\n")
        for i, v in enumerate(ch.states):
            stop = 1 if i in res.stop_set else 0
            fh.write(
                f"{float(v)!r},{float(res.values[i])!r},{float(f[i])!r},{stop}\n"
            )
