"""Closed-form alternating solver for the transformed weighted-sum-rate objective.

Each round updates the ratio variable g, the quadratic multiplier u, and then
the beamformer V in closed form; the power constraint enters through a scalar
multiplier nu found by bisection on the (strictly decreasing) transmit power.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SolverError
from .model_core import (
    AuxiliaryState,
    ObjectiveMode,
    SystemConfig,
    check_dims,
    qt_objective,
    sinr_all,
    total_power,
    wsr,
    _abs2_table,
    _split_powers,
)

# eigenvalue floor below which the aux-weighted Gram matrix counts as singular
_SINGULAR_FLOOR = 1e-12


@dataclass
class FpSettings:
    max_iters: int = 100
    rel_tol: float = 1e-6
    bisect_tol: float = 1e-8  # relative gap between achieved and budgeted power
    bisect_max_steps: int = 200


@dataclass
class SolveTrace:
    """Per-round objective (bits) and weighted sum rate, plus exit bookkeeping."""

    objective: list = field(default_factory=list)
    wsr: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    mse_clamped: bool = False  # only ever set by the WMMSE baseline


def update_g(H: np.ndarray, V: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Ratio update: g_k = S_k / I_k, the current SINR."""
    check_dims(H, config)
    check_dims(V, config)
    return sinr_all(H, V, config.sigma2)


def update_u(H: np.ndarray, V: np.ndarray, g: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Multiplier update: u_k = sqrt(w_k (1+g_k) S_k) / (S_k + I_k)."""
    check_dims(H, config)
    check_dims(V, config)
    s, i = _split_powers(_abs2_table(H, V), config.sigma2)
    return np.sqrt(config.weights * (1.0 + g) * s) / (s + i)


def _gram_and_rhs(H: np.ndarray, u: np.ndarray, g: np.ndarray, config: SystemConfig):
    base = (H * u**2) @ H.conj().T
    rhs = H * (np.sqrt(config.weights * (1.0 + g)) * u)
    return base, rhs


def solve_v_given_nu(
    H: np.ndarray, u: np.ndarray, g: np.ndarray, nu: float, config: SystemConfig
) -> np.ndarray:
    """v_k = sqrt(w_k (1+g_k)) u_k (sum_j u_j^2 h_j h_j^H + nu I)^{-1} h_k."""
    check_dims(H, config)
    base, rhs = _gram_and_rhs(H, u, g, config)
    return np.linalg.solve(base + nu * np.eye(config.L), rhs)


def _power_at(base: np.ndarray, rhs: np.ndarray, nu: float) -> float:
    V = np.linalg.solve(base + nu * np.eye(base.shape[0]), rhs)
    return total_power(V)


def solve_power_constrained(
    base: np.ndarray, rhs: np.ndarray, p_max: float, settings: FpSettings
) -> tuple[np.ndarray, float]:
    """Smallest nu >= 0 with tr(V V^H) <= p_max for V(nu) = (base + nu I)^{-1} rhs.

    Returns (V(nu), nu). When the constraint binds, the achieved power lands in
    [p_max (1 - bisect_tol), p_max]; ties resolve to the feasible endpoint.
    """
    L = base.shape[0]
    if not np.any(rhs):
        return np.zeros_like(rhs), 0.0
    evals = np.linalg.eigvalsh(base)
    if evals[0] > _SINGULAR_FLOOR * max(evals[-1], _SINGULAR_FLOOR):
        if _power_at(base, rhs, 0.0) <= p_max:
            return np.linalg.solve(base, rhs), 0.0
    lo, hi = 0.0, 1.0
    doublings = 0
    while _power_at(base, rhs, hi) > p_max:
        lo, hi = hi, hi * 2.0
        doublings += 1
        if doublings > 400:
            raise SolverError(f"power bracket did not close: nu={hi:.3e} still infeasible")
    for _ in range(settings.bisect_max_steps):
        p_hi = _power_at(base, rhs, hi)
        if p_max - p_hi <= settings.bisect_tol * p_max:
            break
        if hi - lo <= 1e-15 * max(1.0, hi):
            break  # interval exhausted; hi is feasible, constraint just not tight
        mid = 0.5 * (lo + hi)
        if _power_at(base, rhs, mid) > p_max:
            lo = mid
        else:
            hi = mid
    else:
        raise SolverError(
            f"power bisection did not converge in {settings.bisect_max_steps} steps "
            f"(nu in [{lo:.6e}, {hi:.6e}], power gap {p_max - _power_at(base, rhs, hi):.3e})"
        )
    return np.linalg.solve(base + hi * np.eye(L), rhs), hi


def find_nu(
    H: np.ndarray, u: np.ndarray, g: np.ndarray, p_max: float, settings: FpSettings | None = None
) -> float:
    """Power multiplier for the closed-form V-update (bisection on power)."""
    settings = settings or FpSettings()
    cfg = SystemConfig(L=H.shape[0], K=H.shape[1], p_max=p_max)
    base, rhs = _gram_and_rhs(H, u, g, cfg)
    _, nu = solve_power_constrained(base, rhs, p_max, settings)
    return nu


def matched_filter(H: np.ndarray, p_max: float) -> np.ndarray:
    """Full-power scaled conjugate beamformer; zero matrix for a zero channel."""
    tr = total_power(H)
    if tr == 0.0:
        return np.zeros_like(H)
    return H * np.sqrt(p_max / tr)


def run_fp(
    H: np.ndarray,
    config: SystemConfig,
    settings: FpSettings | None = None,
    v_init: np.ndarray | None = None,
) -> tuple[np.ndarray, AuxiliaryState, SolveTrace]:
    """Alternate (g, u, V) updates until the objective stalls or max_iters."""
    settings = settings or FpSettings()
    check_dims(H, config)
    trace = SolveTrace()
    V = matched_filter(H, config.p_max) if v_init is None else np.array(v_init, dtype=complex)
    if total_power(V) == 0.0:
        # degenerate start (or zero channel): fall back to the matched filter
        V = matched_filter(H, config.p_max)
    if total_power(V) == 0.0:
        aux = AuxiliaryState(g=np.zeros(config.K), u=np.zeros(config.K))
        return V, aux, trace
    aux = AuxiliaryState(g=np.zeros(config.K), u=np.zeros(config.K))
    # the trace always records the full LDT objective in bits, whatever the
    # configured mode, so ascent is comparable across runs
    trace_cfg = dataclasses.replace(config, objective_mode=ObjectiveMode.FULL_LDT)
    prev = None
    for it in range(settings.max_iters):
        g = update_g(H, V, config)
        u = update_u(H, V, g, config)
        base, rhs = _gram_and_rhs(H, u, g, config)
        V, _ = solve_power_constrained(base, rhs, config.p_max, settings)
        aux = AuxiliaryState(g=g, u=u)
        obj = qt_objective(H, V, aux, trace_cfg)
        trace.objective.append(obj)
        trace.wsr.append(wsr(H, V, config))
        trace.iterations = it + 1
        if prev is not None and abs(obj - prev) <= settings.rel_tol * max(1.0, abs(prev)):
            trace.converged = True
            break
        prev = obj
    return V, aux, trace
