"""Reference solvers: weighted-MMSE alternation and regularized zero-forcing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fp_solver import FpSettings, SolveTrace, matched_filter, solve_power_constrained
from .model_core import SystemConfig, check_dims, total_power, wsr

_MSE_FLOOR = 1e-12


@dataclass
class WmmseSettings(FpSettings):
    pass


def _receivers_and_weights(H: np.ndarray, V: np.ndarray, config: SystemConfig):
    """MMSE receive scalars a_k, their per-user MSE e_k, and weights t_k = w_k / e_k.

    e_k is clamped at a small floor if rounding drives it nonpositive; the
    caller is told so it can flag the trace.
    """
    T = H.conj().T @ V  # T[k, j] = h_k^H v_j
    denom = np.sum(np.abs(T) ** 2, axis=1) + config.sigma2
    a = np.diag(T) / denom
    e = 1.0 - np.real(np.conj(a) * np.diag(T))
    clamped = bool(np.any(e <= 0.0))
    e = np.maximum(e, _MSE_FLOOR)
    t = config.weights / e
    return a, t, clamped


def run_wmmse(
    H: np.ndarray, config: SystemConfig, settings: WmmseSettings | None = None
) -> tuple[np.ndarray, SolveTrace]:
    """Alternate MMSE receivers, MSE weights, and the beamformer until the
    weighted sum rate stalls. Objective and wsr trace columns coincide here."""
    settings = settings or WmmseSettings()
    check_dims(H, config)
    trace = SolveTrace()
    V = matched_filter(H, config.p_max)
    if total_power(V) == 0.0:
        return V, trace
    prev = None
    for it in range(settings.max_iters):
        a, t, clamped = _receivers_and_weights(H, V, config)
        trace.mse_clamped = trace.mse_clamped or clamped
        base = (H * (t * np.abs(a) ** 2)) @ H.conj().T
        rhs = H * (t * a)
        V, _ = solve_power_constrained(base, rhs, config.p_max, settings)
        rate = wsr(H, V, config)
        trace.objective.append(rate)
        trace.wsr.append(rate)
        trace.iterations = it + 1
        if prev is not None and abs(rate - prev) <= settings.rel_tol * max(1.0, abs(prev)):
            trace.converged = True
            break
        prev = rate
    return V, trace


def rzf_beamformer(H: np.ndarray, alpha_reg: float, config: SystemConfig) -> np.ndarray:
    """Regularized zero-forcing: directions (H H^H + alpha I)^{-1} h_k, equal
    per-user power, total power exactly p_max."""
    check_dims(H, config)
    if alpha_reg <= 0:
        raise ConfigurationError(f"alpha_reg must be positive, got {alpha_reg}")
    if total_power(H) == 0.0:
        return np.zeros_like(H)
    dirs = np.linalg.solve(H @ H.conj().T + alpha_reg * np.eye(config.L), H)
    norms = np.linalg.norm(dirs, axis=0)
    if np.any(norms == 0.0):
        # a zero channel column gives a zero direction; leave that user silent
        scale = np.zeros(config.K)
        nz = norms > 0.0
        scale[nz] = np.sqrt(config.p_max / nz.sum()) / norms[nz]
    else:
        scale = np.sqrt(config.p_max / config.K) / norms
    return dirs * scale
