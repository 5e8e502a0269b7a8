"""System model for the multi-user MISO downlink.

Channels are L x K complex matrices H whose k-th column h_k is user k's
channel; beamformers are L x K complex matrices V with column v_k. All rates
are in bit/s/Hz. The transformed objective trades the log-ratio sum for a
quadratic in V via auxiliary variables (g, u), which is what both the
closed-form solver and the unfolded network climb.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

LN2 = float(np.log(2.0))


class ObjectiveMode(enum.Enum):
    # QUADRATIC_ONLY: only the quadratic surrogate terms; at aux-optimal
    # (g, u) its value is sum_k w_k * SINR_k.
    # FULL_LDT: adds the log-minus-linear terms in g and converts to bits;
    # at aux-optimal (g, u) it equals the weighted sum rate exactly.
    QUADRATIC_ONLY = "quadratic_only"
    FULL_LDT = "full_ldt"


@dataclass(frozen=True)
class SystemConfig:
    """Static problem description: sizes, noise power, power budget, weights."""

    L: int
    K: int
    sigma2: float = 1.0
    p_max: float = 10.0
    weights: np.ndarray | None = None
    gamma: float = 0.05
    sigma_h2: float = 0.0
    objective_mode: ObjectiveMode = ObjectiveMode.FULL_LDT

    def __post_init__(self):
        if self.L < 1 or self.K < 1:
            raise ConfigurationError(f"need L >= 1 and K >= 1, got L={self.L} K={self.K}")
        if self.sigma2 <= 0:
            raise ConfigurationError(f"sigma2 must be positive, got {self.sigma2}")
        if self.p_max <= 0:
            raise ConfigurationError(f"p_max must be positive, got {self.p_max}")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.sigma_h2 < 0:
            raise ConfigurationError(f"sigma_h2 must be >= 0, got {self.sigma_h2}")
        w = np.ones(self.K) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (self.K,):
            raise ConfigurationError(f"weights must have shape ({self.K},), got {w.shape}")
        if np.any(w <= 0):
            raise ConfigurationError("weights must be strictly positive")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


@dataclass
class AuxiliaryState:
    """Per-user auxiliary variables of the transformed objective.

    g approximates the SINR (g_k > -1 required by the log term); u is the
    nonnegative real quadratic-transform multiplier.
    """

    g: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.u = np.asarray(self.u, dtype=float)


def check_dims(H: np.ndarray, config: SystemConfig) -> None:
    if H.shape != (config.L, config.K):
        raise ConfigurationError(
            f"channel shape {H.shape} does not match config ({config.L}, {config.K})"
        )


def _abs2_table(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """|h_k^H v_j|^2 as a K x K table (row k, column j)."""
    return np.abs(H.conj().T @ V) ** 2


def signal_power(H: np.ndarray, V: np.ndarray, k: int) -> float:
    """S_k = |h_k^H v_k|^2 for user k (0-based)."""
    if not 0 <= k < H.shape[1]:
        raise ConfigurationError(f"user index {k} out of range for K={H.shape[1]}")
    return float(np.abs(np.vdot(H[:, k], V[:, k])) ** 2)


def interference_plus_noise(H: np.ndarray, V: np.ndarray, sigma2: float, k: int) -> float:
    """I_k = sum_{j != k} |h_k^H v_j|^2 + sigma2."""
    if not 0 <= k < H.shape[1]:
        raise ConfigurationError(f"user index {k} out of range for K={H.shape[1]}")
    row = np.abs(H[:, k].conj() @ V) ** 2
    return float(row.sum() - row[k] + sigma2)


def sinr(H: np.ndarray, V: np.ndarray, sigma2: float, k: int) -> float:
    return signal_power(H, V, k) / interference_plus_noise(H, V, sigma2, k)


def sinr_all(H: np.ndarray, V: np.ndarray, sigma2: float) -> np.ndarray:
    """All K SINRs at once."""
    table = _abs2_table(H, V)
    s = np.diag(table)
    i = table.sum(axis=1) - s + sigma2
    return s / i


def wsr(H: np.ndarray, V: np.ndarray, config: SystemConfig) -> float:
    """Weighted sum rate sum_k w_k log2(1 + SINR_k)."""
    check_dims(H, config)
    check_dims(V, config)
    return float(np.sum(config.weights * np.log2(1.0 + sinr_all(H, V, config.sigma2))))


def _split_powers(table: np.ndarray, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    s = np.diagonal(table, axis1=-2, axis2=-1)
    i = table.sum(axis=-1) - s + sigma2
    return s, i


def _quad_terms(s, i, g, u, w):
    # 2 u_k sqrt(w_k (1+g_k) S_k) - u_k^2 (S_k + I_k), summed over k
    return np.sum(2.0 * u * np.sqrt(w * (1.0 + g) * s) - u**2 * (s + i), axis=-1)


def _ldt_log_terms(g, w) -> float:
    return float(np.sum(w * (np.log1p(g) - g)))


def qt_objective(H: np.ndarray, V: np.ndarray, aux: AuxiliaryState, config: SystemConfig) -> float:
    """Transformed objective at fixed (g, u).

    QUADRATIC_ONLY returns the plain quadratic surrogate; FULL_LDT adds
    sum_k w_k (ln(1+g_k) - g_k) and divides by ln 2 so that at aux-optimal
    (g, u) the value equals wsr(H, V) in bits.
    """
    check_dims(H, config)
    check_dims(V, config)
    if np.any(aux.g <= -1.0):
        raise ConfigurationError("aux.g has entries <= -1; log term undefined")
    s, i = _split_powers(_abs2_table(H, V), config.sigma2)
    quad = float(_quad_terms(s, i, aux.g, aux.u, config.weights))
    if config.objective_mode is ObjectiveMode.QUADRATIC_ONLY:
        return quad
    return (quad + _ldt_log_terms(aux.g, config.weights)) / LN2


def qt_objective_samples(
    channels: np.ndarray, V: np.ndarray, aux: AuxiliaryState, config: SystemConfig
) -> np.ndarray:
    """qt_objective evaluated per channel in a (B, L, K) stack, (g, u, V) fixed."""
    if np.any(aux.g <= -1.0):
        raise ConfigurationError("aux.g has entries <= -1; log term undefined")
    table = np.abs(np.einsum("blk,lj->bkj", channels.conj(), V)) ** 2
    s, i = _split_powers(table, config.sigma2)
    quad = _quad_terms(s, i, aux.g[None, :], aux.u[None, :], config.weights[None, :])
    if config.objective_mode is ObjectiveMode.QUADRATIC_ONLY:
        return quad
    return (quad + _ldt_log_terms(aux.g, config.weights)) / LN2


def wsr_samples(channels: np.ndarray, V: np.ndarray, config: SystemConfig) -> np.ndarray:
    """wsr evaluated per channel in a (B, L, K) stack with V fixed."""
    table = np.abs(np.einsum("blk,lj->bkj", channels.conj(), V)) ** 2
    s, i = _split_powers(table, config.sigma2)
    return np.sum(config.weights[None, :] * np.log2(1.0 + s / i), axis=-1)


def total_power(V: np.ndarray) -> float:
    return float(np.sum(np.abs(V) ** 2))


def project_power(V: np.ndarray, p_max: float) -> np.ndarray:
    """Scale V onto the ball tr(V V^H) <= p_max; identity when already inside.

    Points within 1e-12 relative of the boundary count as inside, so feasible
    inputs (and boundary points produced by the scaling itself) pass through
    unchanged and the map is idempotent.
    """
    p = total_power(V)
    if p <= p_max * (1.0 + 1e-12):
        return V
    return V * np.sqrt(p_max / p)
