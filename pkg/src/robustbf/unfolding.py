"""Unfolded projected-gradient network over the quadratic surrogate.

Each of the M layers refreshes the auxiliary pair (g, u) from its incoming
beamformer in closed form, then runs N projected-gradient ascent steps on the
quadratic surrogate with per-step trainable sizes mu[m, n]. The layer count
and step count are architecture, the step sizes are the parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .model_core import (
    AuxiliaryState,
    SystemConfig,
    check_dims,
    project_power,
    total_power,
    _abs2_table,
    _split_powers,
)

SCHEDULE_HEADER = re.compile(r"^# UI-DUFP schedule M=(\d+) N=(\d+)$")


@dataclass
class StepSizeSchedule:
    """Trainable step sizes, one per (layer, inner step)."""

    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.mu.ndim != 2:
            raise ConfigurationError(f"schedule must be 2-d (M, N), got shape {self.mu.shape}")
        if self.mu.shape[0] < 1:
            raise ConfigurationError("schedule needs at least one layer")

    @property
    def M(self) -> int:
        return self.mu.shape[0]

    @property
    def N(self) -> int:
        return self.mu.shape[1]

    @classmethod
    def ones(cls, M: int, N: int) -> "StepSizeSchedule":
        return cls(mu=np.ones((M, N)))


def save_schedule(path, schedule: StepSizeSchedule) -> None:
    lines = [f"# UI-DUFP schedule M={schedule.M} N={schedule.N}"]
    for row in schedule.mu:
        lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_schedule(path) -> StepSizeSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ConfigurationError(f"{path}: empty schedule file")
    m = SCHEDULE_HEADER.match(lines[0])
    if m is None:
        raise ConfigurationError(f"{path}: bad schedule header {lines[0]!r}")
    M, N = int(m.group(1)), int(m.group(2))
    rows = lines[1 : 1 + M]
    if len(rows) < M or any(l.strip() for l in lines[1 + M :]):
        raise ConfigurationError(f"{path}: expected exactly {M} step-size rows")
    mu = np.empty((M, N))
    for i, row in enumerate(rows):
        vals = row.split()
        if len(vals) != N:
            raise ConfigurationError(f"{path}: row {i + 1} has {len(vals)} values, expected {N}")
        mu[i] = [float(v) for v in vals]
    return StepSizeSchedule(mu=mu)


@dataclass
class UnfoldTrace:
    """Per-layer aux values and post-step beamformers; final = layer_outputs[-1]."""

    g: np.ndarray  # (M, K)
    u: np.ndarray  # (M, K)
    layer_outputs: list
    final: np.ndarray

    def aux(self, m: int = -1) -> AuxiliaryState:
        return AuxiliaryState(g=self.g[m], u=self.u[m])


# forward internals recorded for the training backward pass
@dataclass
class StepRecord:
    v_prev: np.ndarray
    grad_dir: np.ndarray
    scaled: bool
    norm2: float  # squared Frobenius norm of the pre-projection point


@dataclass
class LayerRecord:
    v_in: np.ndarray
    t_in: np.ndarray  # h_k^H v_j table at the layer input
    s: np.ndarray
    i: np.ndarray
    g: np.ndarray
    u: np.ndarray
    base: np.ndarray  # sum_j u_j^2 h_j h_j^H
    rhs: np.ndarray  # columns sqrt(w_k (1+g_k)) u_k h_k
    steps: list = field(default_factory=list)
    v_out: np.ndarray | None = None


def init_beamformer(H: np.ndarray, p_max: float) -> np.ndarray:
    """Matched-filter start V0 = alpha H with tr(V0 V0^H) = p_max."""
    tr = total_power(H)
    if tr == 0.0:
        return np.zeros_like(H)
    return H * np.sqrt(p_max / tr)


def grad_v_objective(
    H: np.ndarray, V: np.ndarray, aux: AuxiliaryState, config: SystemConfig
) -> np.ndarray:
    """Conjugate-coordinate gradient of the quadratic surrogate at fixed (g, u).

    Column k is sqrt(w_k (1+g_k)) u_k h_k - (sum_j u_j^2 h_j h_j^H) v_k. A
    real-coordinate derivative pair (d/dx, d/dy) corresponds to 2 (Re, Im) of
    this matrix.
    """
    check_dims(H, config)
    check_dims(V, config)
    base = (H * aux.u**2) @ H.conj().T
    rhs = H * (np.sqrt(config.weights * (1.0 + aux.g)) * aux.u)
    return rhs - base @ V


def pgd_step(
    H: np.ndarray, V: np.ndarray, aux: AuxiliaryState, mu: float, config: SystemConfig
) -> np.ndarray:
    """One ascent step followed by the power projection."""
    return project_power(V + mu * grad_v_objective(H, V, aux, config), config.p_max)


def _unfold(H, schedule, config, record: bool):
    check_dims(H, config)
    M, N, K = schedule.M, schedule.N, config.K
    V = init_beamformer(H, config.p_max)
    g_all = np.empty((M, K))
    u_all = np.empty((M, K))
    outputs = []
    tape = [] if record else None
    Hc = H.conj().T
    for m in range(M):
        t_in = Hc @ V
        s, i = _split_powers(np.abs(t_in) ** 2, config.sigma2)
        g = s / i
        u = np.sqrt(config.weights * (1.0 + g) * s) / (s + i)
        g_all[m], u_all[m] = g, u
        base = (H * u**2) @ Hc
        rhs = H * (np.sqrt(config.weights * (1.0 + g)) * u)
        rec = None
        if record:
            rec = LayerRecord(v_in=V, t_in=t_in, s=s, i=i, g=g, u=u, base=base, rhs=rhs)
            tape.append(rec)
        for n in range(N):
            grad = rhs - base @ V
            W = V + schedule.mu[m, n] * grad
            norm2 = total_power(W)
            scaled = norm2 > config.p_max * (1.0 + 1e-12)  # same slack as project_power
            V_next = W * np.sqrt(config.p_max / norm2) if scaled else W
            if record:
                rec.steps.append(
                    StepRecord(v_prev=V, grad_dir=grad, scaled=scaled, norm2=norm2)
                )
            V = V_next
        if record:
            rec.v_out = V
        outputs.append(V)
    trace = UnfoldTrace(g=g_all, u=u_all, layer_outputs=outputs, final=V)
    return trace, tape


def forward(H: np.ndarray, schedule: StepSizeSchedule, config: SystemConfig) -> UnfoldTrace:
    """Run the unfolded network on one channel."""
    trace, _ = _unfold(H, schedule, config, record=False)
    return trace


def forward_with_tape(H, schedule, config) -> tuple[UnfoldTrace, list]:
    """Forward pass that also returns the internals the backward pass consumes."""
    return _unfold(H, schedule, config, record=True)
