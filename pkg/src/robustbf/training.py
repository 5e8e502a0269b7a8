"""Step-size training against a quantile loss over sampled channel errors.

The loss feeds every layer's beamformer (deep supervision): for each training
channel and layer, the transformed objective is evaluated on B perturbed
copies of the channel with the layer's (V, g, u) held fixed, and the
gamma-quantile of those B values is what gets maximized. Gradients w.r.t. the
step sizes come either from a hand-rolled reverse-mode pass through the
unfolded graph (Analytic) or from central finite differences
(FiniteDifference); both are fully supported paths and must agree.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .channel import inject_uncertainty, sample_channels, substream
from .errors import ConfigurationError, TrainingError
from .model_core import (
    LN2,
    ObjectiveMode,
    SystemConfig,
    qt_objective,
    qt_objective_samples,
)
from .unfolding import StepSizeSchedule, UnfoldTrace, forward, forward_with_tape, save_schedule


class LossMode(enum.Enum):
    STANDARD = "standard"  # nominal channel only
    ROBUST_QUANTILE = "robust_quantile"  # gamma-quantile over perturbed channels


class GradMode(enum.Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batches: int = 8000
    batch_size: int = 64
    B: int = 1000
    gamma: float = 0.05
    loss_mode: LossMode = LossMode.ROBUST_QUANTILE
    grad_mode: GradMode = GradMode.ANALYTIC
    seed: int = 0
    eval_every: int = 50
    eval_batches: int = 50
    eval_batch_size: int = 64
    checkpoint_every: int = 500


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0)


@dataclass
class TrainHistory:
    batch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    heldout_robust_wsr: list = field(default_factory=list)  # None when not evaluated

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("batch,loss,heldout_robust_wsr\n")
            for b, l, h in zip(self.batch, self.loss, self.heldout_robust_wsr):
                tail = "" if h is None else repr(float(h))
                fh.write(f"{b},{float(l)!r},{tail}\n")


def quantile_select(values, gamma: float) -> tuple[float, int]:
    """Value and original index of the ceil(gamma*B)-th smallest entry.

    Integer products survive float noise (0.05 * 1000 selects rank 50), and
    ties resolve to the lowest original index holding the selected value.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ConfigurationError(f"need a nonempty 1-d value list, got shape {v.shape}")
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in (0, 1], got {gamma}")
    rank = min(v.size, max(1, math.ceil(gamma * v.size - 1e-9)))
    order = np.argsort(v, kind="stable")
    val = v[order[rank - 1]]
    idx = int(np.flatnonzero(v == val)[0])
    return float(val), idx


def standard_loss(trace: UnfoldTrace, H: np.ndarray, config: SystemConfig) -> float:
    """Negated sum over layers of the objective on the nominal channel."""
    total = 0.0
    for m, V in enumerate(trace.layer_outputs):
        total += qt_objective(H, V, trace.aux(m), config)
    return -total


def robust_loss(traces, batches, config: SystemConfig, gamma: float | None = None) -> float:
    """Negated per-layer gamma-quantiles over each channel's perturbed copies,
    averaged over the channel batch."""
    gamma = config.gamma if gamma is None else gamma
    if len(traces) != len(batches):
        raise ConfigurationError("one uncertainty batch per trace is required")
    total = 0.0
    for trace, batch in zip(traces, batches):
        for m, V in enumerate(trace.layer_outputs):
            vals = qt_objective_samples(batch.samples, V, trace.aux(m), config)
            val, _ = quantile_select(vals, gamma)
            total -= val
    return total / len(traces)


# ---------------------------------------------------------------------------
# shared forward-loss evaluation (single code path for both gradient modes)
# ---------------------------------------------------------------------------


def _forward_loss(schedule, channels, ubatches, cfg, loss_mode, gamma, with_tape):
    """Batch loss; optionally also the tapes and per-layer selected channels."""
    if loss_mode is LossMode.ROBUST_QUANTILE:
        if ubatches is None or len(ubatches) != len(channels):
            raise ConfigurationError("quantile loss needs one uncertainty batch per channel")
    total = 0.0
    tapes, selections = [], []
    for c_idx, H in enumerate(channels):
        if with_tape:
            trace, tape = forward_with_tape(H, schedule, cfg)
        else:
            trace, tape = forward(H, schedule, cfg), None
        sel = []
        for m, V in enumerate(trace.layer_outputs):
            if loss_mode is LossMode.ROBUST_QUANTILE:
                vals = qt_objective_samples(ubatches[c_idx].samples, V, trace.aux(m), cfg)
                val, idx = quantile_select(vals, gamma)
                sel.append(ubatches[c_idx].samples[idx])
            else:
                val = qt_objective(H, V, trace.aux(m), cfg)
                sel.append(H)
            total -= val
        tapes.append(tape)
        selections.append(sel)
    return total / len(channels), tapes, selections


# ---------------------------------------------------------------------------
# reverse-mode gradient through the unfolded graph
# ---------------------------------------------------------------------------


def _rq_vjp(Hs: np.ndarray, V: np.ndarray, g: np.ndarray, u: np.ndarray, cfg: SystemConfig):
    """Objective value at fixed (V, g, u) on channel Hs and its cotangents.

    Returns (value, dV, dg, du); dV is the conjugate-coordinate cotangent,
    dg/du are plain real gradients.
    """
    w = cfg.weights
    K = cfg.K
    T = Hs.conj().T @ V
    A2 = np.abs(T) ** 2
    s = np.diagonal(A2).copy()
    i = A2.sum(axis=1) - s + cfg.sigma2
    c = np.sqrt(w * (1.0 + g))
    diag = np.diagonal(T)
    mod = np.abs(diag)
    quad = float(np.sum(2.0 * u * c * mod - u**2 * (s + i)))

    phase = np.zeros_like(diag)
    nz = mod > 0
    phase[nz] = diag[nz] / mod[nz]
    coef = -(u**2)[:, None] * T
    coef[np.arange(K), np.arange(K)] += c * u * phase
    dV = Hs @ coef
    du = 2.0 * c * mod - 2.0 * u * (s + i)
    dg = u * mod * w / c

    if cfg.objective_mode is ObjectiveMode.FULL_LDT:
        value = (quad + float(np.sum(w * (np.log1p(g) - g)))) / LN2
        dV = dV / LN2
        du = du / LN2
        dg = (dg - w * g / (1.0 + g)) / LN2
    else:
        value = quad
    return value, dV, dg, du


def _backward_channel(H, tape, mu, selected, cfg, coef):
    """d(loss)/d(mu) contribution of one channel.

    `selected[m]` is the channel the layer-m loss term was evaluated on;
    `coef` is d(loss)/d(term value), i.e. -1/num_channels for the negated
    average. Walks layers and steps in reverse, carrying the conjugate
    cotangent of the beamformer.
    """
    M, N = mu.shape
    grad_mu = np.zeros((M, N))
    cot_v = np.zeros_like(H)
    eye = np.arange(cfg.K)
    for m in range(M - 1, -1, -1):
        rec = tape[m]
        _, dV, dg, du = _rq_vjp(selected[m], rec.v_out, rec.g, rec.u, cfg)
        cot_v = cot_v + coef * dV
        cot_g = coef * dg
        cot_u = coef * du
        c = np.sqrt(cfg.weights * (1.0 + rec.g))
        for n in range(len(rec.steps) - 1, -1, -1):
            st = rec.steps[n]
            mu_mn = mu[m, n]
            if st.scaled:
                W = st.v_prev + mu_mn * st.grad_dir  # recomputed, matches forward
                beta = np.sqrt(cfg.p_max / st.norm2)
                kappa = np.vdot(cot_v, W)
                cot_w = beta * (cot_v - (kappa.real / st.norm2) * W)
            else:
                cot_w = cot_v
            grad_mu[m, n] += 2.0 * np.real(np.vdot(cot_w, st.grad_dir))
            # W = (I - mu A) V + mu P; A Hermitian
            cot_v = cot_w - mu_mn * (rec.base @ cot_w)
            # through P = H diag(c u): columns c_k u_k h_k
            q = 2.0 * mu_mn * np.real(np.einsum("lk,lk->k", cot_w.conj(), H))
            cot_u = cot_u + q * c
            cot_g = cot_g + q * rec.u * c / (2.0 * (1.0 + rec.g))
            # through A = sum_j u_j^2 h_j h_j^H applied to v_prev
            X = cot_w.conj().T @ H
            R = H.conj().T @ st.v_prev
            inner = np.sum(X.T * R, axis=1)
            cot_u = cot_u - 4.0 * mu_mn * rec.u * np.real(inner)
        # aux block: g = s/i and u = c sqrt(s)/(s+i) from the layer input
        s, i, g, u = rec.s, rec.i, rec.g, rec.u
        cg = cot_g + cot_u * u / (2.0 * (1.0 + g))
        safe = s > 0
        sqrt_s = np.sqrt(np.where(safe, s, 1.0))
        du_ds = np.where(safe, c * (i - s) / (2.0 * sqrt_s * (s + i) ** 2), 0.0)
        du_di = -c * sqrt_s / (s + i) ** 2
        cot_s = np.where(safe, cg / i + cot_u * du_ds, 0.0)
        cot_i = -cg * s / i**2 + cot_u * du_di
        Rcoef = np.repeat(cot_i[:, None], cfg.K, axis=1)
        Rcoef[eye, eye] = cot_s
        cot_v = cot_v + H @ (Rcoef * rec.t_in)
    return grad_mu


def _analytic_grad(schedule, channels, ubatches, cfg, loss_mode, gamma):
    loss, tapes, selections = _forward_loss(
        schedule, channels, ubatches, cfg, loss_mode, gamma, with_tape=True
    )
    grad = np.zeros_like(schedule.mu)
    coef = -1.0 / len(channels)
    for H, tape, sel in zip(channels, tapes, selections):
        grad += _backward_channel(H, tape, schedule.mu, sel, cfg, coef)
    return loss, grad


def _fd_grad(schedule, channels, ubatches, cfg, loss_mode, gamma):
    base, _, _ = _forward_loss(schedule, channels, ubatches, cfg, loss_mode, gamma, False)
    grad = np.zeros_like(schedule.mu)
    mu = schedule.mu
    for m in range(mu.shape[0]):
        for n in range(mu.shape[1]):
            h = 1e-5 * max(1.0, abs(mu[m, n]))
            for sign in (1.0, -1.0):
                probe = mu.copy()
                probe[m, n] += sign * h
                val, _, _ = _forward_loss(
                    StepSizeSchedule(mu=probe), channels, ubatches, cfg, loss_mode, gamma, False
                )
                grad[m, n] += sign * val
            grad[m, n] /= 2.0 * h
    return base, grad


def grad_schedule(
    schedule: StepSizeSchedule,
    channels,
    ubatches,
    sys_config: SystemConfig,
    *,
    loss_mode: LossMode = LossMode.ROBUST_QUANTILE,
    grad_mode: GradMode = GradMode.ANALYTIC,
    gamma: float | None = None,
) -> tuple[float, np.ndarray]:
    """Batch loss and its gradient w.r.t. every step size."""
    gamma = sys_config.gamma if gamma is None else gamma
    if grad_mode is GradMode.ANALYTIC:
        return _analytic_grad(schedule, channels, ubatches, sys_config, loss_mode, gamma)
    return _fd_grad(schedule, channels, ubatches, sys_config, loss_mode, gamma)


# ---------------------------------------------------------------------------
# optimizer and the training loop
# ---------------------------------------------------------------------------

_BETA1, _BETA2, _EPS = 0.9, 0.999, 1e-8


def adam_step(
    schedule: StepSizeSchedule, grad: np.ndarray, state: AdamState, learning_rate: float
) -> tuple[StepSizeSchedule, AdamState]:
    """One bias-corrected Adam update; pure, returns fresh objects."""
    t = state.step + 1
    m = _BETA1 * state.m + (1.0 - _BETA1) * grad
    v = _BETA2 * state.v + (1.0 - _BETA2) * grad**2
    m_hat = m / (1.0 - _BETA1**t)
    v_hat = v / (1.0 - _BETA2**t)
    mu = schedule.mu - learning_rate * m_hat / (np.sqrt(v_hat) + _EPS)
    return StepSizeSchedule(mu=mu), AdamState(m=m, v=v, step=t)


def heldout_robust_wsr(schedule, channels, ubatches, cfg: SystemConfig, gamma: float) -> float:
    """Mean over channels of the quantile of the objective at the final layer,
    each channel scored on its own fixed uncertainty batch."""
    total = 0.0
    for H, batch in zip(channels, ubatches):
        trace = forward(H, schedule, cfg)
        vals = qt_objective_samples(batch.samples, trace.final, trace.aux(-1), cfg)
        val, _ = quantile_select(vals, gamma)
        total += val
    return total / len(channels)


def train(
    train_config: TrainConfig,
    sys_config: SystemConfig,
    unfold_dims: tuple[int, int],
    checkpoint_dir=None,
) -> tuple[StepSizeSchedule, TrainHistory]:
    """Adam on the step sizes from the all-ones start.

    Fresh channels and fresh error draws every batch; held-out evaluation on a
    fixed set every eval_every batches (and on the last batch). Non-finite
    loss or gradient raises TrainingError naming the offending batch.
    """
    M, N = unfold_dims
    tc = train_config
    cfg = sys_config
    schedule = StepSizeSchedule.ones(M, N)
    state = AdamState.zeros((M, N))
    history = TrainHistory()

    n_eval = tc.eval_batches * tc.eval_batch_size
    eval_channels = sample_channels(substream(tc.seed, "heldout-ch"), cfg.L, cfg.K, n_eval)
    eval_ubatches = [
        inject_uncertainty(eval_channels[i], cfg.sigma_h2, tc.B, substream(tc.seed, "heldout-unc", i))
        for i in range(n_eval)
    ]

    for b in range(tc.batches):
        channels = sample_channels(
            substream(tc.seed, "train-ch", b), cfg.L, cfg.K, tc.batch_size
        )
        ubatches = None
        if tc.loss_mode is LossMode.ROBUST_QUANTILE:
            ubatches = [
                inject_uncertainty(
                    channels[c], cfg.sigma_h2, tc.B, substream(tc.seed, "train-unc", b, c)
                )
                for c in range(tc.batch_size)
            ]
        loss, grad = grad_schedule(
            schedule, channels, ubatches, cfg,
            loss_mode=tc.loss_mode, grad_mode=tc.grad_mode, gamma=tc.gamma,
        )
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite loss/gradient at batch {b} (seed {tc.seed})")
        schedule, state = adam_step(schedule, grad, state, tc.learning_rate)

        held = None
        if (b + 1) % tc.eval_every == 0 or b == tc.batches - 1:
            held = heldout_robust_wsr(schedule, eval_channels, eval_ubatches, cfg, tc.gamma)
        history.batch.append(b)
        history.loss.append(float(loss))
        history.heldout_robust_wsr.append(held)

        if checkpoint_dir is not None and (b + 1) % tc.checkpoint_every == 0:
            save_schedule(
                os.path.join(checkpoint_dir, f"checkpoint_{b + 1:06d}.txt"), schedule
            )
    return schedule, history
