import numpy as np
import pytest

from robustbf.errors import ConfigurationError
from robustbf.model_core import (
    AuxiliaryState,
    ObjectiveMode,
    SystemConfig,
    interference_plus_noise,
    project_power,
    qt_objective,
    qt_objective_samples,
    signal_power,
    sinr,
    sinr_all,
    total_power,
    wsr,
    wsr_samples,
)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


# -- scalar-loop oracles, deliberately independent of the vectorized code --

def signal_power_loop(H, V, k):
    acc = 0.0 + 0.0j
    for l in range(H.shape[0]):
        acc += np.conj(H[l, k]) * V[l, k]
    return abs(acc) ** 2


def interference_loop(H, V, sigma2, k):
    out = sigma2
    for j in range(V.shape[1]):
        if j == k:
            continue
        acc = 0.0 + 0.0j
        for l in range(H.shape[0]):
            acc += np.conj(H[l, k]) * V[l, j]
        out += abs(acc) ** 2
    return out


def aux_optimal(H, V, cfg):
    g = sinr_all(H, V, cfg.sigma2)
    s = np.array([signal_power(H, V, k) for k in range(cfg.K)])
    i = np.array([interference_plus_noise(H, V, cfg.sigma2, k) for k in range(cfg.K)])
    u = np.sqrt(cfg.weights * (1.0 + g) * s) / (s + i)
    return AuxiliaryState(g=g, u=u)


def test_signal_power_hand_cases():
    H = np.array([[1.0 + 0j]])
    V = np.array([[2.0 + 0j]])
    assert signal_power(H, V, 0) == pytest.approx(4.0)
    # orthogonal beam carries no signal
    H2 = np.array([[1.0], [0.0]], dtype=complex)
    V2 = np.array([[0.0], [1.0]], dtype=complex)
    assert signal_power(H2, V2, 0) == 0.0


def test_signal_power_matches_loop():
    rng = np.random.default_rng(11)
    for _ in range(30):
        H, V = crandn(rng, 4, 4), crandn(rng, 4, 4)
        for k in range(4):
            assert signal_power(H, V, k) == pytest.approx(signal_power_loop(H, V, k), rel=1e-12)


def test_interference_hand_cases():
    H = crandn(np.random.default_rng(0), 3, 1)
    V = crandn(np.random.default_rng(1), 3, 1)
    # single user: no interference, only noise
    assert interference_plus_noise(H, V, 1.7, 0) == pytest.approx(1.7)
    Hk = crandn(np.random.default_rng(2), 3, 4)
    assert interference_plus_noise(Hk, np.zeros((3, 4), dtype=complex), 2.5, 1) == pytest.approx(2.5)


def test_interference_matches_loop():
    rng = np.random.default_rng(12)
    for _ in range(30):
        H, V = crandn(rng, 4, 4), crandn(rng, 4, 4)
        for k in range(4):
            assert interference_plus_noise(H, V, 1.0, k) == pytest.approx(
                interference_loop(H, V, 1.0, k), rel=1e-12
            )


def test_sinr_single_user_full_power():
    rng = np.random.default_rng(3)
    h = crandn(rng, 5, 1)
    p = 8.0
    v = np.sqrt(p) * h / np.linalg.norm(h)
    got = sinr(h, v, 1.0, 0)
    assert got == pytest.approx(p * np.linalg.norm(h) ** 2, rel=1e-12)


def test_sinr_zero_beam_and_composition():
    rng = np.random.default_rng(4)
    H, V = crandn(rng, 4, 3), crandn(rng, 4, 3)
    V[:, 1] = 0.0
    assert sinr(H, V, 1.0, 1) == 0.0
    for k in range(3):
        assert sinr(H, V, 1.0, k) == pytest.approx(
            signal_power_loop(H, V, k) / interference_loop(H, V, 1.0, k), rel=1e-12
        )
    np.testing.assert_allclose(
        sinr_all(H, V, 1.0), [sinr(H, V, 1.0, k) for k in range(3)], rtol=1e-12
    )


def test_wsr_hand_cases():
    cfg = SystemConfig(L=2, K=2, sigma2=1.0, p_max=4.0)
    H = crandn(np.random.default_rng(5), 2, 2)
    assert wsr(H, np.zeros((2, 2), dtype=complex), cfg) == 0.0
    # single user with SINR 3 gives exactly 2 bits
    cfg1 = SystemConfig(L=1, K=1, sigma2=1.0, p_max=4.0)
    H1 = np.array([[1.0 + 0j]])
    V1 = np.array([[np.sqrt(3.0) + 0j]])
    assert wsr(H1, V1, cfg1) == pytest.approx(2.0, abs=1e-12)


def test_wsr_matches_per_user_loop():
    rng = np.random.default_rng(6)
    w = np.array([0.5, 1.0, 2.0, 0.25])
    cfg = SystemConfig(L=4, K=4, sigma2=1.3, p_max=10.0, weights=w)
    for _ in range(20):
        H, V = crandn(rng, 4, 4), crandn(rng, 4, 4)
        expect = sum(
            w[k] * np.log2(1.0 + signal_power_loop(H, V, k) / interference_loop(H, V, 1.3, k))
            for k in range(4)
        )
        assert wsr(H, V, cfg) == pytest.approx(expect, rel=1e-12)


def test_wsr_common_phase_invariance():
    rng = np.random.default_rng(7)
    cfg = SystemConfig(L=4, K=4)
    H, V = crandn(rng, 4, 4), crandn(rng, 4, 4)
    base = wsr(H, V, cfg)
    for theta in (0.3, 1.1, -2.0):
        assert wsr(H, V * np.exp(1j * theta), cfg) == pytest.approx(base, rel=1e-12)


def test_qt_objective_zero_u():
    rng = np.random.default_rng(8)
    cfg = SystemConfig(L=3, K=3, objective_mode=ObjectiveMode.QUADRATIC_ONLY)
    H, V = crandn(rng, 3, 3), crandn(rng, 3, 3)
    aux = AuxiliaryState(g=np.ones(3), u=np.zeros(3))
    assert qt_objective(H, V, aux, cfg) == 0.0


def test_qt_objective_rejects_bad_g():
    cfg = SystemConfig(L=2, K=2)
    rng = np.random.default_rng(9)
    H, V = crandn(rng, 2, 2), crandn(rng, 2, 2)
    with pytest.raises(ConfigurationError):
        qt_objective(H, V, AuxiliaryState(g=np.array([0.5, -1.5]), u=np.ones(2)), cfg)


def test_full_ldt_tight_at_aux_optimum():
    # at g = SINR and the optimal u the full objective must equal the WSR
    rng = np.random.default_rng(10)
    cfg = SystemConfig(L=4, K=4, sigma2=1.0, p_max=10.0)
    worst = 0.0
    for _ in range(200):
        H = crandn(rng, 4, 4)
        V = project_power(crandn(rng, 4, 4) * 2.0, cfg.p_max)
        aux = aux_optimal(H, V, cfg)
        rate = wsr(H, V, cfg)
        worst = max(worst, abs(qt_objective(H, V, aux, cfg) - rate) / rate)
    assert worst < 1e-9


def test_quadratic_only_value_at_aux_optimum():
    rng = np.random.default_rng(13)
    cfg = SystemConfig(L=4, K=4, objective_mode=ObjectiveMode.QUADRATIC_ONLY,
                       weights=np.array([1.0, 2.0, 0.5, 1.5]))
    H = crandn(rng, 4, 4)
    V = crandn(rng, 4, 4)
    aux = aux_optimal(H, V, cfg)
    expect = float(np.sum(cfg.weights * sinr_all(H, V, cfg.sigma2)))
    assert qt_objective(H, V, aux, cfg) == pytest.approx(expect, rel=1e-12)


def test_u_perturbation_never_improves():
    # objective is concave in each u_k; +/- 1e-3 off the closed form must not gain
    rng = np.random.default_rng(14)
    cfg = SystemConfig(L=4, K=4)
    for _ in range(20):
        H, V = crandn(rng, 4, 4), crandn(rng, 4, 4)
        aux = aux_optimal(H, V, cfg)
        base = qt_objective(H, V, aux, cfg)
        for k in range(4):
            for d in (1e-3, -1e-3):
                u2 = aux.u.copy()
                u2[k] += d
                assert qt_objective(H, V, AuxiliaryState(aux.g, u2), cfg) <= base + 1e-15


def test_qt_objective_samples_matches_scalar():
    rng = np.random.default_rng(15)
    cfg = SystemConfig(L=4, K=3)
    V = crandn(rng, 4, 3)
    aux = AuxiliaryState(g=np.abs(rng.standard_normal(3)), u=np.abs(rng.standard_normal(3)))
    stack = crandn(rng, 6, 4, 3)
    got = qt_objective_samples(stack, V, aux, cfg)
    expect = [qt_objective(stack[b], V, aux, cfg) for b in range(6)]
    np.testing.assert_allclose(got, expect, rtol=1e-12)
    got_w = wsr_samples(stack, V, cfg)
    expect_w = [wsr(stack[b], V, cfg) for b in range(6)]
    np.testing.assert_allclose(got_w, expect_w, rtol=1e-12)


def test_project_power_basic():
    rng = np.random.default_rng(16)
    V = crandn(rng, 3, 3)
    p = total_power(V)
    out = project_power(V, p * 1.5)
    assert out is V  # feasible input passes through untouched
    scaled = project_power(V, p / 4.0)
    assert total_power(scaled) == pytest.approx(p / 4.0, rel=1e-12)
    np.testing.assert_allclose(scaled, V * 0.5, rtol=1e-12)


def test_project_power_idempotent_and_contractive():
    rng = np.random.default_rng(17)
    for _ in range(100):
        V = crandn(rng, 4, 4) * rng.uniform(0.1, 10.0)
        p = rng.uniform(0.5, 20.0)
        once = project_power(V, p)
        twice = project_power(once, p)
        np.testing.assert_allclose(twice, once, rtol=1e-12, atol=1e-15)
        assert total_power(once) <= total_power(V) + 1e-12
        assert total_power(once) <= p * (1.0 + 1e-12)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SystemConfig(L=0, K=2)
    with pytest.raises(ConfigurationError):
        SystemConfig(L=2, K=2, sigma2=0.0)
    with pytest.raises(ConfigurationError):
        SystemConfig(L=2, K=2, weights=np.ones(3))
    with pytest.raises(ConfigurationError):
        SystemConfig(L=2, K=2, gamma=0.0)
    with pytest.raises(ConfigurationError):
        wsr(np.zeros((3, 2), dtype=complex), np.zeros((3, 2), dtype=complex), SystemConfig(L=2, K=2))
