"""Equalizers: CMA family, carrier phase estimation, the genie MMSE
baseline, Adam, and the variational loss."""

import numpy as np
import pytest

from blindeq import autodiff as ad
from blindeq import channel as ch
from blindeq import equalize as eq
from blindeq import evaluate as ev
from blindeq import modem, sigproc
from blindeq.errors import ConfigError


def test_godard_radius():
    qpsk = modem.build_constellation(4, 0.0)
    assert abs(eq.godard_radius(qpsk) - 1.0) < 1e-12
    c16 = modem.build_constellation(16, 0.0)
    # independent oracle over the 16 unit-energy points
    pts = (c16.levels[:, None] + 1j * c16.levels[None, :]).ravel()
    r2 = np.mean(np.abs(pts) ** 4) / np.mean(np.abs(pts) ** 2)
    assert abs(eq.godard_radius(c16) - r2) < 1e-12
    assert abs(r2 - 1.32) < 1e-12


def test_butterfly_dirac_is_identity():
    rng = np.random.default_rng(0)
    rx = rng.standard_normal((2, 40)) + 1j * rng.standard_normal((2, 40))
    filt = eq.ButterflyFilter.dirac(2, 7)
    out = eq.butterfly_apply(rx, filt, stride=2)
    assert np.allclose(out, rx[:, ::2])
    with pytest.raises(ConfigError):
        eq.ButterflyFilter(np.zeros((2, 2, 6)))  # even length
    with pytest.raises(ConfigError):
        eq.butterfly_apply(rx[:1], filt)


def test_cma_step_hand_oracle():
    # single pol, single tap: out = t w, e = out (r2 - |out|^2),
    # t <- t + mu e conj(w)
    t0 = 0.7 - 0.2j
    w = 1.1 + 0.4j
    mu, r2 = 1e-2, 1.32
    filt = eq.ButterflyFilter(np.array(t0).reshape(1, 1, 1))
    out = eq.cma_step(filt, np.array(w).reshape(1, 1), mu, r2)
    o = t0 * w
    e = o * (r2 - abs(o) ** 2)
    assert abs(out[0] - o) < 1e-15
    assert abs(filt.taps[0, 0, 0] - (t0 + mu * e * np.conj(w))) < 1e-15


def test_cma_step_stationary_on_radius():
    filt = eq.ButterflyFilter.dirac(1, 1)
    w = np.array([[np.exp(0.3j)]])  # |out| = 1 = sqrt(R2) for QPSK
    before = filt.taps.copy()
    eq.cma_step(filt, w, 1e-2, 1.0)
    assert np.allclose(filt.taps, before)


def test_cma_batch_step_flex_truncation():
    rng = np.random.default_rng(1)
    filt = eq.ButterflyFilter.dirac(1, 3)
    wins = rng.standard_normal((8, 1, 3)) + 1j * rng.standard_normal((8, 1, 3))
    out = eq.cma_batch_step(filt, wins, 1e-3, 1.0, n_flex=3)
    assert out.shape == (1, 3)


def test_lr_schedule():
    assert eq.lr_schedule(0, 1e-3) == 1e-3
    assert eq.lr_schedule(19, 1e-3) == 1e-3
    assert eq.lr_schedule(20, 1e-3) == 0.5e-3
    assert eq.lr_schedule(45, 1e-3) == 0.25e-3
    with pytest.raises(ConfigError):
        eq.lr_schedule(-1, 1e-3)


def test_cma_run_recovers_qpsk():
    rng = np.random.default_rng(2)
    c = modem.build_constellation(4, 0.0)
    s = modem.sample_symbols(c, 30_000, rng)
    tx = sigproc.upsample_zero_insert(s, 2)
    p = ch.ChannelParams(variant="awgn_isi", snr_db=25.0)
    rx = ch.awgn_isi_apply(tx, p, rng)
    out, filt, corr = eq.cma_run(rx.samples, c, 15, 2e-3, 2, n_frame=5_000)
    out = eq.viterbi_viterbi_cpe(out)
    assert out.shape == (1, 30_000)
    assert corr == 0.0  # single polarization
    align = ev.resolve_ambiguity(out[0, -5_000:], s.samples[-5_000:], c, 0.005)
    assert align.ser < 0.01


def test_viterbi_viterbi_constant_phase():
    rng = np.random.default_rng(3)
    c = modem.build_constellation(4, 0.0)
    s = modem.sample_symbols(c, 4_000, rng)
    rotated = s.samples * np.exp(0.35j)
    out = eq.viterbi_viterbi_cpe(rotated, window=501)
    assert out.shape == rotated.shape  # 1-D in, 1-D out
    align = ev.resolve_ambiguity(out[600:-600], s.samples[600:-600], c, 0.01)
    assert align.ser == 0.0
    with pytest.raises(ConfigError):
        eq.viterbi_viterbi_cpe(rotated, window=500)


def test_mmse_baseline_known_channel():
    rng = np.random.default_rng(4)
    c = modem.build_constellation(16, 0.0)
    s = modem.sample_symbols(c, 20_000, rng)
    h = np.array([0.4 - 0.1j, 1.0, -0.3 + 0.2j])
    rx = sigproc.convolve_same(s.samples, h)
    w, out, d = eq.mmse_baseline(rx, s.samples, n_taps=21, sps=1)
    assert w.shape == (21,)
    mse = np.mean(np.abs(out[50:-50] - s.samples[50:-50]) ** 2)
    assert mse < 1e-3


def test_mmse_baseline_fractionally_spaced():
    rng = np.random.default_rng(5)
    c = modem.build_constellation(16, 0.0)
    s = modem.sample_symbols(c, 20_000, rng)
    tx = sigproc.upsample_zero_insert(s, 2)
    p = ch.ChannelParams(variant="awgn_isi", snr_db=np.inf)
    rx = ch.awgn_isi_apply(tx, p, rng)
    _, out, _ = eq.mmse_baseline(rx.samples, s.samples, n_taps=40, sps=2)
    mse = np.mean(np.abs(out[100:-100] - s.samples[100:-100]) ** 2)
    assert mse < 1e-2


def test_adam_first_step_oracle():
    rng = np.random.default_rng(6)
    g = rng.standard_normal(5)
    p = ad.leaf(np.zeros(5))
    opt = eq.Adam([p], eps=1e-8)
    p.grad = g.copy()
    opt.step(1e-2)
    # bias-corrected first step reduces to a signed step of size ~lr
    assert np.allclose(p.value, -1e-2 * g / (np.abs(g) + 1e-8), atol=1e-12)


def test_adam_two_step_oracle():
    rng = np.random.default_rng(7)
    g1, g2 = rng.standard_normal(3), rng.standard_normal(3)
    p = ad.leaf(np.zeros(3))
    opt = eq.Adam([p])
    eq.adam_update([p], [g1], opt, 1e-2)
    eq.adam_update([p], [g2], opt, 1e-2)
    # independent re-derivation of two textbook Adam steps
    b1, b2, e = 0.9, 0.999, 1e-8
    m = (1 - b1) * g1
    v = (1 - b2) * g1 ** 2
    x = -1e-2 * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + e)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 ** 2
    x = x - 1e-2 * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + e)
    assert np.allclose(p.value, x, atol=1e-12)


def test_update_schedule_validation():
    with pytest.raises(ConfigError):
        eq.UpdateSchedule(n_b=10, n_flex=11, lr=1e-3)
    with pytest.raises(ConfigError):
        eq.UpdateSchedule(n_b=10, n_flex=0, lr=1e-3)


def test_soft_demap_node_matches_vectorized():
    rng = np.random.default_rng(8)
    c = modem.build_constellation(64, 0.03)
    v = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    s2 = 0.08
    for matched in (True, False):
        nodes = eq.soft_demap_node(ad.constant(v.real), ad.constant(v.imag),
                                   c, s2, matched=matched)
        ref = modem.soft_demap(v, c, s2, matched=matched)
        assert np.allclose(nodes[0].value, ref[:, 0], atol=1e-12)
        assert np.allclose(nodes[1].value, ref[:, 1], atol=1e-12)


def test_vae_loss_one_hot_oracle():
    # with a Dirac channel model and one-hot q at the true symbols the
    # distortion must be exactly ||y - x||^2 and the KL the prior surprisal
    rng = np.random.default_rng(9)
    c = modem.build_constellation(16, 0.05)
    n = 12
    s = modem.sample_symbols(c, n, rng)
    y = s.samples + 0.05 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    i_idx, q_idx = modem.symbol_indices(c, s.samples)
    eye = np.eye(c.n_levels)
    q_nodes = [[ad.constant(eye[i_idx]), ad.constant(eye[q_idx])]]
    ch_nodes = [[(ad.leaf(np.array([0.0, 1.0, 0.0])),
                  ad.leaf(np.zeros(3)))]]
    total, bd = eq.vae_loss(y[None, :], q_nodes, ch_nodes, c, n_os=1)
    c_ref = float(np.sum(np.abs(y - s.samples) ** 2))
    assert abs(bd.c_dist[0] - c_ref) < 1e-10
    kl_ref = -float(np.sum(np.log(c.prior[i_idx])) + np.sum(np.log(c.prior[q_idx])))
    assert abs(bd.a_kl - kl_ref) < 1e-9
    assert abs(bd.total - (bd.a_kl + n * np.log(bd.c_dist[0]))) < 1e-9
    assert abs(bd.sigma_sq - c_ref / n) < 1e-12


def test_vae_le_step_learns_identity_channel():
    rng = np.random.default_rng(10)
    c = modem.build_constellation(4, 0.0)
    n_b = 200
    s = modem.sample_symbols(c, n_b + 24, rng)
    tx = sigproc.upsample_zero_insert(s, 2)
    rx = ch.add_awgn(tx.samples, ch.noise_sigma_sq(tx.samples, 2, 15.0),
                     rng)[None, :]
    rx = rx / np.sqrt(np.mean(np.abs(rx) ** 2) * 2)  # unit symbol energy
    state = eq.VaeLeState(1, 2, f_eq=11, f_ch=11)
    sched = eq.UpdateSchedule(n_b=n_b, n_flex=n_b, lr=2e-3)
    mh = state.f_eq // 2
    seg = rx[:, : n_b * 2 + 2 * mh]
    losses = []
    for _ in range(400):
        _, bd = eq.vae_le_step(state, seg, c, sched)
        losses.append(bd.total)
    assert losses[-1] < losses[0]
    # the noise-variance estimate approaches the injected per-symbol value
    assert abs(state.sigma_sq - 10 ** (-1.5)) < 0.005


def test_run_vae_covers_tail():
    rng = np.random.default_rng(11)
    c = modem.build_constellation(4, 0.0)
    s = modem.sample_symbols(c, 1_050, rng)
    tx = sigproc.upsample_zero_insert(s, 2)
    rx = ch.add_awgn(tx.samples, ch.noise_sigma_sq(tx.samples, 2, 18.0), rng)
    state = eq.VaeLeState(1, 2, f_eq=7, f_ch=7)
    sched = eq.UpdateSchedule(n_b=250, n_flex=250, lr=1e-3)
    res = eq.run_vae(rx[None, :], c, state, sched)
    assert res.out.shape == (1, 1_050)
    assert np.all(res.out[:, -50:] != 0)  # tail handled by the final filters
    assert res.sigma_traj.shape == (4, 2)


def test_vae_state_validation():
    with pytest.raises(ConfigError):
        eq.VaeLeState(1, 2, f_eq=10)
    with pytest.raises(ConfigError):
        eq.VaeLeState(1, 2, f_eq=11, f_ch=4)
    with pytest.raises(ConfigError):
        eq.VaeNnState(1, 2, 16, k1=4, k2=3, f_ch=11,
                      rng=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        eq.VaeNnState(1, 2, 16, k1=5, k2=7, f_ch=11,
                      rng=np.random.default_rng(0))
