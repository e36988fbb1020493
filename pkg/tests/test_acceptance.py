"""Release acceptance checks, one test per shipped guarantee.

Each test states a user-facing promise about the package (estimator
correctness at scale, learning capability, evaluation statistics,
explainability, end-to-end reproducibility) and verifies it at the
advertised tolerance. Runtime-sensitive checks assert their budgets.
"""

import json
import math
import shutil
import time
from pathlib import Path

import numpy as np

import test_fourier as tf
import test_nncore as tn

from spotvol import (baselines, evaluate, explain, fourier, gat, graphs,
                     nncore, simulate)
from spotvol.cli import main as cli_main
from spotvol.panel import SpotPanel
from spotvol.timegrids import intraday_taus, reference_sessions

SCALE = 1e4  # bp^2-per-day target units for net training; MSE order invariant


# -- shared builders --------------------------------------------------------


def const_vol_spec(sigma2=0.04):
    return simulate.SvModelSpec(
        N=1, mu1=np.zeros(1), kappa=np.zeros(1), theta=np.full(1, sigma2),
        xi=np.zeros(1), vov_mode=["const"], price_corr=np.eye(1),
        vol_corr=np.eye(1), leverage=np.zeros(1), v0=np.full(1, sigma2))


def cir_vol_spec(xi):
    mode = "cir" if xi > 0 else "const"
    return simulate.SvModelSpec(
        N=1, mu1=np.zeros(1), kappa=np.full(1, 5.0), theta=np.full(1, 0.04),
        xi=np.full(1, xi), vov_mode=[mode], price_corr=np.eye(1),
        vol_corr=np.eye(1), leverage=np.full(1, -0.5 if xi > 0 else 0.0),
        v0=np.full(1, 0.04))


def scaled_planted(seed, spill, noise):
    """Planted-spillover panel with targets rescaled to bp^2 units."""
    ds = simulate.planted_spillover_dataset(5, 200, spill, seed=seed,
                                            noise_scale=noise)
    p = ds.panel
    panel = SpotPanel(assets=p.assets, dates=p.dates, taus=p.taus,
                      vol=p.vol * SCALE, vov=p.vov * SCALE * SCALE,
                      covol=p.covol * SCALE, covov=p.covov * SCALE * SCALE)
    return panel, ds


def planted_split(panel, lags):
    snaps = graphs.build_snapshots(panel, lags)
    n_days = len(panel.dates)
    bounds = (panel.dates[int(n_days * 0.60)],
              panel.dates[int(n_days * 0.75)], panel.dates[-1])
    split = graphs.split_chronological(snaps, bounds)
    std_snaps, _ = graphs.standardize(split, snaps)
    return std_snaps, split, bounds


def train_planted_net(std_snaps, split, use_edges, seed, epochs=600):
    cfg = gat.TrainConfig(lr=5e-3, epochs=epochs, batch_size=64, hidden=(24,),
                          heads=4, seed=seed, dropout_arch=0.0,
                          dropout_attn=0.0, use_edges=use_edges,
                          checkpoint_best=True)
    train_s = [std_snaps[i] for i in split.train]
    val_s = [std_snaps[i] for i in split.val]
    model = gat.init_model(cfg, train_s[0].node_features.shape[1],
                           train_s[0].edge_features.shape[1])
    gat.train(model, gat.TrainData(train=train_s, val=val_s), cfg)
    return model


# -- criterion 1: estimator oracle equivalence ------------------------------


def test_criterion_01_coefficient_oracle_equivalence():
    """All three coefficient passes match literal double sums at n=512."""
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst = 0.0
    n = 512
    for _ in range(100):
        ga = tf.random_grid(rng, n, symbol="A")
        gb = tf.random_grid(rng, n, symbol="B")

        kr = int(rng.integers(4, 13))
        est_r = fourier.return_coeffs(ga, kr).values
        ref_r = tf.oracle_return_coeffs(ga.values, n, ga.T, kr)
        worst = max(worst, tf.rel_err(est_r, ref_r))

        nc = int(rng.integers(6, 13))
        kc = int(rng.integers(0, 7))
        ca = fourier.return_coeffs(ga, nc + kc)
        cb = fourier.return_coeffs(gb, nc + kc)
        est_c = fourier.covol_coeffs(ca, cb, nc, kc).values
        ref_c = tf.oracle_conv(ca.values, cb.values, nc + kc, nc, kc, ga.T)
        worst = max(worst, tf.rel_err(est_c, ref_c))

        s = int(rng.integers(4, 9))
        kv = int(rng.integers(0, 5))
        band = s + kv
        cc = fourier.covol_coeffs(fourier.return_coeffs(ga, 2 * band),
                                  fourier.return_coeffs(gb, 2 * band),
                                  band, band)
        est_v = fourier.vov_coeffs(cc, s, kv).values
        ref_v = tf.oracle_vov(cc.values, band, s, kv, ga.T)
        worst = max(worst, tf.rel_err(est_v, ref_v))
    elapsed = time.monotonic() - t0
    assert worst < 1e-10
    assert elapsed < 10.0


# -- criterion 2: estimator consistency -------------------------------------


def test_criterion_02_constant_vol_level_and_refinement():
    """Constant-variance days: level recovered, RMSE improves with n."""
    t0 = time.monotonic()
    c0_vals, rmse_hi, rmse_lo = [], [], []
    for seed in range(50):
        day_hi = simulate.simulate_paths(const_vol_spec(), 1, n=23400,
                                         seed=seed)[0]
        day_lo = simulate.simulate_paths(const_vol_spec(), 1, n=2340,
                                         seed=10_000 + seed)[0]
        for day, n, acc in ((day_hi, 23400, rmse_hi), (day_lo, 2340, rmse_lo)):
            g = day.grids[0]
            freqs = fourier.default_cutting_freqs(n)
            if n == 23400:
                ret = fourier.return_coeffs(g, freqs.N)
                c0 = fourier.covol_coeffs(ret, ret, freqs.N, 0).get(0).real
                c0_vals.append(c0 * g.T)
            vol, _, _, _ = fourier.estimate_day([g], freqs)
            acc.append(float(np.sqrt(np.mean((vol[0] - 0.04) ** 2))))
    elapsed = time.monotonic() - t0
    assert 0.038 <= float(np.mean(c0_vals)) <= 0.042
    assert float(np.mean(rmse_hi)) < float(np.mean(rmse_lo))
    assert elapsed < 120.0


# -- criterion 3: vol-of-vol level lock --------------------------------------


def test_criterion_03_vov_level_within_factor_two():
    """CIR days: estimated vov averages within 2x of truth; off-case small."""
    est_on, true_on, est_off = [], [], []
    for seed in range(50):
        for xi, acc in ((0.5, est_on), (0.0, est_off)):
            day = simulate.simulate_paths(cir_vol_spec(xi), 1, n=23400,
                                          seed=seed)[0]
            _, vov, _, _ = fourier.estimate_day([day.grids[0]])
            acc.append(float(np.mean(vov[0])))
            if xi > 0:
                true_on.append(float(np.mean(day.true_vov[0])))
    ratio = float(np.mean(est_on)) / float(np.mean(true_on))
    off_frac = float(np.mean(np.abs(est_off))) / abs(float(np.mean(est_on)))
    assert 0.5 <= ratio <= 2.0
    assert off_frac < 0.10


# -- criterion 4: gradient checks --------------------------------------------


def _primitive_catalog():
    """Scalar-loss builders covering every differentiable engine op."""

    def shapes_mat(rng):
        m, k, n = (int(v) for v in rng.integers(2, 5, size=3))
        return [(m, k), (k, n)]

    pairs3 = [(0, 1), (0, 2), (1, 2)]
    return [
        (lambda t: nncore.tsum(nncore.mul(nncore.add(t[0], t[1]),
                                          nncore.sub(t[0], t[1]))),
         lambda rng: [(3, 4), (3, 4)]),
        (lambda t: nncore.tsum(nncore.mul(nncore.add(t[0], t[1]), t[2])),
         lambda rng: [(4, 3), (1, 3), (4, 1)]),
        (lambda t: nncore.tsum(nncore.matmul(t[0], t[1])), shapes_mat),
        (lambda t: nncore.tsum(nncore.matmul(t[0], t[1])),
         lambda rng: [(2, 3, 4), (2, 4, 3)]),
        (lambda t: nncore.tsum(nncore.mul(nncore.reshape(t[0], (12,)),
                                          nncore.reshape(t[0], (12,)))),
         lambda rng: [(3, 4)]),
        (lambda t: nncore.tsum(nncore.mul(
            nncore.transpose(t[0], (1, 0, 2)), t[1])),
         lambda rng: [(2, 3, 4), (3, 2, 4)]),
        (lambda t: nncore.tsum(nncore.mul(
            nncore.concat([t[0], t[1]], axis=1),
            nncore.concat([t[1], t[0]], axis=1))),
         lambda rng: [(2, 3), (2, 3)]),
        (lambda t: nncore.tsum(nncore.slice_tensor(
            t[0], (slice(1, 3), slice(None)))),
         lambda rng: [(4, 3)]),
        (lambda t: nncore.tmean(nncore.mul(t[0], t[0])),
         lambda rng: [(3, 4)]),
        (lambda t: nncore.tsum(nncore.mul(nncore.tsum(t[0], axis=1), t[1])),
         lambda rng: [(3, 4), (3,)]),
        (lambda t: nncore.tsum(nncore.mul(
            nncore.tmean(t[0], axis=0, keepdims=True), t[1])),
         lambda rng: [(3, 4), (1, 4)]),
        (lambda t: nncore.tsum(nncore.exp(t[0])), lambda rng: [(3, 3)]),
        (lambda t: nncore.tsum(nncore.log(nncore.add(
            nncore.mul(t[0], t[0]), nncore.Tensor(np.full((3, 3), 0.5))))),
         lambda rng: [(3, 3)]),
        (lambda t: nncore.tsum(nncore.sigmoid(t[0])), lambda rng: [(3, 3)]),
        (lambda t: nncore.tsum(nncore.tanh(t[0])), lambda rng: [(3, 3)]),
        (lambda t: nncore.tsum(nncore.relu(t[0])), lambda rng: [(3, 3)]),
        (lambda t: nncore.tsum(nncore.leaky_relu(t[0], 0.2)),
         lambda rng: [(3, 3)]),
        (lambda t: nncore.tsum(nncore.mul(nncore.softmax_rows(t[0]), t[1])),
         lambda rng: [(4, 5), (4, 5)]),
        (lambda t: nncore.mse(t[0], t[1]), lambda rng: [(4, 3), (4, 3)]),
        (lambda t: nncore.tsum(nncore.dropout(
            t[0], 0.5, False, np.random.default_rng(0))),
         lambda rng: [(3, 4)]),
        (lambda t: nncore.tsum(nncore.mul(nncore.edge_scores_to_matrix(
            t[0], t[1], pairs3, 3),
            nncore.Tensor(np.arange(9.0).reshape(3, 3)))),
         lambda rng: [(3,), (3,)]),
    ]


def _fd_check_model_params(params, loss_value, grads, rng, per_tensor=4):
    worst = 0.0
    eps = 1e-6
    for name, tensor in params.items():
        grad = grads[name]
        flat = tensor.data.ravel()
        idxs = rng.choice(flat.size, size=min(per_tensor, flat.size),
                          replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_value()
            flat[idx] = orig - eps
            dn = loss_value()
            flat[idx] = orig
            num = (up - dn) / (2 * eps)
            ref = max(abs(num), abs(grad.ravel()[idx]), 1e-8)
            worst = max(worst, abs(grad.ravel()[idx] - num) / ref)
    return worst


def test_criterion_04_finite_difference_gradients():
    """Engine primitives plus full attention net and LSTM pass FD checks."""
    rng = np.random.default_rng(404)
    catalog = _primitive_catalog()
    worst = 0.0
    for trial in range(80):
        build, shapes = catalog[trial % len(catalog)]
        worst = max(worst, tn.check_grad(build, shapes(rng), rng))

    # full attention network, edge-aware and edge-free, 4 nodes and 1 lag
    for trial in range(10):
        use_edges = trial % 2 == 0
        cfg = gat.TrainConfig(hidden=(5,), heads=2, seed=trial,
                              use_edges=use_edges, dropout_arch=0.0,
                              dropout_attn=0.0)
        snap = make_random_snapshot(n=4, L=1, seed=100 + trial)
        model = gat.init_model(cfg, snap.node_features.shape[1],
                               snap.edge_features.shape[1])
        x, ep, es, y = gat._stack([snap])

        def loss_value():
            out = gat.forward_features(model, nncore.Tensor(x),
                                       nncore.Tensor(ep), nncore.Tensor(es))
            return float(np.mean((out.data - y) ** 2))

        pred = gat.forward_features(model, nncore.Tensor(x),
                                    nncore.Tensor(ep), nncore.Tensor(es))
        nncore.backward(nncore.mse(pred, nncore.Tensor(y)))
        params = model.parameters()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in params.items()}
        worst = max(worst, _fd_check_model_params(params, loss_value, grads,
                                                  rng))

    # LSTM with 4 sequences of length 2 (1 lag plus current)
    for trial in range(10):
        cfg = baselines.LstmConfig(hidden=(3,), dropout=0.0, seed=trial)
        model = baselines.init_lstm(cfg, input_dim=2, total_out=2)
        seq = rng.normal(size=(4, 2, 2))
        y = rng.normal(size=(4, 2))

        def loss_value():
            out = baselines.lstm_forward(model, seq)
            return float(np.mean((out.data - y) ** 2))

        pred = baselines.lstm_forward(model, seq)
        nncore.backward(nncore.mse(pred, nncore.Tensor(y)))
        params = model.parameters()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in params.items()}
        worst = max(worst, _fd_check_model_params(params, loss_value, grads,
                                                  rng))
    assert worst < 1e-4


def make_random_snapshot(n, L, seed, scale=1.0):
    import datetime as dt
    rng = np.random.default_rng(seed)
    width = L + 1
    return graphs.GraphSnapshot(
        b=0, target_date=dt.date(2023, 1, 2),
        node_features=rng.normal(0, scale, (n, n * width)),
        edge_features=rng.normal(0, scale, (n * (n - 1) // 2, 3 * width)),
        self_edge_features=rng.normal(0, scale, (n, 3 * width)),
        targets=rng.normal(0, scale, n), horizon="single")


# -- criterion 5: attention invariants ---------------------------------------


def test_criterion_05_attention_invariants():
    """Rows sum to one, uniform inputs give 1/N, zero edges match edge-free."""
    # row normalization at demanding feature scale
    cfg = gat.TrainConfig(hidden=(8, 4), heads=3, seed=2,
                          dropout_arch=0.0, dropout_attn=0.0)
    snap = make_random_snapshot(n=6, L=2, seed=3, scale=4.0)
    model = gat.init_model(cfg, snap.node_features.shape[1],
                           snap.edge_features.shape[1])
    alpha = gat.attention_matrix(model.layers[0], snap.node_features,
                                 (snap.edge_features,
                                  snap.self_edge_features))
    assert np.abs(alpha.sum(axis=-1) - 1.0).max() <= 1e-12

    # identical rows force exactly uniform attention
    n, L = 5, 1
    node = np.tile(np.linspace(0.5, 1.5, n * (L + 1)), (n, 1))
    edge = np.tile(np.linspace(-1, 1, 3 * (L + 1)), (n * (n - 1) // 2, 1))
    self_edge = np.tile(np.linspace(-1, 1, 3 * (L + 1)), (n, 1))
    ucfg = gat.TrainConfig(hidden=(7,), heads=4, seed=5,
                           dropout_arch=0.0, dropout_attn=0.0)
    umodel = gat.init_model(ucfg, node.shape[1], edge.shape[1])
    ualpha = gat.attention_matrix(umodel.layers[0], node, (edge, self_edge))
    assert np.all(ualpha == 1.0 / n)

    # zeroing the edge pathway reproduces the edge-free variant bitwise
    cfg_e = gat.TrainConfig(hidden=(6, 4), heads=2, seed=7, use_edges=True,
                            dropout_arch=0.0, dropout_attn=0.0)
    cfg_ne = gat.TrainConfig(hidden=(6, 4), heads=2, seed=7, use_edges=False,
                             dropout_arch=0.0, dropout_attn=0.0)
    snap2 = make_random_snapshot(n=4, L=1, seed=8)
    m_e = gat.init_model(cfg_e, snap2.node_features.shape[1],
                         snap2.edge_features.shape[1])
    m_ne = gat.init_model(cfg_ne, snap2.node_features.shape[1],
                          snap2.edge_features.shape[1])
    for le, ln in zip(m_e.layers, m_ne.layers):
        for k in range(le.heads):
            ln.W[k].data = le.W[k].data.copy()
            ln.q_l[k].data = le.q_l[k].data.copy()
            ln.q_r[k].data = le.q_r[k].data.copy()
            le.U[k].data[:] = 0.0
            le.q_e[k].data[:] = 0.0
    m_ne.O.data = m_e.O.data.copy()
    m_ne.u.data = m_e.u.data.copy()
    assert np.array_equal(gat.forward(m_e, snap2), gat.forward(m_ne, snap2))


# -- criterion 6: learning capability ----------------------------------------


def test_criterion_06_learning_capability():
    """Overfits a small batch, and edge attention helps where edges carry
    the signal: net with edges <= net without edges <= pooled regression."""
    # overfit: 20 snapshots, 500 epochs, down to 5% of the starting loss
    panel, _ = scaled_planted(seed=0, spill=0.8, noise=1.0)
    snaps = graphs.build_snapshots(panel, 4)[:20]
    split = graphs.DatasetSplit(train=np.arange(20), val=np.arange(20),
                                test=np.arange(20))
    std_snaps, _ = graphs.standardize(split, snaps)
    cfg = gat.TrainConfig(lr=5e-3, epochs=500, batch_size=20, hidden=(24,),
                          heads=4, seed=0, dropout_arch=0.0, dropout_attn=0.0,
                          use_edges=True, checkpoint_best=False)
    model = gat.init_model(cfg, std_snaps[0].node_features.shape[1],
                           std_snaps[0].edge_features.shape[1])
    y = np.stack([s.targets for s in std_snaps])
    init_mse = float(np.mean((gat.forward(model, std_snaps)[:, :, 0] - y) ** 2))
    gat.train(model, gat.TrainData(train=std_snaps, val=std_snaps), cfg)
    final_mse = float(np.mean((gat.forward(model, std_snaps)[:, :, 0] - y) ** 2))
    assert final_mse <= 0.05 * init_mse

    # ordering on the planted-spillover universe, 10 seeds
    wins = 0
    for seed in range(10):
        panel, _ = scaled_planted(seed, spill=0.8, noise=1.0)
        std_snaps, split, bounds = planted_split(panel, lags=4)
        test_s = [std_snaps[i] for i in split.test]
        y_test = np.stack([s.targets for s in test_s])

        mse = {}
        for name, use_edges in (("edge", True), ("no_edge", False)):
            model = train_planted_net(std_snaps, split, use_edges, seed)
            pred = gat.forward(model, test_s)[:, :, 0]
            mse[name] = float(np.mean((pred - y_test) ** 2))

        fit_instants = {t for t in range(baselines.HAR_LAGS + 1, panel.length)
                        if panel.date_of(t) <= bounds[0]}
        coeffs = baselines.harspot_fit(panel.vol, fit_instants)
        har_pred = np.stack([
            baselines.harspot_forecast(coeffs, panel.vol[:, :s.b + 1], 1)[:, 0]
            for s in test_s])
        mse["har"] = float(np.mean((har_pred - y_test) ** 2))
        wins += mse["edge"] <= mse["no_edge"] <= mse["har"]
    assert wins >= 8


# -- criterion 7: baseline recovery ------------------------------------------


def test_criterion_07_baseline_recovery():
    """HAR OLS recovers truth, trees fit separable data, LSTM bias case."""
    from test_baselines import simulate_har_panel

    truth = baselines.HarSpotCoeffs(mu=2e-5, phi1=0.45, phi2=0.25, phi3=0.1,
                                    theta1=0.03, theta2=0.02, theta3=0.01)
    vol = simulate_har_panel(truth, noise=1e-6, seed=1)
    fit = baselines.harspot_fit(vol)
    assert np.abs(fit.as_array() - truth.as_array()).max() < 1e-2

    rng = np.random.default_rng(8)
    x = rng.uniform(0, 1, (200, 3))
    y = np.where(x[:, 0] < 0.5, 1.0, -1.0) + np.where(x[:, 2] < 0.3, 0.5, 0.0)
    params = baselines.GbtParams(n_trees=200, max_depth=3, learning_rate=0.3,
                                 reg_lambda=0.0, subsample=1.0,
                                 min_child_weight=1.0)
    gfit = baselines.gbt_fit(x, y, params)
    assert float(np.mean((baselines.gbt_predict(gfit, x) - y) ** 2)) < 1e-6

    cfg = baselines.LstmConfig(hidden=(6, 4), dropout=0.0)
    model = baselines.init_lstm(cfg, input_dim=5, total_out=3)
    for layer in model.layers:
        for t in layer.values():
            t.data[:] = 0.0
    model.head_w.data[:] = 0.0
    model.head_b.data[:] = [1.5, -2.0, 0.25]
    out = baselines.lstm_forward(model,
                                 np.random.default_rng(0).normal(size=(7, 4, 5)))
    assert np.all(out.data == np.array([1.5, -2.0, 0.25]))


# -- criterion 8: evaluation stack -------------------------------------------


def test_criterion_08_evaluation_statistics():
    """QLIKE closed-form values, DM power, MCS selection behavior."""
    # QLIKE identity and single-cell value
    x = np.abs(np.random.default_rng(0).normal(1.0, 0.3, (10, 4))) + 0.1
    assert float(np.max(np.abs(evaluate.qlike_values(x, x)))) == 0.0
    single = float(evaluate.qlike_values(np.array([1.0]), np.array([2.0]))[0])
    assert abs(single - (2.0 - math.log(2.0) - 1.0)) < 1e-10

    # DM blows up on a constant loss shift
    rng = np.random.default_rng(88)
    base = rng.uniform(0.5, 1.5, 300)
    stat, p = evaluate.dm_test(base, base + 1.0 + 0.01 * rng.standard_normal(300))
    assert abs(stat) > 10.0
    assert p < 1e-10

    # MCS keeps exactly the dominant model in at least 95 of 100 seeds
    hits = 0
    for seed in range(100):
        srng = np.random.default_rng(seed)
        b0 = 1.0 + 0.1 * srng.standard_normal(250)
        losses = np.stack([
            b0,
            b0 + 0.4 + 0.05 * srng.standard_normal(250),
            b0 + 0.6 + 0.05 * srng.standard_normal(250),
        ])
        res = evaluate.mcs(losses, alpha=0.05, b_boot=5000, seed=seed)
        hits += res.survivors == [0]
    assert hits >= 95

    # identical losses: nothing can be eliminated
    same = np.tile(np.linspace(1.0, 2.0, 250), (4, 1))
    res = evaluate.mcs(same, alpha=0.05, b_boot=5000, seed=0)
    assert res.survivors == [0, 1, 2, 3]


# -- criterion 9: explainer recovers the planted driver ----------------------


def test_criterion_09_explainer_driver_recovery():
    """Masks keep the spillover source; heatmap bookkeeping is exact."""
    panel, ds = scaled_planted(seed=0, spill=1.0, noise=0.6)
    std_snaps, split, _ = planted_split(panel, lags=4)
    model = train_planted_net(std_snaps, split, use_edges=True, seed=0)

    test_idx = list(split.test)
    step = max(len(test_idx) // 40, 1)
    sample = test_idx[::step][:40]
    ecfg = explain.ExplainConfig(iters=300, lr=0.05, lam1=0.03, lam2=0.1)
    results5, results2 = [], []
    driver_top5 = driver_top2 = total = 0
    for si in sample:
        snap = std_snaps[si]
        for tgt in range(1, 5):
            res = explain.explain_node(model, snap, tgt, n_star=5, cfg=ecfg)
            results5.append(res)
            sel2 = explain._selection(res.mask, tgt, 2)
            results2.append(explain.ExplainResult(
                node=res.node, b=res.b, mask=res.mask, selected=sel2,
                trace=res.trace, flagged=res.flagged))
            driver_top5 += ds.driver in res.selected
            driver_top2 += ds.driver in sel2
            total += 1

    assert driver_top5 / total > 0.90
    # sharper cut: the driver must beat every other source for most targets
    assert driver_top2 / total > 0.60

    hm5 = explain.frequency_heatmap(results5, 5, 5, panel.assets)
    hm2 = explain.frequency_heatmap(results2, 5, 2, panel.assets)
    for hm, n_star in ((hm5, 5), (hm2, 2)):
        active = hm.denom > 0
        assert np.array_equal(hm.counts.sum(axis=0)[active],
                              n_star * hm.denom[active])
        col_pct = hm.matrix.sum(axis=0)[active]
        assert np.allclose(col_pct, 100.0 * n_star, rtol=0, atol=1e-9)
    assert hm5.column_identity_holds()
    assert hm2.column_identity_holds()


# -- criterion 10: structural parity -----------------------------------------


def test_criterion_10_feature_layout_and_split_counts():
    """Reference-scale feature lengths, multi-step width, split counts."""
    # 30 assets, 42 lags, on a 4-session panel (56 instants)
    rng = np.random.default_rng(10)
    n = 30
    dates = reference_sessions()[:4]
    taus = list(map(float, intraday_taus()))
    n_pairs = n * (n - 1) // 2
    length = len(dates) * len(taus)
    panel = SpotPanel(assets=[f"A{i:02d}" for i in range(n)], dates=dates,
                      taus=taus,
                      vol=rng.uniform(1e-5, 1e-3, (n, length)),
                      vov=rng.uniform(1e-6, 1e-4, (n, length)),
                      covol=rng.uniform(-1e-4, 1e-4, (n_pairs, length)),
                      covov=rng.uniform(-1e-5, 1e-5, (n_pairs, length)))
    snap = graphs.snapshot_at(panel, b=42, L=42)
    assert snap.node_features.shape == (30, 1290)
    assert snap.edge_features.shape == (435, 129)

    # multi-step heads emit one value per intraday instant
    msnap = graphs.snapshot_at(panel, b=41, L=2, horizon="multi")
    assert msnap.targets.shape == (30, 14)
    mcfg = gat.TrainConfig.multi_step_default(hidden=(6,), heads=2, seed=3,
                                              dropout_arch=0.0)
    mmodel = gat.init_model(mcfg, msnap.node_features.shape[1],
                            msnap.edge_features.shape[1])
    assert gat.forward(mmodel, msnap).shape == (30, 14)

    # chronological split counts on the full reference calendar
    sessions = reference_sessions()
    assert len(sessions) == 737
    per_day = len(intraday_taus())
    calendar = [d for d in sessions for _ in range(per_day)]
    assert len(calendar) == 10318
    import datetime as dt
    split = graphs.split_chronological(
        calendar, (dt.date(2022, 7, 20), dt.date(2022, 10, 14),
                   dt.date(2023, 5, 10)))
    assert split.counts == (7518, 840, 1960)


# -- criterion 11: end-to-end reproducibility ---------------------------------


def _tree_digest(root: Path) -> dict[str, str]:
    from spotvol import artifacts
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = artifacts.sha256_file(path)
    return out


def test_criterion_11_pipeline_reproducible(tmp_path, monkeypatch):
    """Default 60-day 5-asset pipeline: under budget, byte-reproducible."""
    monkeypatch.delenv("SPOTV2_SEED", raising=False)
    digests = []
    for run in ("runA", "runB"):
        out_dir = tmp_path / run
        cfg_path = tmp_path / f"{run}.json"
        cfg_path.write_text(json.dumps({"out_dir": str(out_dir), "seed": 7}))
        t0 = time.monotonic()
        assert cli_main(["pipeline", "--config", str(cfg_path)]) == 0
        elapsed = time.monotonic() - t0
        assert elapsed < 900.0
        digests.append(_tree_digest(out_dir))
        shutil.rmtree(out_dir / "sim" / "ticks")  # keep tmp usage bounded
    assert digests[0] == digests[1]
