"""End-to-end acceptance checks for the release gate.

One test per criterion, so `pytest -v` prints one pass/fail line each.
The training-based checks share module-scoped fixtures: six full-budget
runs (two variants, three seeds) and nine fixed-step runs over growing
training-set sizes. Expect roughly 90 minutes of compute on one core.
"""

import math
import time

import numpy as np
import pytest

from wakegnn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from wakegnn.farm import (AnalyticWakePredictor, FarmLayout, Turbine,
                          farm_power, linear_superpose, max_deficit_superpose,
                          rotor_disk_points, sos_superpose)
from wakegnn.gad import PowerCurve, RotorSpec, power_from_curve, rotor_integrate
from wakegnn.gnn import GnnModel, ModelConfig
from wakegnn.meshgraph import (N_BOUNDARY_TYPES, BoundaryTag, FieldSnapshot,
                               GlobalConditions, Sample, build_graded_mesh,
                               mesh_to_graph)
from wakegnn.mgf import graph_to_bytes, read_graph, read_sample, write_graph, write_sample
from wakegnn.nncore import AdamWState, LinearParams, mse_loss
from wakegnn.train import (Dataset, TrainRunConfig, compute_normalization,
                           evaluate, predict_fields, split_dataset, train_loop)
from wakegnn.wakesynth import WakeParams, default_mesh_spec, shear_profile, synth_wake_field

BUDGET_STEPS = 20_000
SCALE_STEPS = 4_000          # fixed budget for the data-scaling comparison
SEEDS = (0, 1, 2)
ACCUMULATION = 16
MAX_LR = 1e-3
HIDDEN = 64
N_LAYERS = 6


# ---------------------------------------------------------------------------
# shared fixtures


def _draw_samples(g, n, rotor, seed):
    """Synthetic samples with per-sample child seeds, mirroring gen_dataset."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        cond = GlobalConditions(u_inf=float(rng.uniform(5.0, 10.0)),
                                ti_inf=float(rng.uniform(0.05, 0.15)),
                                yaw_deg=float(rng.uniform(-30.0, 30.0)))
        out.append(Sample(graph=g, conditions=cond,
                          fields=synth_wake_field(g, cond, rotor)))
    return out


def _train_once(variant, dataset, steps, seed):
    model = GnnModel(ModelConfig(variant=variant, n_layers=N_LAYERS,
                                 hidden=HIDDEN), seed=seed)
    cfg = TrainRunConfig(total_steps=steps, accumulation=ACCUMULATION,
                         max_lr=MAX_LR, seed=seed)
    t0 = time.monotonic()
    result = train_loop(model, dataset, cfg)
    return model, result, time.monotonic() - t0


@pytest.fixture(scope="module")
def rotor():
    return RotorSpec()


@pytest.fixture(scope="module")
def wake_graph(rotor):
    return build_graded_mesh(default_mesh_spec(rotor), seed=7)


@pytest.fixture(scope="module")
def budget_dataset(wake_graph, rotor):
    samples = _draw_samples(wake_graph, 200, rotor, seed=11)
    return split_dataset(samples, seed=0)


@pytest.fixture(scope="module")
def budget_runs(budget_dataset):
    """Full-budget training runs keyed by (variant, seed)."""
    return {(variant, seed): _train_once(variant, budget_dataset,
                                         BUDGET_STEPS, seed)
            for seed in SEEDS for variant in ("sage_jk_res", "sage")}


@pytest.fixture(scope="module")
def scale_runs(wake_graph, rotor):
    """Held-out MSE keyed by (train size, seed); val and test samples are
    shared across sizes so the comparison is apples to apples."""
    pool = _draw_samples(wake_graph, 224, rotor, seed=23)
    train_pool, val_s, test_s = pool[:200], pool[200:204], pool[204:]
    out = {}
    for size in (20, 60, 200):
        samples = train_pool[:size] + val_s + test_s
        ds = Dataset(samples=samples,
                     train_idx=np.arange(size),
                     val_idx=np.arange(size, size + len(val_s)),
                     test_idx=np.arange(size + len(val_s), len(samples)),
                     norm=compute_normalization(train_pool[:size]))
        for seed in SEEDS:
            model, result, _ = _train_once("sage_jk_res", ds, SCALE_STEPS,
                                           seed)
            model.params = {k: v.copy() for k, v in result.best_params.items()}
            out[(size, seed)] = evaluate(model, ds, split="test").mse
    return out


# ---------------------------------------------------------------------------
# dense brute-force layer oracles


def _random_graph(n, p_edge, seed):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p_edge]
    if not edges:
        edges = [(0, 1)]
    pts = rng.normal(size=(n, 3))
    tags = np.full(n, BoundaryTag.INTERIOR, dtype=np.uint8)
    return mesh_to_graph(pts, np.asarray(edges), tags)


def _dense_sage(g, h, p):
    agg = np.zeros_like(h)
    for v in range(g.n_vertices):
        nb = g.neighbors(v)
        if nb.size:
            agg[v] = h[nb].mean(axis=0)
    cat = np.concatenate([h, agg], axis=1)
    return np.maximum(cat @ p.W + p.b, 0.0)


def _dense_gcn(g, h, p):
    n = g.n_vertices
    a = np.eye(n)
    for v in range(n):
        a[v, g.neighbors(v)] = 1.0
    d_inv = 1.0 / np.sqrt(a.sum(axis=1))
    op = d_inv[:, None] * a * d_inv[None, :]
    return np.maximum(op @ (h @ p.W) + p.b, 0.0)


def _dense_gat(g, h, p, att):
    heads, two_dh = att.shape
    dh = two_dh // 2
    m = h @ p.W
    n = g.n_vertices
    z = np.zeros((n, heads * dh))
    for v in range(n):
        nbrs = np.concatenate([[v], g.neighbors(v)])
        for k in range(heads):
            mk = m[:, k * dh:(k + 1) * dh]
            a_dst, a_src = att[k, :dh], att[k, dh:]
            raw = mk[v] @ a_dst + mk[nbrs] @ a_src
            scores = np.where(raw > 0, raw, 0.2 * raw)
            e = np.exp(scores - scores.max())
            alpha = e / e.sum()
            z[v, k * dh:(k + 1) * dh] = alpha @ mk[nbrs]
    return np.maximum(z + p.b, 0.0)


# ---------------------------------------------------------------------------
# the criteria


def test_01_layer_forward_matches_dense_oracles():
    from wakegnn.gnn import gat_layer_forward, gcn_layer_forward, sage_layer_forward

    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    for trial in range(100):
        n = int(rng.integers(2, 11))
        f = int(rng.integers(1, 5))
        g = _random_graph(n, float(rng.uniform(0.15, 0.7)), trial)
        h = rng.normal(size=(n, f))

        out = int(rng.integers(1, 7))
        p = LinearParams(W=rng.normal(size=(2 * f, out)),
                         b=rng.normal(size=out))
        np.testing.assert_allclose(sage_layer_forward(h, g, p),
                                   _dense_sage(g, h, p), rtol=0, atol=1e-6)

        p = LinearParams(W=rng.normal(size=(f, out)), b=rng.normal(size=out))
        np.testing.assert_allclose(gcn_layer_forward(h, g, p),
                                   _dense_gcn(g, h, p), rtol=0, atol=1e-6)

        heads = int(rng.integers(1, 3))
        dh = int(rng.integers(1, 4))
        p = LinearParams(W=rng.normal(size=(f, heads * dh)),
                         b=rng.normal(size=heads * dh))
        att = rng.normal(size=(heads, 2 * dh))
        np.testing.assert_allclose(gat_layer_forward(h, g, p, att),
                                   _dense_gat(g, h, p, att),
                                   rtol=0, atol=1e-6)
    assert time.monotonic() - t0 < 10.0


def test_02_full_model_gradients_match_finite_differences():
    t0 = time.monotonic()
    rng = np.random.default_rng(202)
    g = _random_graph(20, 0.25, seed=5)
    model = GnnModel(ModelConfig(variant="sage_jk_res", n_layers=3,
                                 hidden=16), seed=3)
    x = rng.normal(size=(20, model.in_features))
    y = rng.normal(size=(20, model.config.out_channels))

    out, cache = model.forward_with_cache(g, x)
    _, grad_out = mse_loss(out, y)
    analytic = model.backward(cache, grad_out)

    def loss_now():
        return mse_loss(model.forward(g, x), y)[0]

    eps = 1e-6
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        an = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_now()
            flat[i] = orig - eps
            lo = loss_now()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            worst = max(worst, abs(an[i] - fd)
                        / max(abs(an[i]), abs(fd), 1e-10))
    assert worst < 1e-5, f"max relative gradient error {worst:.3e}"
    assert time.monotonic() - t0 < 60.0


def test_03_trained_surrogate_accuracy_on_held_out_samples(budget_runs,
                                                           budget_dataset):
    model, result, elapsed = budget_runs[("sage_jk_res", 0)]
    assert elapsed < 7200.0
    model.params = {k: v.copy() for k, v in result.best_params.items()}
    report = evaluate(model, budget_dataset, split="test")
    speed_pct = 100.0 * report.speed.median_accuracy
    tke_pct = 100.0 * report.tke.median_accuracy
    assert speed_pct >= 97.0, f"speed accuracy {speed_pct:.2f}%"
    assert tke_pct >= 90.0, f"tke accuracy {tke_pct:.2f}%"


def test_04_jk_residual_variant_beats_plain_sage(budget_runs):
    pairs = {seed: (budget_runs[("sage_jk_res", seed)][1].val_curve[-1][1],
                    budget_runs[("sage", seed)][1].val_curve[-1][1])
             for seed in SEEDS}
    wins = sum(jk <= plain for jk, plain in pairs.values())
    assert wins >= 2, (
        f"jk+residual won {wins} of {len(SEEDS)} seeds; "
        f"final validation MSE (jk, plain) per seed: "
        + ", ".join(f"{s}: ({jk:.6f}, {pl:.6f})"
                    for s, (jk, pl) in pairs.items()))


def test_05_test_mse_non_increasing_with_training_set_size(scale_runs):
    ok = 0
    for seed in SEEDS:
        m20, m60, m200 = (scale_runs[(s, seed)] for s in (20, 60, 200))
        ok += m20 >= m60 >= m200
    assert ok >= 2, f"monotone in {ok} of {len(SEEDS)} seeds: {scale_runs}"


def test_06_rotor_integration_matches_annulus_closed_form():
    t0 = time.monotonic()
    spec = RotorSpec(omega=1.3)
    r0, r1, s_n, s_t = 2.0, 7.0, 4.0, 1.5
    n = 1000
    edges = np.linspace(r0, r1, n + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    vol = 2.0 * math.pi * mid * np.diff(edges)

    t_exact = spec.rho * s_n * math.pi * (r1 ** 2 - r0 ** 2)
    q_exact = spec.rho * s_t * 2.0 * math.pi * (r1 ** 3 - r0 ** 3) / 3.0
    thrust, torque, power = rotor_integrate(spec, vol, mid,
                                            np.full(n, s_n), np.full(n, s_t))
    assert abs(thrust - t_exact) / t_exact < 0.01
    assert abs(torque - q_exact) / q_exact < 0.01

    rng = np.random.default_rng(66)
    for _ in range(50):
        s_rand_n = rng.normal(size=n)
        s_rand_t = rng.normal(size=n)
        _, q, p = rotor_integrate(spec, vol, mid, s_rand_n, s_rand_t)
        assert abs(p - spec.omega * q) <= 1e-12 * max(1.0, abs(p))
    assert time.monotonic() - t0 < 1.0


def test_07_power_curve_formula_value_and_cut_in():
    curve = PowerCurve(u=[4.0, 8.0, 25.0], cp=[0.45, 0.45, 0.45],
                       cut_in=4.0, cut_out=25.0)
    p = power_from_curve(curve, 8.0, radius=46.5, rho=1.225)
    assert p == pytest.approx(9.586e5, rel=1e-3)
    assert power_from_curve(curve, 3.9, radius=46.5, rho=1.225) == 0.0


def test_08_superposition_worked_example_and_ordering():
    got = sos_superpose(10.0, [8.0, 9.0], [10.0, 10.0])
    want = 10.0 * (1.0 - math.sqrt(0.2 ** 2 + 0.1 ** 2))
    assert abs(got - want) <= 1e-9

    rng = np.random.default_rng(88)
    for _ in range(1000):
        u_inf = float(rng.uniform(5.0, 15.0))
        k = int(rng.integers(1, 6))
        deficits = rng.uniform(0.0, 1.0, size=k)
        inlets = rng.uniform(0.8 * u_inf, 1.2 * u_inf, size=k)
        wakes = (1.0 - deficits) * inlets
        u_lin = linear_superpose(u_inf, wakes, inlets)
        u_sos = sos_superpose(u_inf, wakes, inlets)
        u_max = max_deficit_superpose(u_inf, wakes, inlets)
        assert u_lin <= u_sos + 1e-12
        assert u_sos <= u_max + 1e-12


def test_09_two_turbine_pipeline_matches_direct_evaluation(wake_graph, rotor):
    curve = PowerCurve(u=[1.0, 25.0], cp=[0.4, 0.4], cut_in=1.0, cut_out=25.0)
    cond = GlobalConditions(8.0, 0.10, 0.0)
    d = 2.0 * rotor.radius
    spacing = 5.0 * d
    layout = FarmLayout(turbines=(
        Turbine(id="UP", x=0.0, y=0.0, rotor=rotor, curve=curve),
        Turbine(id="DOWN", x=spacing, y=0.0, rotor=rotor, curve=curve)))
    predictor = AnalyticWakePredictor(graph=wake_graph, rotor=rotor)
    res = {r.id: r for r in farm_power(layout, predictor, cond)}

    # same physics evaluated at the exact disk points, no graph anywhere
    p = WakeParams()
    pts = rotor_disk_points((spacing, 0.0, rotor.hub_height), rotor.radius)
    sigma = p.sigma0 * d + p.growth_rate(cond.ti_inf) * spacing
    amp = 1.0 - math.sqrt(1.0 - p.c_t / (8.0 * (sigma / d) ** 2))
    r2 = pts[:, 1] ** 2 + (pts[:, 2] - rotor.hub_height) ** 2
    f = amp * np.exp(-r2 / (2.0 * sigma ** 2))
    base = shear_profile(pts[:, 2], cond.u_inf, rotor.hub_height, p.shear)
    u_wake = float(np.mean(base * (1.0 - f)))
    u_ref = float(np.mean(base))
    u_direct = sos_superpose(cond.u_inf, [u_wake], [u_ref])
    p_direct = power_from_curve(curve, u_direct, rotor.radius, rotor.rho)
    assert res["DOWN"].power == pytest.approx(p_direct, rel=0.02)

    yawed = FarmLayout(turbines=(
        Turbine(id="UP", x=0.0, y=0.0, rotor=rotor, curve=curve,
                yaw_deg=20.0),
        Turbine(id="DOWN", x=spacing, y=0.0, rotor=rotor, curve=curve)))
    res_yaw = {r.id: r for r in farm_power(layout=yawed, predictor=predictor,
                                           cond=cond)}
    assert res_yaw["DOWN"].power > res["DOWN"].power


def test_10_inference_latency_on_large_graph(rotor):
    spec = default_mesh_spec(rotor, base_spacing_fraction=0.155,
                             refined_spacing_fraction=0.0775,
                             vertex_budget=400_000)
    g = build_graded_mesh(spec, seed=0)
    assert g.n_vertices >= 100_000
    cond = GlobalConditions(8.0, 0.10, 0.0)
    sample = Sample(graph=g, conditions=cond,
                    fields=synth_wake_field(g, cond, rotor))
    norm = compute_normalization([sample])
    model = GnnModel(ModelConfig(variant="sage_jk_res", n_layers=6,
                                 hidden=128), seed=0)
    # float32 is the training default, so the deployed model runs at it
    model.params = {k: v.astype(np.float32) for k, v in model.params.items()}
    t0 = time.monotonic()
    pred = predict_fields(model, norm, g, cond)
    elapsed = time.monotonic() - t0
    assert pred.n_vertices == g.n_vertices
    assert elapsed <= 10.0, f"predict took {elapsed:.2f}s"


def test_11_graph_and_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(111)

    for trial in range(500):
        n = int(rng.integers(2, 25))
        g = _random_graph(n, float(rng.uniform(0.1, 0.6)), seed=1000 + trial)
        path = tmp_path / "g.mgf"
        if trial % 2:
            write_graph(path, g)
            g2 = read_graph(path)
        else:
            cond = GlobalConditions(u_inf=float(rng.uniform(1.0, 20.0)),
                                    ti_inf=float(rng.uniform(0.0, 0.99)),
                                    yaw_deg=float(rng.uniform(-89.0, 89.0)))
            fields = FieldSnapshot(u=rng.normal(size=n), v=rng.normal(size=n),
                                   w=rng.normal(size=n),
                                   tke=np.abs(rng.normal(size=n)))
            write_sample(path, Sample(graph=g, conditions=cond,
                                      fields=fields))
            s2 = read_sample(path)
            g2 = s2.graph
            assert s2.conditions == cond
            assert s2.fields.u.tobytes() == fields.u.tobytes()
            assert s2.fields.tke.tobytes() == fields.tke.tobytes()
        assert g2.positions.tobytes() == g.positions.tobytes()
        assert g2.csr_offsets.tobytes() == g.csr_offsets.tobytes()
        assert g2.csr_neighbors.tobytes() == g.csr_neighbors.tobytes()
        assert g2.boundary_tags.tobytes() == g.boundary_tags.tobytes()
        assert graph_to_bytes(g2) == graph_to_bytes(g)

    for trial in range(500):
        blocks = int(rng.integers(1, 5))
        params = {f"p{j}": rng.normal(size=tuple(rng.integers(1, 8, size=2)))
                  for j in range(blocks)}
        opt = None
        if trial % 2:
            opt = AdamWState(step=int(rng.integers(0, 1000)))
            opt.m = {k: rng.normal(size=v.shape) for k, v in params.items()}
            opt.v = {k: np.abs(rng.normal(size=v.shape))
                     for k, v in params.items()}
        ckpt = Checkpoint(config={"trial": trial, "lr": float(rng.random())},
                          normalization={"scale": [1.0, 2.0]},
                          seed=int(rng.integers(0, 2 ** 31)),
                          step=int(rng.integers(0, 10 ** 6)),
                          params=params, opt_state=opt)
        path = tmp_path / "c.ckp"
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        assert back.config == ckpt.config
        assert back.seed == ckpt.seed and back.step == ckpt.step
        for k, v in params.items():
            assert back.params[k].tobytes() == v.tobytes()
            assert back.params[k].shape == v.shape
        if opt is not None:
            assert back.opt_state.step == opt.step
            for k in params:
                assert back.opt_state.m[k].tobytes() == opt.m[k].tobytes()
                assert back.opt_state.v[k].tobytes() == opt.v[k].tobytes()
        else:
            assert back.opt_state is None


def _mean_pairwise_cosine(emb):
    norms = np.linalg.norm(emb, axis=1)
    kept = emb[norms > 1e-12]
    kept = kept / np.linalg.norm(kept, axis=1, keepdims=True)
    n = kept.shape[0]
    sims = kept @ kept.T
    return (sims.sum() - n) / (n * (n - 1))


def test_12_deep_gcn_oversmooths_more_than_jk_residual():
    rng = np.random.default_rng(121)
    wins = 0
    trials = 20
    for trial in range(trials):
        g = _random_graph(40, 0.15, seed=3000 + trial)
        gcn = GnnModel(ModelConfig(variant="gcn", n_layers=8, hidden=32),
                       seed=trial)
        jk = GnnModel(ModelConfig(variant="sage_jk_res", n_layers=8,
                                  hidden=32), seed=trial)
        x = rng.normal(size=(40, gcn.in_features))
        sim_gcn = _mean_pairwise_cosine(gcn.forward_with_cache(g, x)[1]["emb"])
        sim_jk = _mean_pairwise_cosine(jk.forward_with_cache(g, x)[1]["emb"])
        wins += sim_gcn > sim_jk
    # one-sided sign test: P(X >= wins) under fair coin must be below 0.05
    p_value = sum(math.comb(trials, i)
                  for i in range(wins, trials + 1)) / 2 ** trials
    assert p_value < 0.05, f"{wins}/{trials} trials, p={p_value:.4f}"
