"""End-to-end acceptance gates for the desk-scale experiment suite.

Each check prints one labeled PASS/FAIL line before asserting, so a full run
reads as a checklist. The MNIST checks need the fetched corpus (10,000
genuine images; see scripts/fetch_mnist.py) and compare against the published
full-scale figures with the stated absolute tolerances; desk-scale shifts are
discussed in the README.
"""

import time
from dataclasses import replace
import numpy as np
import pytest
import sympy as sp

from modelspaces import (BallSearchConfig, Dataset, FisherScales,
                         LogisticModel, ModelSpace, accuracy,
                         aggregate_mlp, axis_scales, construct_space,
                         draw_public_sample, fine_tune, fisher_diagonal,
                         intersect, naive_average, neuron_gate, train_mlp)
from modelspaces.harness import (comm_audit, epsilon_grid, load_config,
                                 prepare_data, run, size_sweep)
from modelspaces.models import _onehot, mlp_loss_grads

from conftest import REPO_ROOT, requires_mnist

pytestmark = pytest.mark.acceptance

CONFIG_DIR = REPO_ROOT / "configs"


def report(label: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {label}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def convex_run(tmp_path_factory):
    config = load_config(CONFIG_DIR / "mnist_convex_k5.json")
    t0 = time.perf_counter()
    summary = run(config, out_dir=tmp_path_factory.mktemp("convex"))
    return summary, time.perf_counter() - t0


@pytest.fixture(scope="module")
def nn_run(tmp_path_factory):
    config = load_config(CONFIG_DIR / "mnist_nn_k5.json")
    t0 = time.perf_counter()
    summary = run(config, out_dir=tmp_path_factory.mktemp("nn"))
    return summary, time.perf_counter() - t0


@pytest.fixture(scope="module")
def grid_run(tmp_path_factory):
    config = load_config(CONFIG_DIR / "mnist_epsilon_grid_k2.json")
    t0 = time.perf_counter()
    rows = epsilon_grid(config, [0.1, 0.3, 0.5, 0.7, 0.9],
                        out_dir=tmp_path_factory.mktemp("grid"))
    return rows, time.perf_counter() - t0


@requires_mnist
class TestMnistConvexK5:
    """Five-node convex run against the published table, +/-0.04 absolute."""

    def test_global_baseline(self, convex_run):
        summary, _ = convex_run
        mean = summary.table["global"][0]
        ok = mean >= 0.91 - 0.04
        report("mnist-convex global", ok, f"{mean:.3f} >= 0.87")
        assert ok

    def test_local_baseline_mean(self, convex_run):
        summary, _ = convex_run
        mean = summary.table["local"][0]
        ok = abs(mean - 0.198) <= 0.05
        report("mnist-convex local mean", ok, f"{mean:.3f} ~ 0.198 +/- 0.05")
        assert ok

    def test_tuned_aggregate(self, convex_run):
        summary, _ = convex_run
        mean = summary.table["aggregate-tuned"][0]
        ok = mean >= 0.84 - 0.04
        report("mnist-convex tuned aggregate", ok, f"{mean:.3f} >= 0.80")
        assert ok

    def test_untuned_aggregate_beats_locals_and_threshold(self, convex_run):
        summary, _ = convex_run
        agg = summary.table["aggregate"][0]
        local = summary.table["local"][0]
        ok = agg > local and agg >= 0.40 - 0.04
        report("mnist-convex untuned aggregate", ok,
               f"{agg:.3f} > local {local:.3f} and >= 0.36")
        assert ok

    def test_five_trials_no_failures(self, convex_run):
        summary, _ = convex_run
        ok = len(summary.reports) == 5 and summary.n_failed == 0
        report("mnist-convex trials", ok, f"{len(summary.reports)} trials, "
               f"{summary.n_failed} failed")
        assert ok

    def test_runtime_budget(self, convex_run):
        _, elapsed = convex_run
        ok = elapsed < 20 * 60
        report("mnist-convex runtime", ok, f"{elapsed:.0f}s < 1200s")
        assert ok


@requires_mnist
class TestMnistNnK5:
    """Five-node two-layer run against the published table, +/-0.05 absolute."""

    def test_global_baseline(self, nn_run):
        summary, _ = nn_run
        mean = summary.table["global"][0]
        ok = mean >= 0.955 - 0.05
        report("mnist-nn global", ok, f"{mean:.3f} >= 0.905")
        assert ok

    def test_tuned_aggregate(self, nn_run):
        summary, _ = nn_run
        mean = summary.table["aggregate-tuned"][0]
        ok = mean >= 0.84 - 0.05
        report("mnist-nn tuned aggregate", ok, f"{mean:.3f} >= 0.79")
        assert ok

    def test_untuned_beats_naive_average(self, nn_run):
        summary, _ = nn_run
        agg = summary.table["aggregate"][0]
        avg = summary.table["averaged"][0]
        ok = agg > avg
        report("mnist-nn untuned vs averaged", ok, f"{agg:.3f} > {avg:.3f}")
        assert ok

    def test_runtime_budget(self, nn_run):
        _, elapsed = nn_run
        ok = elapsed < 45 * 60
        report("mnist-nn runtime", ok, f"{elapsed:.0f}s < 2700s")
        assert ok


class TestSyntheticSubstitutes:
    """Property checks on clustered-Gaussian data standing in for the image
    pipelines that are out of reach at desk scale."""

    def test_tuned_aggregate_beats_tuned_average_majority(self):
        config = load_config(CONFIG_DIR / "synthetic_nn_k5.json")
        _, _, test, nodes = prepare_data(config)
        wins = 0
        for seed in range(5):
            tcfg = replace(config.train, seed=seed + 1)
            locals_ = [
                train_mlp(n.train, config.hidden_size,
                          replace(tcfg, seed=tcfg.seed + n.node_id),
                          dropout_rate=config.dropout_rate)
                for n in nodes
            ]
            result = aggregate_mlp(
                nodes, config.hidden_size, tcfg, config.epsilon_hidden,
                config.epsilon, replace(config.clusters, seed=seed),
                replace(config.search, seed=seed),
                dropout_rate=config.dropout_rate, local_models=locals_)
            sample = draw_public_sample(nodes, config.finetune.sample_size,
                                        seed)
            ft_cfg = replace(config.train, seed=seed)
            tuned_agg = accuracy(
                fine_tune(result.model, sample, config.finetune, ft_cfg), test)
            tuned_avg = accuracy(
                fine_tune(naive_average(locals_), sample, config.finetune,
                          ft_cfg), test)
            wins += tuned_agg >= tuned_avg
        ok = wins >= 3
        report("synthetic tuned aggregate vs tuned average", ok,
               f"{wins}/5 seeds")
        assert ok

    def test_small_sample_tuning_ordering(self):
        # with only 100 public samples, tuning the aggregate should beat both
        # a model trained from scratch on the sample and the tuned average
        from modelspaces.harness import run_tuning_sweep

        config = replace(load_config(CONFIG_DIR / "synthetic_nn_k5.json"),
                         trials=3)
        rows = run_tuning_sweep(config, [100])
        by_method = {r["method"]: r["mean"] for r in rows}
        agg = by_method["tuned-aggregate"]
        ok = agg > by_method["raw"] and agg > by_method["tuned-average"]
        report("synthetic 100-sample tuning ordering", ok,
               f"aggregate {agg:.3f} vs raw {by_method['raw']:.3f}, "
               f"average {by_method['tuned-average']:.3f}")
        assert ok

    def test_width_shrinks_as_tolerance_grows(self):
        config = load_config(CONFIG_DIR / "synthetic_nn_k5.json")
        settings = [(24, 0.25), (24, 0.5), (24, 1.0), (24, 2.0)]
        rows = size_sweep(config, settings)
        widths = [float(r["n_hidden_mean"]) for r in rows
                  if r["method"] != "ensemble"]
        inversions = sum(1 for a, b in zip(widths, widths[1:]) if b > a)
        ok = inversions <= 1
        report("synthetic width trend", ok,
               f"widths {widths}, {inversions} inversion(s)")
        assert ok
        ensemble = [r for r in rows if r["method"] == "ensemble"]
        ok2 = float(ensemble[0]["n_hidden_mean"]) == config.k * config.hidden_size
        report("synthetic ensemble width", ok2,
               f"{ensemble[0]['n_hidden_mean']} == {config.k * config.hidden_size}")
        assert ok2


class TestGeometryOracles:
    """Search and intersection against analytic and brute-force oracles."""

    def test_radius_recovery_twenty_instances(self):
        rng = np.random.default_rng(1)
        cfg = BallSearchConfig(r_max=16.0, delta=0.01, surface_samples=5,
                               seed=3)
        worst = 0.0
        for _ in range(20):
            d = int(rng.integers(2, 20))
            center = rng.normal(size=d)
            r_true = float(rng.uniform(0.5, 12.0))
            space = construct_space(
                center,
                lambda w: 1 if np.linalg.norm(w - center) <= r_true else -1,
                cfg=cfg)
            worst = max(worst, abs(space.base_radius - r_true))
        ok = worst <= cfg.delta
        report("sphere-oracle radius recovery", ok,
               f"worst error {worst:.4f} <= {cfg.delta}")
        assert ok

    def test_grid_oracle_agreement(self):
        def grid_verdict(spaces, resolution=400):
            lo = np.min([s.center - s.base_radius for s in spaces], axis=0)
            hi = np.max([s.center + s.base_radius for s in spaces], axis=0)
            xs = np.linspace(lo[0], hi[0], resolution)
            ys = np.linspace(lo[1], hi[1], resolution)
            XX, YY = np.meshgrid(xs, ys)
            pts = np.stack([XX.ravel(), YY.ravel()], axis=1)
            worst = np.full(len(pts), -np.inf)
            for s in spaces:
                over = np.linalg.norm(pts - s.center, axis=1) - s.base_radius
                worst = np.maximum(worst, over)
            margin = worst.min()
            cell = np.hypot((hi[0] - lo[0]) / (resolution - 1),
                            (hi[1] - lo[1]) / (resolution - 1))
            return bool(margin <= 0), bool(abs(margin) > cell)

        rng = np.random.default_rng(7)
        agreements = 0
        instances = 0
        membership_ok = True
        while instances < 50:
            n = int(rng.integers(2, 4))
            spaces = [ModelSpace(rng.uniform(0, 4, size=2),
                                 rng.uniform(0.5, 2.0), np.ones(2), node_id=i)
                      for i in range(n)]
            feasible, certified = grid_verdict(spaces)
            if not certified:
                continue
            instances += 1
            w, found = intersect(spaces)
            agreements += found == feasible
            if found:
                membership_ok &= all(s.membership_distance(w) <= 1 + 1e-6
                                     for s in spaces)
        ok = agreements == 50 and membership_ok
        report("grid-oracle intersection agreement", ok,
               f"{agreements}/50 verdicts, membership ok={membership_ok}")
        assert ok


class TestEllipsoidScaling:
    """Per-axis scaling from the empirical Fisher diagonal."""

    def test_uniform_fisher_is_a_ball(self):
        scales = axis_scales(FisherScales(np.full(6, 2.5), 0.1))
        ok = np.array_equal(scales, np.ones(6))
        report("uniform-fisher ball", ok, f"scales {scales}")
        assert ok

    def test_radii_within_floor_and_cap(self):
        rng = np.random.default_rng(4)
        ok = True
        for _ in range(50):
            fisher = rng.uniform(0.0, 5.0, size=12)
            c_floor = float(rng.uniform(0.05, 0.5))
            radius = float(rng.uniform(0.1, 8.0))
            radii = axis_scales(FisherScales(fisher, c_floor)) * radius
            ok &= bool(np.all(radii >= c_floor * radius - 1e-12)
                       and np.all(radii <= radius + 1e-12))
        report("axis radii bounds", ok, "50 random draws in [floor*R, R]")
        assert ok

    def test_fisher_matches_symbolic_gradients(self):
        xs = [0.5, -1.2, 2.0]
        ys = [0, 1, 1]
        W = np.array([[0.3, -0.7]])
        b = np.array([0.1, 0.4])
        w0, w1, b0, b1, x = sp.symbols("w0 w1 b0 b1 x")
        logits = [x * w0 + b0, x * w1 + b1]
        lse = sp.log(sp.exp(logits[0]) + sp.exp(logits[1]))
        params = [w0, w1, b0, b1]
        subs = {w0: W[0, 0], w1: W[0, 1], b0: b[0], b1: b[1]}
        expected = np.zeros(4)
        for xi, yi in zip(xs, ys):
            logp = logits[yi] - lse
            for i, p in enumerate(params):
                expected[i] += float(sp.diff(logp, p).subs(subs)
                                     .subs({x: xi})) ** 2 / len(xs)
        got = fisher_diagonal(
            LogisticModel(W, b),
            Dataset(np.array(xs).reshape(-1, 1), np.array(ys), 2))
        err = float(np.max(np.abs(got - expected)))
        ok = err <= 1e-8
        report("fisher vs symbolic gradients", ok, f"max error {err:.2e}")
        assert ok


class TestNeuronGateAndGradients:
    """Hand-computed gate cases and analytic-vs-numeric gradient checks."""

    def test_neuron_gate_hand_cases(self):
        rng = np.random.default_rng(0)
        inputs = rng.normal(size=(6, 3))
        w = rng.normal(size=4)
        own = np.maximum(inputs @ w[:-1] + w[-1], 0.0)
        zero_dev = neuron_gate(w, inputs, own, 0.0) == 1
        ones = np.ones((4, 2))
        unit_dev = (neuron_gate(np.zeros(3), ones, np.ones(4), 0.5) == -1
                    and neuron_gate(np.zeros(3), ones, np.ones(4), 1.0) == 1)
        ok = zero_dev and unit_dev
        report("neuron gate hand cases", ok,
               f"zero-deviation pass={zero_dev}, unit-deviation split={unit_dev}")
        assert ok

    def test_mlp_gradient_check(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(10, 5))
        Y = _onehot(rng.integers(0, 3, 10), 3)
        params = [rng.normal(size=(5, 4)), rng.normal(size=4),
                  rng.normal(size=(4, 3)), rng.normal(size=3)]
        _, *grads = mlp_loss_grads(*params, X, Y)
        worst = 0.0
        for p, g in zip(params, grads):
            flat = p.ravel()
            gf = g.ravel()
            for i in range(len(flat)):
                orig = flat[i]
                flat[i] = orig + 1e-6
                fp = mlp_loss_grads(*params, X, Y)[0]
                flat[i] = orig - 1e-6
                fm = mlp_loss_grads(*params, X, Y)[0]
                flat[i] = orig
                num = (fp - fm) / 2e-6
                worst = max(worst, abs(num - gf[i]) / max(1.0, abs(num)))
        ok = worst <= 1e-5
        report("mlp gradient check", ok, f"worst relative error {worst:.2e}")
        assert ok


@requires_mnist
class TestThresholdGrid:
    """Two-node threshold grid: where intersections appear and disappear."""

    def test_low_pairs_intersect(self, grid_run):
        rows, _ = grid_run
        low = [r for r in rows
               if float(r["eps_node0"]) <= 0.3 and float(r["eps_node1"]) <= 0.3]
        ok = all(r["found"] == "true" for r in low)
        report("grid low pairs intersect", ok,
               f"{sum(r['found'] == 'true' for r in low)}/{len(low)} found")
        assert ok

    def test_high_pair_fails(self, grid_run):
        rows, _ = grid_run
        cell = next(r for r in rows
                    if r["eps_node0"] == "0.9" and r["eps_node1"] == "0.9")
        ok = cell["found"] == "false"
        report("grid (0.9, 0.9) no intersection", ok,
               f"found={cell['found']}; desk-scale node validation accuracy "
               "is ~0.95, so balls at 0.9 keep radii ~9-12 against a center "
               "gap of ~7.4 and still intersect; the no-intersection cliff "
               "sits at ~0.94-0.95 here, pinned by the companion test")
        assert ok

    def test_cliff_exists_near_validation_accuracy(self):
        # the phenomenon itself: tight thresholds near the models' own
        # validation accuracy do extinguish the intersection
        config = load_config(CONFIG_DIR / "mnist_epsilon_grid_k2.json")
        rows = epsilon_grid(config, [0.95])
        ok = rows[0]["found"] == "false"
        report("grid cliff near validation accuracy", ok,
               f"(0.95, 0.95) found={rows[0]['found']}")
        assert ok

    def test_asymmetric_pairs_hug_the_stricter_node(self, grid_run):
        rows, _ = grid_run
        ok = True
        checked = 0
        for r in rows:
            e0, e1 = float(r["eps_node0"]), float(r["eps_node1"])
            if r["found"] != "true" or e0 == e1 or not r["dist_node0"]:
                continue
            d0, d1 = float(r["dist_node0"]), float(r["dist_node1"])
            checked += 1
            ok &= (d0 < d1) if e0 > e1 else (d1 < d0)
        report("grid asymmetric pairs hug stricter node", ok,
               f"{checked} asymmetric cells checked")
        assert ok and checked > 0

    def test_runtime_budget(self, grid_run):
        _, elapsed = grid_run
        ok = elapsed < 30 * 60
        report("grid runtime", ok, f"{elapsed:.0f}s < 1800s")
        assert ok


@requires_mnist
class TestProtocolAudit:
    """Message accounting: upstream rounds and broadcasts per variant."""

    def test_convex_single_upstream_round(self, convex_run):
        summary, _ = convex_run
        audit = comm_audit(summary.reports[0].messages)
        ok = (audit["upstream_rounds"] == 1 and audit["broadcasts"] == 0
              and audit["phases"]["spaces"]["messages"] == 5)
        report("protocol convex", ok,
               f"{audit['upstream_rounds']} upstream round(s), "
               f"{audit['phases']['spaces']['messages']} messages")
        assert ok

    def test_nn_two_rounds_plus_broadcast(self, nn_run):
        summary, _ = nn_run
        audit = comm_audit(summary.reports[0].messages)
        ok = (audit["upstream_rounds"] == 2 and audit["broadcasts"] == 1
              and audit["phases"]["hidden-spaces"]["messages"] == 5
              and audit["phases"]["output-spaces"]["messages"] == 5)
        report("protocol nn", ok,
               f"{audit['upstream_rounds']} upstream rounds, "
               f"{audit['broadcasts']} broadcast(s)")
        assert ok
