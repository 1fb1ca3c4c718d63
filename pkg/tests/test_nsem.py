"""Continuous structure learner: penalty math, training, thresholding."""

import math
from itertools import product

import numpy as np
import pytest

from buildcause import simulate as sim
from buildcause.graph import (
    StructuralConstraints,
    Variable,
    VarKind,
    edge_confusion,
    is_acyclic,
)
from buildcause.nsem import (
    NonFinite,
    NsemConfig,
    adaptive_threshold,
    dag_penalty,
    dag_penalty_grad,
    forbidden_entry_mask,
    nsem_discover,
    nsem_loss,
    nsem_loss_grad,
    standardize,
    threshold_edges,
    train,
    write_weights_csv,
)
from buildcause.scenario import base_scenario, largesim_scenario

from conftest import reachability_has_cycle


def toy_vars(k):
    return tuple(Variable(f"X{i}", VarKind.INPUT, "u", (-1e9, 1e9)) for i in range(k))


class TestDagPenalty:
    def test_zero_matrix(self):
        assert dag_penalty(np.zeros((4, 4))) == 0.0

    def test_upper_triangular_is_acyclic(self):
        rng = np.random.default_rng(0)
        w = np.triu(rng.uniform(-2.0, 2.0, (6, 6)), k=1)
        assert abs(dag_penalty(w)) < 1e-10

    def test_two_cycle_closed_form(self):
        w = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert abs(dag_penalty(w) - 2.0 * (math.cosh(1.0) - 1.0)) < 1e-6

    def test_zero_iff_acyclic_support_exhaustive_n3(self):
        # every possible support on three nodes, unit weights
        pairs = [(i, j) for i in range(3) for j in range(3) if i != j]
        for bits in product([0, 1], repeat=6):
            w = np.zeros((3, 3))
            edges = set()
            for bit, (i, j) in zip(bits, pairs):
                if bit:
                    w[i, j] = 1.0
                    edges.add((i, j))
            h = dag_penalty(w)
            assert h >= -1e-12
            if reachability_has_cycle(3, edges):
                assert h > 1e-6
            else:
                assert abs(h) < 1e-10

    def test_penalty_grows_with_cycle_weight(self):
        small = np.array([[0.0, 0.5], [0.5, 0.0]])
        large = np.array([[0.0, 2.0], [2.0, 0.0]])
        assert dag_penalty(large) > dag_penalty(small)


class TestLoss:
    def test_zero_matrix_reconstruction_is_dimension(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4000, 5))
        w = np.ones(4000)
        xs = standardize(x, w)
        cfg = NsemConfig()
        loss = nsem_loss(np.zeros((5, 5)), xs, w, cfg, gamma=1.0)
        assert abs(loss - 5.0) < 0.01  # recon by zero = sum of unit variances

    def test_loss_dominates_l1_term(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((100, 3))
        w = np.ones(100)
        cfg = NsemConfig()
        for _ in range(10):
            m = rng.uniform(-2, 2, (3, 3))
            np.fill_diagonal(m, 0.0)
            assert nsem_loss(m, x, w, cfg) >= cfg.lambda1 * np.abs(m).sum()

    def test_true_weights_are_local_minimum(self):
        # noiseless linear system: the generating matrix reconstructs its
        # structural columns exactly, so perturbing those columns can only
        # raise the error (the root column is excluded; predicting a root
        # from its descendants is a different, legitimately better fit)
        rng = np.random.default_rng(3)
        n = 5000
        w_true = np.zeros((3, 3))
        w_true[0, 1], w_true[0, 2], w_true[1, 2] = 0.8, -0.6, 0.5
        x = np.zeros((n, 3))
        x[:, 0] = rng.standard_normal(n)
        x[:, 1] = x[:, 0] * w_true[0, 1]
        x[:, 2] = x @ w_true[:, 2]
        wts = np.ones(n)
        cfg = NsemConfig(lambda1=1e-12, lambda2=1e-12, gamma=1e-12)
        at_truth = nsem_loss(w_true, x, wts, cfg, gamma=0.0)
        for _ in range(100):
            delta = np.zeros((3, 3))
            delta[:, 1:] = rng.uniform(-0.1, 0.1, (3, 2))
            np.fill_diagonal(delta, 0.0)
            assert at_truth <= nsem_loss(w_true + delta, x, wts, cfg, gamma=0.0)

    def test_gradient_matches_central_differences(self):
        cfg = NsemConfig()
        worst = 0.0
        for rep in range(20):
            rng = np.random.default_rng(100 + rep)
            k = int(rng.integers(3, 6))
            x = rng.standard_normal((40, k))
            wts = rng.uniform(0.5, 2.0, 40)
            w = rng.uniform(0.1, 1.0, (k, k)) * rng.choice([-1.0, 1.0], (k, k))
            np.fill_diagonal(w, 0.0)
            grad = nsem_loss_grad(w, x, wts, cfg, gamma=0.7)
            eps = 1e-5
            for i in range(k):
                for j in range(k):
                    if i == j:
                        continue
                    wp, wm = w.copy(), w.copy()
                    wp[i, j] += eps
                    wm[i, j] -= eps
                    num = (
                        nsem_loss(wp, x, wts, cfg, 0.7)
                        - nsem_loss(wm, x, wts, cfg, 0.7)
                    ) / (2 * eps)
                    rel = abs(grad[i, j] - num) / max(abs(num), 1e-8)
                    worst = max(worst, rel)
        assert worst < 1e-4

    def test_dag_penalty_grad_closed_form(self):
        rng = np.random.default_rng(9)
        w = rng.uniform(-1, 1, (4, 4))
        np.fill_diagonal(w, 0.0)
        grad = dag_penalty_grad(w)
        eps = 1e-6
        for i, j in [(0, 1), (2, 3), (1, 0)]:
            wp, wm = w.copy(), w.copy()
            wp[i, j] += eps
            wm[i, j] -= eps
            num = (dag_penalty(wp) - dag_penalty(wm)) / (2 * eps)
            assert abs(grad[i, j] - num) < 1e-6


class TestTraining:
    def test_two_variable_direction(self):
        rng = np.random.default_rng(1)
        x1 = rng.standard_normal(5000)
        x2 = 0.9 * x1 + rng.standard_normal(5000)
        res = train(np.column_stack([x1, x2]), cfg=NsemConfig(seed=1))
        assert abs(res.weights[0, 1]) > 0.5
        assert abs(res.weights[1, 0]) < 0.1

    def test_pure_noise_stays_sparse(self):
        rng = np.random.default_rng(55)
        for seed in range(10):
            x = rng.standard_normal((2000, 4))
            res = train(x, cfg=NsemConfig(seed=seed))
            assert np.abs(res.weights).max() < 0.15

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((500, 3))
        a = train(x, cfg=NsemConfig(seed=7))
        b = train(x, cfg=NsemConfig(seed=7))
        assert np.array_equal(a.weights, b.weights)
        assert a.losses == b.losses and a.best_restart == b.best_restart

    def test_best_restart_has_lowest_loss(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((400, 3))
        x[:, 2] += x[:, 0]
        res = train(x, cfg=NsemConfig(seed=0))
        assert len(res.losses) == 3
        assert res.losses[res.best_restart] == min(res.losses)

    def test_diagonal_stays_zero(self):
        rng = np.random.default_rng(6)
        res = train(rng.standard_normal((300, 4)), cfg=NsemConfig(seed=0))
        assert np.all(np.diag(res.weights) == 0.0)

    def test_divergence_raises(self):
        rng = np.random.default_rng(0)
        with pytest.raises(NonFinite):
            train(rng.standard_normal((200, 3)), cfg=NsemConfig(lr_primary=50.0))

    def test_requires_full_batch(self):
        with pytest.raises(ValueError):
            train(np.zeros((10, 3)), cfg=NsemConfig(batch_size=32))

    def test_weighted_rows_steer_the_fit(self):
        # the same rows weighted up should pull the coefficient toward them
        rng = np.random.default_rng(8)
        x0 = rng.standard_normal(2000)
        strong = np.column_stack([x0, 0.9 * x0 + 0.2 * rng.standard_normal(2000)])
        weak = rng.standard_normal((2000, 2))
        values = np.vstack([strong, weak])
        flat = train(values, cfg=NsemConfig(seed=1))
        wts = np.concatenate([np.full(2000, 5.0), np.full(2000, 0.05)])
        tilted = train(values, wts, NsemConfig(seed=1))
        assert np.abs(tilted.weights).max() > np.abs(flat.weights).max()

    def test_gamma_schedule(self):
        cfg = NsemConfig()
        assert cfg.gamma_at(0) == pytest.approx(0.1)
        assert cfg.gamma_at(49) == pytest.approx(0.1)
        assert cfg.gamma_at(50) == pytest.approx(1.0)
        assert cfg.gamma_at(199) == pytest.approx(100.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NsemConfig(lambda1=0.0)
        with pytest.raises(ValueError):
            NsemConfig(epochs=0)
        with pytest.raises(ValueError):
            NsemConfig(restarts=0)

    def test_forbidden_mask_pins_entries(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((600, 3))
        x[:, 1] += 0.9 * x[:, 0]
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 1] = True
        res = train(x, cfg=NsemConfig(seed=0), forbidden_mask=mask)
        assert res.weights[0, 1] == 0.0

    def test_nonlinear_head_keeps_linear_signal(self):
        rng = np.random.default_rng(1)
        x1 = rng.standard_normal(3000)
        x2 = 0.9 * x1 + 0.3 * np.abs(x1) + rng.standard_normal(3000)
        x = np.column_stack([x1, x2])
        res = train(x, cfg=NsemConfig(seed=1, nonlinear_head=True))
        assert abs(res.weights[0, 1]) > 0.5
        assert abs(res.weights[1, 0]) < 0.1
        again = train(x, cfg=NsemConfig(seed=1, nonlinear_head=True))
        assert np.array_equal(res.weights, again.weights)


class TestThreshold:
    def test_gap_rule_example(self):
        w = np.zeros((3, 3))
        w[0, 1], w[1, 0], w[0, 2], w[2, 0] = 0.9, 0.85, 0.05, 0.02
        tau = adaptive_threshold(w)
        assert 0.05 < tau < 0.85
        mask = ~np.eye(3, dtype=bool)
        assert (np.abs(w[mask]) > tau).sum() == 2  # rule keeps the two strongest

    def test_gap_rule_keeps_two_acyclic_edges(self):
        w = np.zeros((4, 4))
        w[0, 1], w[2, 3], w[0, 2], w[3, 0] = 0.9, 0.85, 0.05, 0.02
        g = threshold_edges(w, toy_vars(4))
        assert set(g.edges) == {(0, 1), (2, 3)}

    def test_zero_matrix_gives_empty_graph(self):
        g = threshold_edges(np.zeros((4, 4)), toy_vars(4))
        assert g.edges == frozenset()

    def test_fallback_threshold_with_few_magnitudes(self):
        w = np.zeros((3, 3))
        w[0, 1], w[1, 2] = 0.5, 0.05
        assert adaptive_threshold(w) == 0.1
        g = threshold_edges(w, toy_vars(3))
        assert set(g.edges) == {(0, 1)}

    def test_cycle_repair_drops_weaker_direction(self):
        w = np.zeros((2, 2))
        w[0, 1], w[1, 0] = 0.9, 0.3
        g = threshold_edges(w, toy_vars(2))
        assert set(g.edges) == {(0, 1)}

    def test_three_cycle_repair(self):
        w = np.zeros((3, 3))
        w[0, 1], w[1, 2], w[2, 0] = 0.9, 0.8, 0.7
        w[1, 0] = 0.65  # distinct values keep the gap rule away from 0.1
        g = threshold_edges(w, toy_vars(3))
        assert is_acyclic(g)
        assert (2, 0) not in g.edges  # weakest edge of the cycle goes

    def test_constraints_filter_output_sources(self):
        variables = (
            Variable("in", VarKind.INPUT, "u", (0.0, 1.0)),
            Variable("out", VarKind.OUTPUT, "u", (0.0, 1.0)),
        )
        w = np.zeros((2, 2))
        w[1, 0] = 0.9
        g = threshold_edges(w, variables, StructuralConstraints())
        assert g.edges == frozenset()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            threshold_edges(np.zeros((3, 3)), toy_vars(4))

    def test_kept_support_has_zero_penalty(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((1000, 4))
        x[:, 2] += 0.8 * x[:, 0] + 0.7 * x[:, 1]
        x[:, 3] += 0.9 * x[:, 2]
        res = train(x, cfg=NsemConfig(seed=0))
        g = threshold_edges(res.weights, toy_vars(4))
        support = np.zeros((4, 4))
        for i, j in g.edges:
            support[i, j] = res.weights[i, j]
        assert dag_penalty(support) < 1e-8


class TestMask:
    def test_mask_contents(self):
        variables = (
            Variable("a", VarKind.INPUT, "u", (0.0, 1.0)),
            Variable("b", VarKind.MEDIATOR, "u", (0.0, 1.0)),
            Variable("c", VarKind.OUTPUT, "u", (0.0, 1.0)),
        )
        cons = StructuralConstraints(
            forbidden_edges=frozenset({(0, 1)}),
            required_orientations=frozenset({(1, 2)}),
        )
        mask = forbidden_entry_mask(variables, cons)
        assert mask.diagonal().all()
        assert mask[2, :].all()  # outputs cannot be sources
        assert mask[0, 1]  # explicitly forbidden
        assert mask[2, 1]  # reverse of a required orientation
        assert not mask[1, 2] and not mask[0, 2]

    def test_no_constraints_masks_only_diagonal(self):
        mask = forbidden_entry_mask(toy_vars(3), None)
        assert mask.sum() == 3


class TestScenarioIntegration:
    def test_base_recovery(self):
        spec = base_scenario()
        batch = sim.simulate_batch(spec, 2000, seed=42)
        graph, res = nsem_discover(
            batch.values, batch.weights, spec.variables(), spec.constraints(),
            NsemConfig(seed=0),
        )
        assert set(graph.edges) == set(spec.ground_truth().edges)
        assert res.losses[res.best_restart] == min(res.losses)

    def test_largesim_proposes_only_true_edges(self):
        spec = largesim_scenario()
        batch = sim.simulate_batch(spec, 2000, seed=42)
        graph, _ = nsem_discover(
            batch.values, batch.weights, spec.variables(), spec.constraints(),
            NsemConfig(seed=0),
        )
        conf = edge_confusion(spec.ground_truth(), graph)
        assert conf.fp == 0 and conf.tp >= 1

    def test_weights_csv_dump(self, tmp_path):
        w = np.array([[0.0, 0.5], [0.0, 0.0]])
        path = tmp_path / "w.csv"
        write_weights_csv(w, ("a", "b"), str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "source,a,b"
        assert lines[1].startswith("a,0.0,0.5")
