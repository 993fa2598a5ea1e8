import json
import math

import numpy as np
import pytest

from hnf.data import make_synthetic_blobs
from hnf.errors import ConfigError, ParameterError, ResourceError, StateError
from hnf.layers import vn_expand
from hnf.matrixgen import make_random_orthonormal
from hnf.solvers import (
    AdmmConfig,
    OutputMap,
    admm_constrained_ls,
    epsilon_first_layer,
    least_squares,
)
from hnf.trainer import (
    TrainConfig,
    accuracy,
    evaluate,
    plan_widths,
    train,
    verify_invariants,
)


@pytest.fixture(scope="module")
def blobs():
    return make_synthetic_blobs(8, 3, 500, separation=6.0, seed=3)


def monotone(costs, slack=1e-8):
    return all(b <= a + slack * (1.0 + a) for a, b in zip(costs, costs[1:]))


class TestPlanWidths:
    def test_default_rule_doubles(self):
        cfg = TrainConfig(n1=16, depth=3)
        plan = plan_widths(8, cfg)
        assert plan == [(1, 16, 8), (2, 32, 32), (3, 64, 64)]

    def test_elm_plan_starts_at_two(self):
        cfg = TrainConfig(n1=20, depth=3, elm_front=True)
        plan = plan_widths(8, cfg)
        assert plan == [(2, 20, 20), (3, 40, 40)]

    def test_custom_width_rule(self):
        cfg = TrainConfig(n1=16, depth=2, width_rule=lambda l, m: m + 3)
        assert plan_widths(8, cfg) == [(1, 16, 8), (2, 35, 32)]

    def test_width_rule_below_fan_in_rejected(self):
        cfg = TrainConfig(n1=16, depth=2, width_rule=lambda l, m: m - 1)
        with pytest.raises(ConfigError):
            plan_widths(8, cfg)


class TestTrain:
    @pytest.mark.parametrize("kind", ["random", "dct"])
    def test_costs_non_increasing_and_certified(self, blobs, kind):
        cfg = TrainConfig(n1=16, depth=3, weight_kind=kind, seed=1)
        net, maps, report = train(blobs, cfg)
        costs = [r.train_cost for r in report.rows()]
        assert len(costs) == 4
        assert monotone(costs)
        assert report.monotonicity_certified
        assert net.depth == 3
        assert len(maps) == 4

    def test_depth_one_equals_direct_constrained_solve(self, blobs):
        cfg = TrainConfig(n1=16, depth=1, seed=2)
        net, maps, report = train(blobs, cfg)

        w = make_random_orthonormal(16, 8, seed=cfg.seed + 1)
        assert np.array_equal(net.layers[0].weight.entries, w.entries)
        baseline = least_squares(blobs.X_train, blobs.T_train, 0.0)
        eps = epsilon_first_layer(baseline, w)
        feats = vn_expand(w.entries @ blobs.X_train)
        direct = admm_constrained_ls(
            feats, blobs.T_train, eps, AdmmConfig(), layer_index=1)
        expect = direct.matrix
        if direct.train_cost > maps[1].train_cost:
            pytest.fail("trainer should never beat the identical solve")
        assert np.allclose(maps[1].matrix, expect, atol=1e-12)
        assert report.per_layer[0].epsilon == pytest.approx(eps, rel=1e-12)

    def test_n1_below_input_dim_rejected(self, blobs):
        with pytest.raises(ConfigError):
            train(blobs, TrainConfig(n1=4, depth=1))

    def test_depth_zero_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(n1=16, depth=0)

    def test_deterministic_reports(self, blobs):
        cfg = TrainConfig(n1=16, depth=2, seed=5)
        _, _, a = train(blobs, cfg)
        _, _, b = train(blobs, cfg)
        for ra, rb in zip(a.rows(), b.rows()):
            da, db = ra.as_dict(), rb.as_dict()
            da.pop("wall_ms"), db.pop("wall_ms")
            assert da == db

    def test_nodes_accounting(self, blobs):
        cfg = TrainConfig(n1=16, depth=3, seed=1)
        _, _, report = train(blobs, cfg)
        assert report.baseline.nodes_cumulative == 0
        expected = np.cumsum([2 * 16, 2 * 32, 2 * 64])
        assert [r.nodes_cumulative for r in report.per_layer] == list(expected)

    def test_epsilon_schedules(self, blobs):
        exact_cfg = TrainConfig(n1=16, depth=3, seed=1, eps_schedule="exact")
        doubling_cfg = TrainConfig(n1=16, depth=3, seed=1,
                                   eps_schedule="doubling")
        _, maps_e, rep_e = train(blobs, exact_cfg)
        _, _, rep_d = train(blobs, doubling_cfg)

        for i, rec in enumerate(rep_e.per_layer):
            if i == 0:
                continue
            prev_norm2 = float(np.sum(maps_e[i].matrix ** 2))
            assert rec.epsilon == pytest.approx(2.0 * prev_norm2, rel=1e-9)

        eps1 = rep_d.per_layer[0].epsilon
        for l, rec in enumerate(rep_d.per_layer, start=1):
            assert rec.epsilon == pytest.approx(2 ** (l - 1) * eps1, rel=1e-12)

        for re_, rd in zip(rep_e.per_layer, rep_d.per_layer):
            assert rd.epsilon >= re_.epsilon * (1 - 1e-12)

    def test_memory_budget_names_layer(self, blobs):
        cfg = TrainConfig(n1=16, depth=3, seed=1, memory_budget=200_000)
        with pytest.raises(ResourceError, match="layer"):
            train(blobs, cfg)

    def test_standardize_recorded(self, blobs):
        cfg = TrainConfig(n1=16, depth=1, seed=1, standardize=True)
        _, _, report = train(blobs, cfg)
        params = report.meta["standardize_params"]
        assert params is not None
        assert len(params["mu"]) == blobs.input_dim
        assert report.monotonicity_certified

    def test_elm_front_chain(self, blobs):
        cfg = TrainConfig(n1=32, depth=3, elm_front=True, seed=4)
        net, maps, report = train(blobs, cfg)
        assert net.has_front
        assert net.depth == 3
        costs = [r.train_cost for r in report.rows()]
        assert monotone(costs)
        assert report.monotonicity_certified
        assert report.baseline.nodes_cumulative == 32
        assert [r.layer for r in report.per_layer] == [2, 3]
        assert [r.nodes_cumulative for r in report.per_layer] == [
            32 + 2 * 32, 32 + 2 * 32 + 2 * 64]

    def test_elm_front_needs_depth_two(self):
        with pytest.raises(ConfigError):
            TrainConfig(n1=8, depth=1, elm_front=True)

    def test_warm_start_still_certified(self, blobs):
        cfg = TrainConfig(n1=16, depth=3, seed=1,
                          admm=AdmmConfig(warm_start=True))
        _, _, report = train(blobs, cfg)
        assert report.monotonicity_certified
        assert monotone([r.train_cost for r in report.rows()])

    def test_elm_front_with_dct_tail(self, blobs):
        cfg = TrainConfig(n1=24, depth=3, weight_kind="dct",
                          elm_front=True, seed=2)
        net, _, report = train(blobs, cfg)
        assert net.has_front
        assert all(l.weight.kind.name == "DCT_ORTHONORMAL"
                   for l in net.layers[1:])
        assert report.monotonicity_certified
        assert monotone([r.train_cost for r in report.rows()])

    def test_custom_width_rule_through_training(self, blobs):
        cfg = TrainConfig(n1=16, depth=2, seed=1,
                          width_rule=lambda l, m: m + 4)
        net, _, report = train(blobs, cfg)
        assert report.monotonicity_certified
        assert net.layers[1].weight.rows == 36
        assert net.layers[1].weight.cols == 32
        assert report.per_layer[1].nodes_cumulative == 2 * 16 + 2 * 36


class TestEvaluate:
    def test_perfect_predictor(self):
        ds = make_synthetic_blobs(4, 2, 10, separation=50.0, seed=0)
        cfg = TrainConfig(n1=4, depth=1, seed=0)
        net, maps, _ = train(ds, cfg)
        ev = evaluate(net, maps, ds, layer=1, split="train")
        assert ev.accuracy == 1.0

    def test_zero_map_accuracy_is_class_zero_frequency(self, blobs):
        cfg = TrainConfig(n1=16, depth=1, seed=1)
        net, maps, _ = train(blobs, cfg)
        zero = OutputMap(np.zeros_like(maps[1].matrix), 1.0, 0.0, 1)
        labels = np.argmax(blobs.T_test, axis=0)
        freq0 = float(np.mean(labels == 0))
        ev = evaluate(net, [maps[0], zero], blobs, layer=1)
        assert ev.accuracy == pytest.approx(freq0)

    def test_train_split_cost_matches_solver(self, blobs):
        cfg = TrainConfig(n1=16, depth=2, seed=1)
        net, maps, report = train(blobs, cfg)
        for layer, rec in enumerate(report.per_layer, start=1):
            ev = evaluate(net, maps, blobs, layer=layer, split="train")
            assert ev.cost == pytest.approx(rec.train_cost, rel=1e-9)
        ev0 = evaluate(net, maps, blobs, layer=0, split="train")
        assert ev0.cost == pytest.approx(report.baseline.train_cost, rel=1e-9)

    def test_missing_layer_is_state_error(self, blobs):
        cfg = TrainConfig(n1=16, depth=1, seed=1)
        net, maps, _ = train(blobs, cfg)
        with pytest.raises(StateError):
            evaluate(net, maps, blobs, layer=99)

    def test_elm_baseline_uses_front_features(self, blobs):
        cfg = TrainConfig(n1=32, depth=2, elm_front=True, seed=4)
        net, maps, report = train(blobs, cfg)
        ev = evaluate(net, maps, blobs, layer=0, split="train")
        assert ev.cost == pytest.approx(report.baseline.train_cost, rel=1e-9)


class TestVerifyInvariants:
    def test_fresh_net_passes(self, blobs):
        cfg = TrainConfig(n1=16, depth=3, seed=1)
        net, _, _ = train(blobs, cfg)
        rep = verify_invariants(net, blobs, trials=50, seed=0)
        assert rep.passed
        by_name = {c.name: c for c in rep.checks}
        assert by_name["distance_sandwich_lower"].worst_margin >= 0
        assert by_name["inversion_round_trip"].violations == 0

    def test_zero_trials_rejected(self, blobs):
        cfg = TrainConfig(n1=16, depth=1, seed=1)
        net, _, _ = train(blobs, cfg)
        with pytest.raises(ParameterError):
            verify_invariants(net, blobs, trials=0)

    def test_elm_front_checks_subchain(self, blobs):
        cfg = TrainConfig(n1=32, depth=2, elm_front=True, seed=4)
        net, _, _ = train(blobs, cfg)
        rep = verify_invariants(net, blobs, trials=20, seed=0)
        assert rep.passed


class TestReportSerialization:
    def test_jsonl_and_csv(self, tmp_path, blobs):
        cfg = TrainConfig(n1=16, depth=2, seed=1)
        _, _, report = train(blobs, cfg)
        jpath = tmp_path / "report.jsonl"
        cpath = tmp_path / "report.csv"
        report.to_jsonl(jpath)
        report.to_csv(cpath)

        lines = jpath.read_text().splitlines()
        assert len(lines) == 3
        rows = [json.loads(line) for line in lines]
        assert rows[0]["layer"] == 0
        assert rows[0]["epsilon"] is None
        assert rows[1]["epsilon"] > 0
        assert rows[1]["train_cost"] == report.per_layer[0].train_cost

        csv_lines = cpath.read_text().splitlines()
        assert csv_lines[0].startswith("layer,nodes_cumulative")
        assert len(csv_lines) == 4

    def test_accuracy_tie_breaks_low(self):
        pred = np.array([[1.0, 0.5], [1.0, 0.5]])
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert accuracy(pred, t) == 0.5


class TestCertificationInternals:
    def test_witness_dominance_recorded(self, blobs):
        cfg = TrainConfig(n1=16, depth=3, seed=1)
        _, maps, _ = train(blobs, cfg)
        for om in maps[1:]:
            assert math.isfinite(om.epsilon)
            assert float(np.sum(om.matrix ** 2)) <= om.epsilon * (1 + 1e-6)
