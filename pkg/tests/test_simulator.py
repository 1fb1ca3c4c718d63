"""Simulator behavior: determinism, clamp semantics, noise calibration."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from buildcause import simulate as sim
from buildcause.scenario import (
    ScenarioSpec,
    base_scenario,
    complexity_score,
    hidden_scenario,
    largesim_scenario,
    load_scenario,
    noisy_scenario,
)
from buildcause.simulate import (
    NotIntervenable,
    OutOfBounds,
    Sample,
    SampleBatch,
    parse_regime,
    read_samples_csv,
    write_samples_csv,
)


class TestSamples:
    def test_regime_labels(self):
        s = Sample({"a": 1.0})
        assert s.regime_label == "obs"
        s = Sample({"a": 1.0}, 2.0, ("Temperature", 30.0))
        assert s.regime_label == "do:Temperature=30"
        assert parse_regime("obs") is None
        assert parse_regime("do:Temperature=30") == ("Temperature", 30.0)
        with pytest.raises(ValueError):
            parse_regime("nonsense")

    def test_weight_must_be_positive(self):
        with pytest.raises(ValueError):
            Sample({"a": 1.0}, weight=0.0)

    def test_batch_round_trip(self):
        samples = [
            Sample({"x": 1.0, "y": 2.0}, 1.0, None),
            Sample({"x": 3.0, "y": 4.0}, 2.0, ("x", 3.0)),
        ]
        batch = SampleBatch.from_samples(samples)
        assert batch.n_rows == 2
        assert np.array_equal(batch.column("y"), [2.0, 4.0])
        back = batch.to_samples()
        assert back == samples

    def test_batch_validation(self):
        with pytest.raises(ValueError):
            SampleBatch(("x",), np.zeros((2, 2)), np.ones(2), (None, None))
        with pytest.raises(ValueError):
            SampleBatch(("x", "y"), np.zeros((2, 2)), np.ones(3), (None, None))
        with pytest.raises(ValueError):
            SampleBatch(("x", "y"), np.zeros((2, 2)), np.array([1.0, -1.0]), (None, None))

    def test_concat_requires_same_columns(self):
        a = SampleBatch(("x",), np.zeros((1, 1)), np.ones(1), (None,))
        b = SampleBatch(("y",), np.zeros((1, 1)), np.ones(1), (None,))
        with pytest.raises(ValueError):
            a.concat(b)
        c = a.concat(a)
        assert c.n_rows == 2

    def test_csv_round_trip_is_exact(self, tmp_path):
        spec = base_scenario()
        batch = sim.simulate_batch(spec, 50, seed=5)
        batch.weights[10] = 2.0
        ivs = list(batch.interventions)
        ivs[3] = ("Temperature", 28.5)
        batch.interventions = tuple(ivs)
        path = tmp_path / "samples.csv"
        write_samples_csv(batch, str(path))
        back = read_samples_csv(str(path))
        assert back.names == batch.names
        assert np.array_equal(back.values, batch.values)  # repr round-trips floats
        assert np.array_equal(back.weights, batch.weights)
        assert back.interventions == batch.interventions

    def test_csv_header_layout(self, tmp_path):
        batch = sim.simulate_batch(base_scenario(), 3, seed=0)
        path = tmp_path / "s.csv"
        write_samples_csv(batch, str(path))
        header = path.read_text().splitlines()[0].split(",")
        assert header[-2:] == ["weight", "regime"]
        assert tuple(header[:-2]) == batch.names

    def test_csv_reader_accepts_plain_tables(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("a,b\n1.0,2.0\n3.0,4.0\n")
        batch = read_samples_csv(str(path))
        assert batch.names == ("a", "b")
        assert np.array_equal(batch.weights, [1.0, 1.0])
        assert batch.interventions == (None, None)


class TestDeterminism:
    def test_same_seed_same_trajectory(self):
        spec = base_scenario()
        a = sim.simulate_batch(spec, 500, seed=7)
        b = sim.simulate_batch(spec, 500, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_different_seeds_differ(self):
        spec = base_scenario()
        a = sim.simulate_batch(spec, 100, seed=1)
        b = sim.simulate_batch(spec, 100, seed=2)
        assert not np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("make", [base_scenario, noisy_scenario, hidden_scenario, largesim_scenario])
    def test_window_partition_invariance(self, make):
        # splitting a run into windows must not change the trajectory
        spec = make()
        whole = sim.simulate_batch(spec, 400, seed=11).values
        state = sim.init_state(spec, 11)
        parts = np.vstack([sim.run_window(spec, state, k) for k in (13, 187, 200)])
        assert np.allclose(whole, parts)

    def test_all_scenarios_finite(self):
        for make in (base_scenario, noisy_scenario, hidden_scenario, largesim_scenario):
            spec = make()
            vals = sim.simulate_batch(spec, 300, seed=3).values
            assert vals.shape == (300, spec.n_vars)
            assert np.isfinite(vals).all()


class TestDoSemantics:
    def test_clamp_holds_and_downstream_responds(self):
        spec = base_scenario()
        state = sim.init_state(spec, 3)
        pre = sim.run_window(spec, state, 2000)
        sim.set_do(state, spec, "Temperature", 30.0)
        post = sim.run_window(spec, state, 2000)
        assert np.all(post[:, 0] == 30.0)
        # |30 - 22| far exceeds the stationary mean distance, so load rises
        assert post[:, 3].mean() > pre[:, 3].mean() + 5.0

    def test_clear_do_resumes_from_clamp(self):
        spec = base_scenario()
        state = sim.init_state(spec, 3)
        sim.run_window(spec, state, 50)
        sim.set_do(state, spec, "Temperature", 29.0)
        sim.run_window(spec, state, 10)
        sim.set_do(state, spec, "Temperature", None)
        assert state.do_values == {}
        assert state.temp[0] == 29.0  # latent continues from the held value
        nxt = sim.step(spec, state)
        assert nxt["Temperature"] != 29.0

    def test_apply_do_is_functional(self):
        spec = base_scenario()
        state = sim.init_state(spec, 9)
        sim.run_window(spec, state, 20)
        clamped = sim.apply_do(state, spec, "AirQuality", 500.0)
        assert clamped is not state
        assert "AirQuality" not in state.do_values
        assert clamped.do_values == {"AirQuality": 500.0}
        assert sim.observe(spec, clamped)["AirQuality"] == 500.0

    def test_outputs_reject_interventions(self):
        spec = base_scenario()
        state = sim.init_state(spec, 0)
        with pytest.raises(NotIntervenable):
            sim.set_do(state, spec, "EnergyConsumption", 50.0)
        with pytest.raises(NotIntervenable):
            sim.set_do(state, spec, "OverallSatisfaction", 50.0)

    def test_bounds_enforced(self):
        spec = base_scenario()
        state = sim.init_state(spec, 0)
        with pytest.raises(OutOfBounds):
            sim.set_do(state, spec, "Temperature", 99.0)
        with pytest.raises(OutOfBounds):
            sim.set_do(state, spec, "Humidity", 10.0)
        with pytest.raises(KeyError):
            sim.set_do(state, spec, "NoSuchVar", 1.0)

    @given(value=st.floats(min_value=18.0, max_value=30.0))
    @settings(max_examples=20, deadline=None)
    def test_any_in_bounds_clamp_holds_exactly(self, value):
        spec = base_scenario()
        state = sim.init_state(spec, 1)
        sim.set_do(state, spec, "Temperature", value)
        window = sim.run_window(spec, state, 5)
        assert np.all(window[:, 0] == value)

    def test_no_causal_path_means_no_effect(self):
        # clamping temperature must not move humidity or air quality
        spec = base_scenario()
        for seed in range(200, 210):
            state = sim.init_state(spec, seed)
            trial = sim.run_intervention_trial(spec, state, "Temperature", 30.0, 3000, 3000)
            pre = np.array([[s.values[n] for n in spec.variable_names()] for s in trial["pre"]])
            post = np.array([[s.values[n] for n in spec.variable_names()] for s in trial["post"]])
            sd = pre.std(axis=0, ddof=1)
            delta = (post.mean(axis=0) - pre.mean(axis=0)) / sd
            assert abs(delta[1]) < 0.1 and abs(delta[2]) < 0.1

    def test_true_edges_have_large_effects(self):
        spec = base_scenario()
        designs = {"Temperature": 30.0, "Humidity": 30.0, "AirQuality": 500.0}
        for var, value in designs.items():
            state = sim.init_state(spec, 101)
            trial = sim.run_intervention_trial(spec, state, var, value, 3000, 3000)
            pre = np.array([[s.values[n] for n in spec.variable_names()] for s in trial["pre"]])
            post = np.array([[s.values[n] for n in spec.variable_names()] for s in trial["post"]])
            sd = pre.std(axis=0, ddof=1)
            delta = (post.mean(axis=0) - pre.mean(axis=0)) / sd
            assert abs(delta[3]) > 1.0  # energy
            assert abs(delta[4]) > 1.0  # satisfaction

    def test_intervention_trial_tags_regimes(self):
        spec = base_scenario()
        state = sim.init_state(spec, 4)
        trial = sim.run_intervention_trial(spec, state, "Humidity", 30.0, 5, 5)
        assert all(s.intervention is None for s in trial["pre"])
        assert all(s.intervention == ("Humidity", 30.0) for s in trial["post"])
        assert state.do_values == {}  # trial cleans up its clamp


class TestCalibration:
    def test_stationary_moments_near_declared(self):
        spec = base_scenario()
        vals = sim.simulate_batch(spec, 10000, seed=11).values
        assert abs(vals[:, 0].mean() - 23.5) < 0.2
        assert abs(vals[:, 0].std() - 2.0) < 0.2
        assert abs(vals[:, 1].mean() - 57.0) < 0.6
        assert abs(vals[:, 2].mean() - 150.0) < 6.0

    def test_driver_output_correlation_detectable(self):
        vals = sim.simulate_batch(base_scenario(), 10000, seed=11).values
        r = np.corrcoef(vals.T)
        assert abs(r[0, 3]) > 0.3  # temperature vs energy
        assert abs(r[1, 3]) > 0.3
        assert abs(r[2, 3]) > 0.3
        # drivers are mutually independent
        assert abs(r[0, 1]) < 0.05 and abs(r[0, 2]) < 0.05 and abs(r[1, 2]) < 0.05

    def test_measurement_noise_std(self):
        # hold temperature fixed; observed spread is then pure sensor noise
        spec = noisy_scenario()
        state = sim.init_state(spec, 5)
        sim.set_do(state, spec, "Temperature", 25.0)
        window = sim.run_window(spec, state, 4000)
        assert 0.18 < window[:, 0].std(ddof=1) < 0.22
        assert abs(window[:, 0].mean() - 25.0) < 0.015

    def test_noiseless_scenario_reads_physical_values(self):
        spec = base_scenario()
        state = sim.init_state(spec, 5)
        sim.set_do(state, spec, "Temperature", 25.0)
        window = sim.run_window(spec, state, 100)
        assert np.all(window[:, 0] == 25.0)


class TestHiddenConfounders:
    def test_efficiency_constant_within_run(self):
        spec = hidden_scenario()
        state = sim.init_state(spec, 21)
        eff0 = state.hvac_eff
        sim.run_window(spec, state, 500)
        sim.set_do(state, spec, "Temperature", 28.0)
        sim.run_window(spec, state, 500)
        assert state.hvac_eff == eff0
        assert 0.4 <= eff0 <= 1.0

    def test_efficiency_varies_across_runs(self):
        spec = hidden_scenario()
        effs = {sim.init_state(spec, s).hvac_eff for s in range(8)}
        assert len(effs) > 1

    def test_occupancy_two_state(self):
        spec = hidden_scenario()
        state = sim.init_state(spec, 2)
        sim.run_window(spec, state, 300)
        assert state.occupied in (0, 1)

    def test_occupancy_confounds_energy_and_air_quality(self):
        # occupancy adds load to both AQ and energy, inflating their correlation
        plain = sim.simulate_batch(base_scenario(), 8000, seed=13).values
        hid = sim.simulate_batch(hidden_scenario(), 8000, seed=13).values
        r_plain = np.corrcoef(plain[:, 2], plain[:, 3])[0, 1]
        r_hidden = np.corrcoef(hid[:, 2], hid[:, 3])[0, 1]
        assert r_hidden > r_plain

    def test_base_scenario_has_no_hidden_state(self):
        state = sim.init_state(base_scenario(), 0)
        assert state.hvac_eff == 1.0
        assert state.occupied == 0
        assert state.outdoor_phase == 0.0


class TestZones:
    def test_largesim_shape_and_names(self):
        spec = largesim_scenario()
        assert spec.n_vars == 13
        names = spec.variable_names()
        assert names[0] == "Temperature_1" and names[5] == "Humidity_1"
        assert names[-3:] == ("AirQuality", "EnergyConsumption", "OverallSatisfaction")

    def test_zone_clamp_only_pins_that_zone(self):
        spec = largesim_scenario()
        state = sim.init_state(spec, 6)
        sim.set_do(state, spec, "Temperature_3", 29.0)
        window = sim.run_window(spec, state, 50)
        # zone 3 sensor still carries noise but the physical value is pinned,
        # so its spread collapses to the sensor sd while neighbors keep moving
        assert window[:, 2].std() < 0.35
        assert window[:, 0].std() > 0.5

    def test_zero_coupling_zones_evolve_independently(self):
        # with coupling off, a zone's track depends only on its own stream
        spec = largesim_scenario()
        spec0 = replace(
            spec,
            temperature=replace(spec.temperature, coupling=0.0),
            humidity=replace(spec.humidity, coupling=0.0),
            hidden_vars=(),
            measurement_sd=(),
        )
        zone_seeds = [np.random.SeedSequence(1000 + z) for z in range(5)]
        state = sim.init_state(spec0, 0, zone_seeds=zone_seeds, building_seed=np.random.SeedSequence(77))
        multi = sim.run_window(spec0, state, 400)

        single = base_scenario()
        state1 = sim.init_state(
            single, 0, zone_seeds=[np.random.SeedSequence(1002)], building_seed=np.random.SeedSequence(88)
        )
        solo = sim.run_window(single, state1, 400)
        assert np.allclose(multi[:, 2], solo[:, 0], atol=1e-9)
        assert np.allclose(multi[:, 7], solo[:, 1], atol=1e-9)

    def test_coupling_correlates_adjacent_zones(self):
        spec = largesim_scenario()
        vals = sim.simulate_batch(spec, 8000, seed=9).values
        r = np.corrcoef(vals.T)
        assert r[0, 1] > r[0, 4]  # adjacent zones beat distant ones


class TestOutputs:
    def test_satisfaction_falls_with_air_quality_load(self):
        spec = base_scenario()
        state = sim.init_state(spec, 14)
        sim.run_window(spec, state, 10)
        low = sim.observe(spec, sim.apply_do(state, spec, "AirQuality", 0.0))
        high = sim.observe(spec, sim.apply_do(state, spec, "AirQuality", 500.0))
        assert high["EnergyConsumption"] > low["EnergyConsumption"]
        assert high["OverallSatisfaction"] < low["OverallSatisfaction"]

    def test_energy_grows_with_setpoint_distance(self):
        spec = base_scenario()
        state = sim.init_state(spec, 14)
        sim.run_window(spec, state, 10)
        near = sim.observe(spec, sim.apply_do(state, spec, "Temperature", 22.0))
        far = sim.observe(spec, sim.apply_do(state, spec, "Temperature", 30.0))
        assert far["EnergyConsumption"] > near["EnergyConsumption"]

    def test_outputs_respect_bounds(self):
        for make in (base_scenario, noisy_scenario, hidden_scenario):
            vals = sim.simulate_batch(make(), 2000, seed=8).values
            assert vals[:, 3].min() >= 0.0 and vals[:, 3].max() <= 100.0
            assert vals[:, 4].min() >= 0.0 and vals[:, 4].max() <= 100.0


class TestExtendedTruth:
    def test_extended_adds_mediated_edges(self):
        spec = base_scenario(extended_truth=True)
        truth = spec.ground_truth()
        assert len(truth.edges) == 8
        names = truth.edge_names()
        assert ("Temperature", "Humidity") in names
        assert ("Humidity", "AirQuality") in names

    def test_extended_marks_mediators(self):
        from buildcause.graph import VarKind

        spec = base_scenario(extended_truth=True)
        kinds = {v.name: v.kind for v in spec.variables()}
        assert kinds["Humidity"] is VarKind.MEDIATOR
        assert kinds["AirQuality"] is VarKind.MEDIATOR
        assert kinds["Humidity"].value == "mediator"

    def test_extended_intervention_propagates(self):
        spec = base_scenario(extended_truth=True)
        state = sim.init_state(spec, 31)
        trial = sim.run_intervention_trial(spec, state, "Temperature", 30.0, 3000, 3000)
        names = spec.variable_names()
        pre = np.array([[s.values[n] for n in names] for s in trial["pre"]])
        post = np.array([[s.values[n] for n in names] for s in trial["post"]])
        delta_h = (post[:, 1].mean() - pre[:, 1].mean()) / pre[:, 1].std(ddof=1)
        assert delta_h > 0.5  # humidity follows the temperature clamp

    def test_base_truth_has_six_edges(self):
        assert len(base_scenario().ground_truth().edges) == 6


class TestScenarioCatalog:
    def test_complexity_scores(self):
        assert complexity_score(base_scenario()) == 5
        assert complexity_score(noisy_scenario()) == 6
        assert complexity_score(hidden_scenario()) == 6
        assert complexity_score(largesim_scenario()) == 27

    def test_ground_truth_acyclic_and_constraint_stable(self):
        from buildcause.graph import apply_constraints, is_acyclic

        for make in (base_scenario, noisy_scenario, hidden_scenario, largesim_scenario):
            spec = make()
            truth = spec.ground_truth()
            assert is_acyclic(truth)
            assert apply_constraints(truth, spec.constraints()).edges == truth.edges

    def test_json_round_trip(self, tmp_path):
        for make in (base_scenario, noisy_scenario, hidden_scenario, largesim_scenario):
            spec = make()
            path = tmp_path / f"{spec.name}.json"
            path.write_text(spec.to_json())
            back = load_scenario(str(path))
            assert back == spec

    def test_load_scenario_by_name(self):
        assert load_scenario("base") == base_scenario()
        with pytest.raises(FileNotFoundError):
            load_scenario("no_such_scenario.json")

    def test_round_trip_preserves_simulation(self, tmp_path):
        spec = largesim_scenario()
        back = ScenarioSpec.from_json(spec.to_json())
        a = sim.simulate_batch(spec, 50, seed=2).values
        b = sim.simulate_batch(back, 50, seed=2).values
        assert np.array_equal(a, b)


class TestBackend:
    def test_backend_contract(self):
        spec = base_scenario()
        backend = sim.SimulatorBackend(spec, seed=5)
        first = backend.step(10)
        assert first.shape == (10, 5)
        backend.do("Temperature", 25.0)
        held = backend.step(5)
        assert np.all(held[:, 0] == 25.0)
        backend.do("Temperature")  # clears
        assert backend.observe()["Temperature"] == 25.0
        backend.reset(seed=5)
        again = backend.step(10)
        assert np.array_equal(first, again)
        assert backend.variable_names == spec.variable_names()
