import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from negonets.simulator import (
    PRICE_WINDOW,
    ChoiceModel,
    FlightSpec,
    MarketScenario,
    PiecewiseLinear,
    ScenarioError,
    conversion_by_bucket,
    dump_scenarios,
    load_scenarios,
    mnl_purchase_prob,
    nhpp_arrivals,
    preset_bundle,
    scenario_presets,
    simulate_flight,
    simulate_market,
)

RAMP = PiecewiseLinear(((0.0, 1.0), (10.0, 9.0)))
CONST5 = PiecewiseLinear(((0.0, 5.0), (10.0, 5.0)))


def one_flight(choice=None, rate=50.0, lo=10.0, hi=30.0, seed=0, horizon=60.0):
    flight = FlightSpec(
        id="F", min_price=lo, max_price=hi,
        intensity=PiecewiseLinear(((0.0, rate), (horizon, rate))),
        choice=choice or ChoiceModel(),
    )
    return MarketScenario((flight,), horizon=horizon, seed=seed)


def ramp_cdf(t):
    # integral of 1 + 0.8 s over [0, t], normalised by its value at 10 (= 50)
    return (t + 0.4 * t**2) / 50.0


class TestArrivals:
    def test_zero_intensity(self):
        zero = PiecewiseLinear(((0.0, 0.0), (10.0, 0.0)))
        assert len(nhpp_arrivals(zero, 1.0, 10.0, 0)) == 0
        assert len(nhpp_arrivals(zero, 0.0, 10.0, 0)) == 0

    def test_constant_rate_mean(self):
        counts = np.array([len(nhpp_arrivals(CONST5, 5.0, 10.0, s)) for s in range(2000)])
        se = math.sqrt(50.0 / 2000)
        assert abs(counts.mean() - 50.0) < 3 * se

    def test_ramp_half_interval_ratio(self):
        first = second = 0
        for s in range(1000):
            t = nhpp_arrivals(RAMP, 9.0, 10.0, s)
            first += np.sum(t < 5)
            second += np.sum(t >= 5)
        # expected 15 and 35 arrivals per run
        n = first + second
        share = first / n
        assert abs(share - 0.3) < 3 * math.sqrt(0.3 * 0.7 / n)

    def test_ks_against_integrated_ramp(self):
        times = np.concatenate([nhpp_arrivals(RAMP, 9.0, 10.0, s) for s in range(50)])
        assert stats.kstest(times, ramp_cdf).pvalue > 0.01

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_sorted_within_horizon(self, seed):
        t = nhpp_arrivals(RAMP, 9.0, 10.0, seed)
        assert np.all(np.diff(t) > 0)
        assert np.all((t >= 0) & (t <= 10.0))

    def test_bound_violation_detected(self):
        with pytest.raises(ScenarioError, match="exceeds"):
            nhpp_arrivals(RAMP, 4.0, 10.0, 0)

    def test_deterministic_and_generator_input(self):
        a = nhpp_arrivals(RAMP, 9.0, 10.0, 3)
        b = nhpp_arrivals(RAMP, 9.0, 10.0, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_piecewise_integral(self):
        assert RAMP.integral(0, 10) == pytest.approx(50.0)
        assert RAMP.integral(0, 5) == pytest.approx(15.0)
        ramp = PiecewiseLinear(((0.0, 1.0), (40.0, 4.0), (60.0, 10.0)))
        assert ramp.integral(0, 60) == pytest.approx(100 + 140)


class TestChoice:
    def test_zero_coefficients(self):
        assert mnl_purchase_prob(ChoiceModel(0.0, 0.0, (0, 0, 0)), np.zeros(3), 0.7) == 0.5

    @given(st.floats(0, 0.5), st.floats(-3, 3))
    def test_log_odds_shift(self, p, b0):
        m = ChoiceModel(beta0=b0, beta_price=-4.0, beta_context=(0.5, -0.5, 1.0))
        x = np.array([0.2, 0.4, 0.1])
        q0, q1 = mnl_purchase_prob(m, x, p), mnl_purchase_prob(m, x, p + 0.5)
        logit = lambda q: math.log(q / (1 - q))
        assert logit(q0) - logit(q1) == pytest.approx(2.0, abs=1e-9)

    @given(st.floats(-5, 5), st.floats(-10, 0), st.floats(0, 1))
    def test_two_alternative_normalisation(self, b0, bp, p):
        m = ChoiceModel(beta0=b0, beta_price=bp)
        buy = mnl_purchase_prob(m, np.zeros(3), p)
        u = b0 + bp * p
        assert buy == pytest.approx(math.exp(u) / (math.exp(u) + math.exp(0.0)), rel=1e-12)
        assert 0 < buy < 1

    def test_non_finite_coefficients(self):
        with pytest.raises(ScenarioError):
            ChoiceModel(beta0=float("nan"))


class TestMarket:
    def test_prices_within_bounds(self):
        scn = one_flight(lo=12.0, hi=20.0, rate=20.0)
        d = simulate_market(scn)
        raw = scn.window[0] + d.p * (scn.window[1] - scn.window[0])
        assert np.all((raw >= 12.0 - 1e-9) & (raw <= 20.0 + 1e-9))
        assert np.all((d.p >= 0) & (d.p <= 1))

    def test_deterministic(self):
        a, b = simulate_market(one_flight(seed=4)), simulate_market(one_flight(seed=4))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.p, b.p) and np.array_equal(a.y, b.y)
        c = simulate_market(one_flight(seed=5))
        assert len(c) != len(a) or not np.array_equal(a.p, c.p)

    def test_flight_streams_independent(self):
        train, _, _ = scenario_presets(0)
        pooled = simulate_market(train)
        streams = np.random.SeedSequence(train.seed).spawn(len(train.flights))
        # simulating flight 3 on its own stream reproduces its rows in the pool
        x, p, y = simulate_flight(train.flights[3], train.horizon, train.window, np.random.default_rng(streams[3]))
        rows = pooled.groups == 3
        assert np.array_equal(pooled.p[rows], p) and np.array_equal(pooled.y[rows], y)

    def test_bucket_conversion_matches_model(self):
        choice = ChoiceModel(beta0=1.0, beta_price=-3.0, beta_context=(0.5, 0.0, 0.0))
        flight = FlightSpec("F", 0.0, 1.0, PiecewiseLinear(((0.0, 400.0), (60.0, 400.0))), choice)
        scn = MarketScenario((flight,), 60.0, 0, (0.0, 1.0))
        d = simulate_market(scn)
        q = mnl_purchase_prob(choice, d.x, d.p)
        edges = np.linspace(0, 1, 11)
        which = np.clip(np.searchsorted(edges, d.p, side="right") - 1, 0, 9)
        for b in range(10):
            m = which == b
            se = math.sqrt(np.sum(q[m] * (1 - q[m]))) / m.sum()
            assert abs(d.y[m].mean() - q[m].mean()) < 3 * se

    def test_monotone_scenario_decreasing_deciles(self):
        # rates stay between 0.05 and 0.95 so no two deciles tie at zero
        d = simulate_market(one_flight(ChoiceModel(3.0, -6.0, (0, 0, 0)), rate=500.0, lo=5.0, hi=45.0))
        _, rates, _ = conversion_by_bucket(d.p, d.y)
        assert np.all(np.diff(rates) < 0)

    def test_empty_scenario_warns(self):
        flight = FlightSpec("Z", 1.0, 2.0, PiecewiseLinear(((0.0, 0.0), (1.0, 0.0))))
        with pytest.warns(UserWarning, match="no arrivals"):
            d = simulate_market(MarketScenario((flight,), 1.0, 0))
        assert len(d) == 0 and d.dim == 3

    def test_context_ranges(self):
        d = simulate_market(one_flight(rate=30.0))
        assert np.all((d.x[:, 0] >= 0) & (d.x[:, 0] <= 1))
        assert set(np.unique(d.x[:, 2] * 3).round(9)) <= {0, 1, 2, 3, 4, 5}


class TestValidation:
    @pytest.mark.parametrize(
        "build",
        [
            lambda: PiecewiseLinear(((1.0, 1.0), (0.0, 1.0))),
            lambda: PiecewiseLinear(((0.0, -1.0),)),
            lambda: FlightSpec("x", 10.0, 5.0, RAMP),
            lambda: FlightSpec("x", -1.0, 5.0, RAMP),
            lambda: MarketScenario(()),
            lambda: MarketScenario((FlightSpec("x", 1.0, 5.0, RAMP),), horizon=0.0),
        ],
    )
    def test_invalid(self, build):
        with pytest.raises(ScenarioError):
            build()


class TestPresets:
    def test_flight_counts(self):
        train, test, nonmono = scenario_presets()
        assert len(train.flights) == 8 and len(test.flights) == 2
        assert len(nonmono.flights) >= 1

    def test_test_window_below_train_window(self):
        train, test, _ = scenario_presets()
        assert max(f.max_price for f in test.flights) < min(f.min_price for f in train.flights)
        assert train.window == test.window == PRICE_WINDOW

    def test_monotone_presets_price_coefficients(self):
        train, test, _ = scenario_presets()
        assert all(f.choice.beta_price <= -3 for f in train.flights + test.flights)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_nonmonotone_rising_deciles(self, seed):
        d = simulate_market(scenario_presets(seed)[2])
        _, rates, _ = conversion_by_bucket(d.p, d.y)
        rising = [rates[i] <= rates[i + 1] <= rates[i + 2] for i in range(8)]
        assert any(rising)

    def test_seed_shifts_scenarios(self):
        a, b = preset_bundle("paper-sim", 0), preset_bundle("paper-sim", 3)
        assert b["train"].seed == a["train"].seed + 3

    def test_unknown_preset(self):
        with pytest.raises(ScenarioError):
            preset_bundle("nope")


class TestScenarioFiles:
    def test_round_trip(self, tmp_path):
        bundle = preset_bundle("paper-sim", 2)
        path = tmp_path / "s.json"
        path.write_text(dump_scenarios(bundle))
        back = load_scenarios(path)
        assert back == bundle

    def test_bare_scenario_object(self, tmp_path):
        (tmp_path / "bare.json").write_text(
            '{"flights": [{"id": "A", "min_price": 1, "max_price": 2, "intensity": [[0, 1], [5, 1]]}],'
            ' "horizon": 5, "seed": 1}'
        )
        bundle = load_scenarios(tmp_path / "bare.json")
        assert list(bundle) == ["data"] and bundle["data"].flights[0].choice == ChoiceModel()

    @pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"a": {"flights": [{"id": "A"}]}}'])
    def test_invalid_files(self, tmp_path, text):
        path = tmp_path / "bad.json"
        path.write_text(text)
        with pytest.raises(ScenarioError):
            load_scenarios(path)
