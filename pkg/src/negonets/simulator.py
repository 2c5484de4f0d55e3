"""Ancillary-market simulator (seat selection after ticket purchase).

Customers arrive over the booking window as a non-homogeneous Poisson
process (simulated by thinning). Each arrival gets a context, a price drawn
uniformly from the flight's allowed window, and buys with a binary logit
probability against a zero-utility outside option.

Context features, all roughly in [0, 1]:
    days_to_departure  remaining fraction of the booking window
    trip_length        flight-level distance score (plus small noise)
    party_size         (party - 1) / 3, party ~ 1 + Poisson(party_mean - 1)
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import expit

from .data import Dataset, normalize_prices

FEATURES = ["days_to_departure", "trip_length", "party_size"]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ChoiceModel:
    beta0: float = 0.0
    beta_price: float = -4.0
    beta_context: tuple[float, ...] = (0.0, 0.0, 0.0)
    outside_utility: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta_context", tuple(float(b) for b in self.beta_context))
        vals = [self.beta0, self.beta_price, self.outside_utility, *self.beta_context]
        if not np.all(np.isfinite(vals)):
            raise ScenarioError("choice coefficients must be finite")


@dataclass(frozen=True)
class PiecewiseLinear:
    """Arrival rate (events/day) interpolated between ``(time, rate)`` knots."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple((float(t), float(r)) for t, r in self.knots)
        object.__setattr__(self, "knots", knots)
        ts = [t for t, _ in knots]
        if not knots or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError("intensity knots must be nonempty with increasing times")
        if any(r < 0 for _, r in knots):
            raise ScenarioError("intensity must be non-negative")

    def __call__(self, t):
        ts, rs = zip(*self.knots)
        return np.interp(t, ts, rs)

    @property
    def upper(self) -> float:
        return max(r for _, r in self.knots)

    def integral(self, a, b) -> float:
        """Exact integral of the interpolant over [a, b]."""
        ts, rs = zip(*self.knots)
        grid = np.unique(np.clip(np.r_[a, b, ts], a, b))
        return float(trapezoid(np.interp(grid, ts, rs), grid))


@dataclass(frozen=True)
class ContextSpec:
    trip_length: float = 0.5
    trip_length_sd: float = 0.05
    party_mean: float = 1.5


@dataclass(frozen=True)
class FlightSpec:
    id: str
    min_price: float
    max_price: float
    intensity: PiecewiseLinear
    choice: ChoiceModel = field(default_factory=ChoiceModel)
    context: ContextSpec = field(default_factory=ContextSpec)
    lambda_max: float | None = None

    def __post_init__(self):
        if self.min_price < 0 or not self.min_price < self.max_price:
            raise ScenarioError(f"flight {self.id}: need 0 <= min_price < max_price")

    @property
    def rate_bound(self) -> float:
        return self.intensity.upper if self.lambda_max is None else float(self.lambda_max)


@dataclass(frozen=True)
class MarketScenario:
    flights: tuple[FlightSpec, ...]
    horizon: float = 60.0
    seed: int = 0
    # normalisation window shared across scenarios; defaults to the flights' span
    price_window: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "flights", tuple(self.flights))
        if not self.flights:
            raise ScenarioError("scenario needs at least one flight")
        if self.horizon <= 0:
            raise ScenarioError("horizon must be positive")

    @property
    def window(self) -> tuple[float, float]:
        if self.price_window is not None:
            return tuple(self.price_window)
        return (min(f.min_price for f in self.flights), max(f.max_price for f in self.flights))


def nhpp_arrivals(intensity, lambda_max: float, horizon: float, seed=None) -> np.ndarray:
    """Arrival times on [0, horizon] by thinning a rate-``lambda_max`` process."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if lambda_max < 0:
        raise ScenarioError("lambda_max must be non-negative")
    if lambda_max == 0:
        return np.empty(0)
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / lambda_max)
        if t > horizon:
            break
        rate = float(intensity(t))
        if rate > lambda_max * (1 + 1e-12):
            raise ScenarioError(f"intensity {rate:g} at t={t:g} exceeds lambda_max {lambda_max:g}")
        if rng.uniform() * lambda_max < rate:
            times.append(t)
    return np.array(times)


def mnl_purchase_prob(model: ChoiceModel, x, p):
    """Binary logit share of 'buy' against the outside option."""
    x = np.asarray(x, dtype=np.float64)
    u = model.beta0 + model.beta_price * np.asarray(p, dtype=np.float64) + x @ np.asarray(model.beta_context)
    return expit(u - model.outside_utility)


def _sample_contexts(flight: FlightSpec, times, horizon, rng) -> np.ndarray:
    n = len(times)
    ctx = flight.context
    dtd = (horizon - times) / horizon
    trip = ctx.trip_length + ctx.trip_length_sd * rng.standard_normal(n)
    party = 1 + np.minimum(rng.poisson(max(ctx.party_mean - 1.0, 0.0), n), 5)
    return np.column_stack([dtd, trip, (party - 1) / 3.0])


def simulate_flight(flight: FlightSpec, horizon: float, window, rng: np.random.Generator):
    times = nhpp_arrivals(flight.intensity, flight.rate_bound, horizon, rng)
    x = _sample_contexts(flight, times, horizon, rng)
    raw = rng.uniform(flight.min_price, flight.max_price, len(times))
    p = normalize_prices(raw, window)
    y = (rng.uniform(size=len(times)) < mnl_purchase_prob(flight.choice, x, p)).astype(np.int64)
    return x, p, y


def simulate_market(scenario: MarketScenario) -> Dataset:
    """Simulate every flight with its own seed stream and pool the interactions."""
    window = scenario.window
    streams = np.random.SeedSequence(scenario.seed).spawn(len(scenario.flights))
    parts = [
        simulate_flight(f, scenario.horizon, window, np.random.default_rng(ss))
        for f, ss in zip(scenario.flights, streams)
    ]
    x = np.vstack([pt[0] for pt in parts])
    p = np.concatenate([pt[1] for pt in parts])
    y = np.concatenate([pt[2] for pt in parts])
    groups = np.concatenate([np.full(len(pt[1]), i) for i, pt in enumerate(parts)])
    if len(p) == 0:
        warnings.warn("scenario produced no arrivals", stacklevel=2)
    return Dataset(x, p, y, list(FEATURES), window, "simulated", groups)


def conversion_by_bucket(p, y, n_buckets=10, quantile=True):
    """Conversion rate per price bucket: ``(edges, rates, counts)``."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if quantile:
        edges = np.quantile(p, np.linspace(0, 1, n_buckets + 1))
    else:
        edges = np.linspace(0, 1, n_buckets + 1)
    which = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_buckets - 1)
    counts = np.bincount(which, minlength=n_buckets)
    hits = np.bincount(which, weights=y, minlength=n_buckets)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = hits / counts
    return edges, rates, counts


# -- presets ------------------------------------------------------------------

# raw currency units; the shared window puts training flights in [0.4, 1]
# and test flights in [0.075, 0.375] after normalisation
PRICE_WINDOW = (5.0, 45.0)
_RAMP = ((0.0, 1.0), (40.0, 4.0), (60.0, 10.0))

# Long-haul buyers rarely buy and react sharply to price; short-haul buyers
# convert more and are flatter in the normalised price. A forecaster fitted on
# long-haul data therefore underprices the test flights.
LONG_HAUL_CHOICE = ChoiceModel(beta0=1.5, beta_price=-16.0, beta_context=(-1.5, 0.0, 6.0))
SHORT_HAUL_CHOICE = ChoiceModel(beta0=2.0, beta_price=-4.0, beta_context=(-1.5, 0.0, 6.0))


def scenario_presets(seed: int = 0) -> tuple[MarketScenario, MarketScenario, MarketScenario]:
    """(train, test, non-monotone) scenarios.

    Train: 8 long-haul flights with high allowed prices. Test: 2 short-haul
    flights whose whole price window sits below the training window. Both are
    price-monotone (beta_price <= -4). Non-monotone: a single pool where
    flights with higher price windows carry buyers with a much higher base
    propensity, so pooled conversion rises with price.
    """
    train = MarketScenario(
        flights=tuple(
            FlightSpec(
                id=f"LH{i}",
                min_price=21.0 + 0.5 * i,
                max_price=37.0 + i,
                intensity=PiecewiseLinear(_RAMP),
                choice=LONG_HAUL_CHOICE,
                context=ContextSpec(trip_length=0.75 + 0.03 * i, trip_length_sd=0.01, party_mean=2.5),
            )
            for i in range(8)
        ),
        horizon=60.0, seed=seed, price_window=PRICE_WINDOW,
    )
    test = MarketScenario(
        flights=tuple(
            FlightSpec(
                id=f"SH{i}",
                min_price=8.0 + i,
                max_price=19.0 + i,
                intensity=PiecewiseLinear(_RAMP),
                choice=SHORT_HAUL_CHOICE,
                context=ContextSpec(trip_length=0.2 + 0.05 * i, trip_length_sd=0.01, party_mean=1.0),
            )
            for i in range(2)
        ),
        horizon=60.0, seed=seed + 1, price_window=PRICE_WINDOW,
    )
    nonmono = MarketScenario(
        flights=tuple(
            FlightSpec(
                id=f"OD{i}",
                min_price=5.0 + 6.0 * i,
                max_price=15.0 + 6.0 * i,
                intensity=PiecewiseLinear(_RAMP),
                choice=ChoiceModel(beta0=-2.5 + 1.1 * i, beta_price=-1.0, beta_context=(-1.0, 0.0, 2.0)),
                context=ContextSpec(trip_length=0.1 + 0.15 * i, party_mean=1.5),
            )
            for i in range(6)
        ),
        horizon=60.0, seed=seed + 2, price_window=PRICE_WINDOW,
    )
    return train, test, nonmono


def preset_bundle(name: str, seed: int = 0) -> dict[str, MarketScenario]:
    train, test, nonmono = scenario_presets(seed)
    bundles = {
        "paper-sim": {"train": train, "test": test},
        "nonmonotone": {"data": nonmono},
    }
    if name not in bundles:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(bundles)}")
    return bundles[name]


PRESET_NAMES = ("paper-sim", "nonmonotone")


# -- scenario files (JSON) -------------------------------------------------------


def scenario_to_dict(s: MarketScenario) -> dict:
    d = asdict(s)
    for f in d["flights"]:
        f["intensity"] = [list(k) for k in f["intensity"]["knots"]]
    if d["price_window"] is not None:
        d["price_window"] = list(d["price_window"])
    return d


def scenario_from_dict(d: dict) -> MarketScenario:
    try:
        flights = []
        for f in d["flights"]:
            f = dict(f)
            f["intensity"] = PiecewiseLinear(tuple(tuple(k) for k in f["intensity"]))
            f["choice"] = ChoiceModel(**f.get("choice", {}))
            f["context"] = ContextSpec(**f.get("context", {}))
            flights.append(FlightSpec(**f))
        window = d.get("price_window")
        return MarketScenario(
            flights=tuple(flights),
            horizon=float(d.get("horizon", 60.0)),
            seed=int(d.get("seed", 0)),
            price_window=None if window is None else (float(window[0]), float(window[1])),
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"invalid scenario definition: {exc}") from exc


def load_scenarios(path) -> dict[str, MarketScenario]:
    """Read a scenario file: one scenario object, or a mapping name -> scenario."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: expected a JSON object")
    if "flights" in raw:
        return {"data": scenario_from_dict(raw)}
    return {name: scenario_from_dict(v) for name, v in raw.items()}


def dump_scenarios(scenarios: dict[str, MarketScenario]) -> str:
    return json.dumps({k: scenario_to_dict(v) for k, v in scenarios.items()}, indent=2) + "\n"
