"""Regenerate the frozen test fixtures.

The trending fixture is a synthetic uptrend with a sinusoidal wobble and
seeded noise, chosen (seed search over the generator below) so that EMA
crossover signal counts strictly decrease and backtest scores strictly
increase across the period grid (9,21) -> (9,30) -> (20,30) -> (20,50).
The CSV under tests/fixtures/ is FROZEN: tests assert golden values
recorded from it, so do not regenerate it casually.

Run from the repo root:  python3 scripts/make_fixtures.py
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from tradelab.backtest import CostModel  # noqa: E402
from tradelab.data import Candle, CandleSeries, write_csv  # noqa: E402
from tradelab.optimize import tune_parameters  # noqa: E402
from tradelab.strategy import StrategyKind, ema_crossover_signals  # noqa: E402

FIXTURE_SEED = 6
FIXTURE_BARS = 1100
PERIOD_GRID = [(9, 21), (9, 30), (20, 30), (20, 50)]


def build_trending(seed: int = FIXTURE_SEED, n: int = FIXTURE_BARS,
                   drift: float = 0.0009, wobble_amp: float = 0.012,
                   wobble_period: int = 40, noise: float = 0.006) -> CandleSeries:
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    log_price = (drift * t
                 + wobble_amp * np.sin(2 * np.pi * t / wobble_period)
                 + np.cumsum(rng.normal(0.0, noise, n)))
    close = 100.0 * np.exp(log_price)
    candles = []
    prev = close[0]
    for i in range(n):
        o = prev if i else close[0]
        c = close[i]
        hi = max(o, c) * (1 + abs(rng.normal(0, 0.002)))
        lo = min(o, c) * (1 - abs(rng.normal(0, 0.002)))
        v = float(10 + 100 * abs(rng.normal()))
        candles.append(Candle(int(i * 3_600_000), float(o), float(hi), float(lo), float(c), v))
        prev = c
    return CandleSeries("TRENDY", 3600, tuple(candles))


def main() -> None:
    series = build_trending()
    target = ROOT / "tests" / "fixtures" / "trending.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, target)
    print(f"wrote {target} ({len(series)} bars)")

    counts = [len(ema_crossover_signals(series, a, b)) for a, b in PERIOD_GRID]
    print("crossover signal counts", dict(zip(PERIOD_GRID, counts)))
    assert all(counts[i] > counts[i + 1] for i in range(len(counts) - 1)), \
        "fixture must give strictly decreasing signal counts"

    best, leaderboard = tune_parameters(
        StrategyKind.EMA_CROSS,
        [{"p_short": a, "p_long": b} for a, b in PERIOD_GRID],
        series,
        costs=CostModel(),
    )
    for entry in leaderboard:
        print(f"  {entry.params} score {entry.score:.4f}")
    assert best == {"p_short": 20, "p_long": 50}, f"expected (20,50) best, got {best}"
    print("fixture OK: counts strictly decrease, (20,50) wins the tune grid")


if __name__ == "__main__":
    main()
