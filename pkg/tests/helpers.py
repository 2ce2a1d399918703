"""Shared builders for test data: seeded random-walk candle series plus
scripted/random strategies used to fuzz the execution layer."""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np

from tradelab.data import Candle, CandleSeries, parse_csv
from tradelab.strategy import Side, TradeIntent

FIXTURES = Path(__file__).parent / "fixtures"

INTERVAL = 3600
STEP_MS = INTERVAL * 1000


def random_series(seed: int, n: int = 256, symbol: str = "RND",
                  drift: float = 0.0, vol: float = 0.01,
                  start_price: float = 100.0) -> CandleSeries:
    """Valid gap-free OHLCV random walk; fully determined by the seed."""
    rng = np.random.default_rng(seed)
    log_ret = rng.normal(drift, vol, n)
    closes = start_price * np.exp(np.cumsum(log_ret))
    candles = []
    prev_close = float(closes[0]) * (1 - rng.uniform(0, vol))
    for i in range(n):
        o = prev_close
        c = float(closes[i])
        hi = max(o, c) * (1 + float(abs(rng.normal(0, vol / 2))))
        lo = min(o, c) * (1 - float(abs(rng.normal(0, vol / 2))))
        v = float(rng.uniform(0, 1000))
        candles.append(Candle(i * STEP_MS, o, hi, lo, c, v))
        prev_close = c
    return CandleSeries(symbol, INTERVAL, tuple(candles))


def flat_series(n: int = 64, price: float = 50.0, volume: float = 10.0,
                symbol: str = "FLAT") -> CandleSeries:
    candles = tuple(Candle(i * STEP_MS, price, price, price, price, volume)
                    for i in range(n))
    return CandleSeries(symbol, INTERVAL, candles)


def series_from_closes(closes, symbol: str = "SEQ", volumes=None) -> CandleSeries:
    """Degenerate candles (o=h=l=c) from a close sequence; handy for
    hand-computed examples."""
    if volumes is None:
        volumes = [10.0] * len(closes)
    candles = tuple(Candle(i * STEP_MS, float(c), float(c), float(c), float(c), float(v))
                    for i, (c, v) in enumerate(zip(closes, volumes)))
    return CandleSeries(symbol, INTERVAL, candles)


def series_from_ohlc(rows, symbol: str = "OHLC") -> CandleSeries:
    """rows: iterable of (open, high, low, close, volume)."""
    candles = tuple(Candle(i * STEP_MS, *map(float, row)) for i, row in enumerate(rows))
    return CandleSeries(symbol, INTERVAL, candles)


def trending_fixture() -> CandleSeries:
    return parse_csv(FIXTURES / "trending.csv", "TRENDY", INTERVAL)


class RandomStrategy:
    """Seeded intent spammer for execution-layer fuzzing.

    Emits fractional and absolute opens (sometimes unaffordable) and closes
    (sometimes with nothing open) so rejection paths get exercised too.
    """

    def __init__(self, seed: int, symbol: str = "RND",
                 open_p: float = 0.04, close_p: float = 0.06):
        self.rng = random.Random(seed)
        self.symbol = symbol
        self.open_p = open_p
        self.close_p = close_p
        self.bars_seen = 0

    def step(self, candle):
        self.bars_seen += 1
        rng = self.rng
        roll = rng.random()
        if roll < self.open_p:
            if rng.random() < 0.3:
                intent = TradeIntent(Side.OPEN_LONG, self.symbol,
                                     size=rng.uniform(0.1, 2000.0), absolute=True)
            else:
                intent = TradeIntent(Side.OPEN_LONG, self.symbol,
                                     size=rng.uniform(0.05, 1.0))
            return ([intent], [])
        if roll < self.open_p + self.close_p:
            if rng.random() < 0.3:
                intent = TradeIntent(Side.CLOSE_LONG, self.symbol,
                                     size=rng.uniform(0.1, 100.0), absolute=True)
            else:
                intent = TradeIntent(Side.CLOSE_LONG, self.symbol,
                                     size=rng.uniform(0.1, 1.0))
            return ([], [intent])
        return ([], [])


class ScriptedStrategy:
    """Replays a fixed per-bar intent script."""

    def __init__(self, script: dict):
        self.script = script
        self.bars_seen = 0

    def step(self, candle):
        out = self.script.get(self.bars_seen, ([], []))
        self.bars_seen += 1
        return out


def conservation_violation(report, series, initial_cash: float,
                           fee_rate: float) -> float:
    """Replay fills independently; return the worst absolute difference
    between the engine's equity curve and cash + qty*close per bar."""
    fills_by_bar: dict[int, list] = {}
    for f in report.fills:
        fills_by_bar.setdefault(f.bar, []).append(f)
    cash = initial_cash
    qty = 0.0
    worst = 0.0
    closes = series.closes
    for t in range(report.bars):
        for f in fills_by_bar.get(t, ()):
            if f.side in (Side.OPEN_LONG, Side.CLOSE_SHORT):  # buys
                cash -= f.price * f.quantity + f.fee
                qty += f.quantity
            else:  # sells
                cash += f.price * f.quantity - f.fee
                qty -= f.quantity
        expected = cash + qty * closes[t]
        if t == report.bars - 1 and report.forced_close:
            expected = cash  # engine rewrites the last point after liquidation
        worst = max(worst, abs(report.equity[t] - expected))
    return worst
