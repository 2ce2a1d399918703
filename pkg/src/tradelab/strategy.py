"""Heuristic trading strategies.

A strategy consumes candles one bar at a time and emits, per bar, two lists
of intents: positions to open and positions to close. All strategies are
streaming and only ever see bars up to the current one, so no-lookahead
holds by construction; feeding the same prefix always reproduces the same
intents.

Signals are evaluated on bar closes; the backtester fills the resulting
intents at the next bar's open.

Intent sizing:

* open intents: ``size`` is a fraction of available cash in (0, 1], or a
  base-asset quantity when ``absolute`` is set;
* close intents: ``size`` is a fraction of the open position, or an absolute
  quantity (clamped to the position by the backtester).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

from .data import Candle, CandleSeries
from .errors import TradeLabError, ValidationError
from .indicators import (
    AdxStream,
    EmaStream,
    IndicatorSpec,
    InvalidPeriods,
    make_stream,
    spec_lines,
)
from .neat import Genome, NetworkEvaluator


class MisalignedSeries(ValidationError):
    """Two series that must share timestamps do not."""


class StrategyStateError(TradeLabError):
    """The supplied state does not correspond to the history prefix."""


class Side(Enum):
    OPEN_LONG = "open_long"
    OPEN_SHORT = "open_short"
    CLOSE_LONG = "close_long"
    CLOSE_SHORT = "close_short"


OPEN_SIDES = (Side.OPEN_LONG, Side.OPEN_SHORT)
CLOSE_SIDES = (Side.CLOSE_LONG, Side.CLOSE_SHORT)


@dataclass(frozen=True, slots=True)
class TradeIntent:
    side: Side
    symbol: str
    size: float = 1.0
    absolute: bool = False
    reason: str = ""

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValidationError(f"intent size must be > 0, got {self.size}")
        if not self.absolute and self.size > 1.0:
            raise ValidationError(f"fractional size must be in (0, 1], got {self.size}")


_NO_INTENTS: tuple[list[TradeIntent], list[TradeIntent]] = ([], [])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StopSettings:
    """ATR-scaled trailing stop and fixed take-profit.

    While ATR is still warming up the percentage fallbacks apply instead.
    """

    atr_period: int = 14
    stop_mult: float = 2.0
    profit_mult: float = 4.0
    fallback_stop_pct: float = 0.05
    fallback_profit_pct: float = 0.10


@dataclass(frozen=True)
class EmaCrossParams:
    p_short: int = 9
    p_long: int = 21

    def __post_init__(self) -> None:
        if self.p_short >= self.p_long:
            raise InvalidPeriods(
                f"p_short {self.p_short} must be < p_long {self.p_long}"
            )


@dataclass(frozen=True)
class GridParams:
    spacing: float
    levels: int
    level_quantity: float

    def __post_init__(self) -> None:
        if self.spacing <= 0:
            raise ValidationError(f"grid spacing must be > 0, got {self.spacing}")
        if self.levels < 1:
            raise ValidationError(f"grid needs at least one level, got {self.levels}")
        if self.level_quantity <= 0:
            raise ValidationError("grid level_quantity must be > 0")


@dataclass(frozen=True)
class PairsParams:
    symbol_b: str
    lookback: int = 50
    z_entry: float = 2.0
    z_exit: float = 0.5
    leg_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.lookback < 2:
            raise ValidationError("pairs lookback must be >= 2")
        if not (0 <= self.z_exit < self.z_entry):
            raise ValidationError(
                f"need 0 <= z_exit < z_entry, got exit={self.z_exit} entry={self.z_entry}"
            )
        if not 0 < self.leg_fraction <= 0.5:
            raise ValidationError("leg_fraction must be in (0, 0.5]")


@dataclass(frozen=True)
class NeatParams:
    """A frozen evolved network: the genome, its indicator inputs, and the
    normalization constants fitted on the training window."""

    genome: Genome
    input_specs: tuple[IndicatorSpec, ...]
    norm: tuple[tuple[float, float], ...]  # (mean, std) per expanded input column


@dataclass(frozen=True)
class NullParams:
    """The do-nothing strategy; useful for dry runs and cost baselines."""


class StrategyKind(Enum):
    EMA_CROSS = "ema_cross"
    GRID = "grid"
    PAIRS = "pairs"
    NEAT = "neat"
    NULL = "null"


_KIND_BY_PARAMS = {
    EmaCrossParams: StrategyKind.EMA_CROSS,
    GridParams: StrategyKind.GRID,
    PairsParams: StrategyKind.PAIRS,
    NeatParams: StrategyKind.NEAT,
    NullParams: StrategyKind.NULL,
}


@dataclass(frozen=True)
class StrategyConfig:
    symbol: str
    params: EmaCrossParams | GridParams | PairsParams | NeatParams | NullParams
    size: float = 1.0
    stops: StopSettings | None = None

    def __post_init__(self) -> None:
        if type(self.params) not in _KIND_BY_PARAMS:
            raise ValidationError(f"unsupported params type {type(self.params).__name__}")
        if not 0 < self.size <= 1.0:
            raise ValidationError(f"size must be in (0, 1], got {self.size}")

    @property
    def kind(self) -> StrategyKind:
        return _KIND_BY_PARAMS[type(self.params)]


# ---------------------------------------------------------------------------
# Steppers (strategy state machines)
# ---------------------------------------------------------------------------

class NullStepper:
    def __init__(self, config: StrategyConfig):
        self.bars_seen = 0

    def step(self, candle: Candle):
        self.bars_seen += 1
        return _NO_INTENTS


class EmaCrossStepper:
    """Open long when the short EMA crosses above the long EMA, close when
    it crosses back below."""

    def __init__(self, config: StrategyConfig):
        p = config.params
        self.symbol = config.symbol
        self.size = config.size
        self._short = EmaStream(p.p_short)
        self._long = EmaStream(p.p_long)
        self._prev: tuple[float, float] | None = None
        self.in_position = False
        self.bars_seen = 0

    def step(self, candle: Candle):
        self.bars_seen += 1
        s = self._short.push(candle)
        l = self._long.push(candle)
        if s is None or l is None:
            return _NO_INTENTS
        prev = self._prev
        self._prev = (s, l)
        if prev is None:
            return _NO_INTENTS
        ps, pl = prev
        opens: list[TradeIntent] = []
        closes: list[TradeIntent] = []
        if s > l and ps <= pl and not self.in_position:
            opens.append(TradeIntent(Side.OPEN_LONG, self.symbol, self.size, reason="ema-cross"))
            self.in_position = True
        elif s < l and ps >= pl and self.in_position:
            closes.append(TradeIntent(Side.CLOSE_LONG, self.symbol, reason="ema-cross"))
            self.in_position = False
        if opens or closes:
            return (opens, closes)
        return _NO_INTENTS


class GridStepper:
    """Ladder of buy levels below an anchor price.

    Level k fills when the close reaches anchor - k*spacing and unwinds one
    spacing higher; the anchor re-centers on the close whenever no level is
    filled. Each level trades a fixed base-asset quantity.
    """

    def __init__(self, config: StrategyConfig):
        p = config.params
        self.symbol = config.symbol
        self.spacing = p.spacing
        self.levels = p.levels
        self.quantity = p.level_quantity
        self.anchor: float | None = None
        self.filled: set[int] = set()
        self.bars_seen = 0

    def step(self, candle: Candle):
        self.bars_seen += 1
        close = candle.close
        if self.anchor is None:
            self.anchor = close
            return _NO_INTENTS
        opens: list[TradeIntent] = []
        closes: list[TradeIntent] = []
        for k in sorted(self.filled):
            if close >= self.anchor - (k - 1) * self.spacing:
                closes.append(
                    TradeIntent(Side.CLOSE_LONG, self.symbol, self.quantity,
                                absolute=True, reason=f"grid-level-{k}")
                )
                self.filled.discard(k)
        for k in range(1, self.levels + 1):
            if k not in self.filled and close <= self.anchor - k * self.spacing:
                opens.append(
                    TradeIntent(Side.OPEN_LONG, self.symbol, self.quantity,
                                absolute=True, reason=f"grid-level-{k}")
                )
                self.filled.add(k)
        if not self.filled:
            self.anchor = close
        if opens or closes:
            return (opens, closes)
        return _NO_INTENTS


# Rolling spread deviation at or below this is degenerate: pure float noise
# (~1e-16 per log) on proportional legs, orders of magnitude under any real
# spread movement.
DEGENERATE_SPREAD_STD = 1e-12


class PairsStepper:
    """Mean-reversion on the log-price spread of two legs.

    Enters when |z| crosses above the entry threshold (shorting the rich
    leg), exits when |z| falls back below the exit threshold. Bars where the
    rolling deviation is degenerate produce no signal.
    """

    def __init__(self, config: StrategyConfig):
        p = config.params
        self.symbol_a = config.symbol
        self.symbol_b = p.symbol_b
        self.lookback = p.lookback
        self.z_entry = p.z_entry
        self.z_exit = p.z_exit
        self.fraction = p.leg_fraction
        self._win: deque[float] = deque(maxlen=p.lookback)
        self._prev_abs_z: float | None = None
        self.position: str | None = None  # None | "short_a" | "long_a"
        self.bars_seen = 0

    def step(self, candle: Candle):
        raise StrategyStateError("pairs strategies step on two candles; use step_pair")

    def step_pair(self, candle_a: Candle, candle_b: Candle):
        self.bars_seen += 1
        if candle_a.ts != candle_b.ts:
            raise MisalignedSeries(
                f"pair timestamps diverge: {candle_a.ts} vs {candle_b.ts}"
            )
        spread = math.log(candle_a.close) - math.log(candle_b.close)
        self._win.append(spread)
        if len(self._win) < self.lookback:
            return _NO_INTENTS
        mean = sum(self._win) / self.lookback
        var = sum((x - mean) ** 2 for x in self._win) / self.lookback
        std = math.sqrt(var)
        if std <= DEGENERATE_SPREAD_STD:
            return _NO_INTENTS  # degenerate spread: no signal at this bar
        z = (spread - mean) / std
        prev_abs = self._prev_abs_z
        self._prev_abs_z = abs(z)
        opens: list[TradeIntent] = []
        closes: list[TradeIntent] = []
        if self.position is None:
            crossed = prev_abs is not None and prev_abs <= self.z_entry < abs(z)
            if crossed:
                if z > 0:  # leg A rich: short A, long B
                    opens.append(TradeIntent(Side.OPEN_SHORT, self.symbol_a, self.fraction, reason="pairs-entry"))
                    opens.append(TradeIntent(Side.OPEN_LONG, self.symbol_b, self.fraction, reason="pairs-entry"))
                    self.position = "short_a"
                else:
                    opens.append(TradeIntent(Side.OPEN_LONG, self.symbol_a, self.fraction, reason="pairs-entry"))
                    opens.append(TradeIntent(Side.OPEN_SHORT, self.symbol_b, self.fraction, reason="pairs-entry"))
                    self.position = "long_a"
        elif abs(z) < self.z_exit:
            if self.position == "short_a":
                closes.append(TradeIntent(Side.CLOSE_SHORT, self.symbol_a, reason="pairs-exit"))
                closes.append(TradeIntent(Side.CLOSE_LONG, self.symbol_b, reason="pairs-exit"))
            else:
                closes.append(TradeIntent(Side.CLOSE_LONG, self.symbol_a, reason="pairs-exit"))
                closes.append(TradeIntent(Side.CLOSE_SHORT, self.symbol_b, reason="pairs-exit"))
            self.position = None
        if opens or closes:
            return (opens, closes)
        return _NO_INTENTS


class NeatStepper:
    """Feeds normalized indicator values through an evolved network and maps
    the argmax of its three outputs to open / close / hold."""

    def __init__(self, config: StrategyConfig):
        p = config.params
        self.symbol = config.symbol
        self.size = config.size
        self._streams = [make_stream(spec) for spec in p.input_specs]
        self._widths = [len(spec_lines(spec)) for spec in p.input_specs]
        self.norm = p.norm
        n_columns = sum(self._widths)
        if len(p.norm) != n_columns:
            raise ValidationError(
                f"normalization has {len(p.norm)} columns, inputs expand to {n_columns}"
            )
        self._net = NetworkEvaluator(p.genome)
        if len(self._net.input_ids) != n_columns:
            raise ValidationError(
                f"genome expects {len(self._net.input_ids)} inputs, specs expand to {n_columns}"
            )
        if len(self._net.output_ids) != 3:
            raise ValidationError("trading genomes need exactly 3 outputs (open/close/hold)")
        self.in_position = False
        self.bars_seen = 0

    def step(self, candle: Candle):
        self.bars_seen += 1
        raw: list[float] = []
        ready = True
        for stream, width in zip(self._streams, self._widths):
            out = stream.push(candle)
            if width == 1:
                out = (out,)
            for v in out:
                if v is None:
                    ready = False
                    raw.append(0.0)
                else:
                    raw.append(v)
        if not ready:
            return _NO_INTENTS
        inputs = []
        for v, (mean, std) in zip(raw, self.norm):
            inputs.append((v - mean) / std if std > 0 else 0.0)
        outputs = self._net.activate(inputs)
        action = max(range(3), key=lambda i: outputs[i])
        if action == 0 and not self.in_position:
            self.in_position = True
            return ([TradeIntent(Side.OPEN_LONG, self.symbol, self.size, reason="net-open")], [])
        if action == 1 and self.in_position:
            self.in_position = False
            return ([], [TradeIntent(Side.CLOSE_LONG, self.symbol, reason="net-close")])
        return _NO_INTENTS


_STEPPERS = {
    StrategyKind.NULL: NullStepper,
    StrategyKind.EMA_CROSS: EmaCrossStepper,
    StrategyKind.GRID: GridStepper,
    StrategyKind.PAIRS: PairsStepper,
    StrategyKind.NEAT: NeatStepper,
}


def new_state(config: StrategyConfig):
    """Create a fresh stepper (the strategy's mutable state) for a config."""
    return _STEPPERS[config.kind](config)


def strategy_step(config: StrategyConfig, state, history: CandleSeries,
                  history_b: CandleSeries | None = None):
    """Advance a strategy by the last bar of ``history``.

    ``state`` must have consumed exactly the preceding prefix (pass None to
    start). Returns (opens, closes, state). Intents depend only on bars up
    to the current one. Pairs strategies additionally need the aligned
    ``history_b``.
    """
    if not history.candles:
        raise ValidationError("history must contain at least one bar")
    if state is None:
        state = new_state(config)
    if state.bars_seen != len(history) - 1:
        raise StrategyStateError(
            f"state consumed {state.bars_seen} bars but history has {len(history)}"
        )
    if config.kind is StrategyKind.PAIRS:
        if history_b is None or len(history_b) != len(history):
            raise MisalignedSeries("pairs strategies need an aligned history_b")
        opens, closes = state.step_pair(history.candles[-1], history_b.candles[-1])
    else:
        opens, closes = state.step(history.candles[-1])
    return opens, closes, state


# ---------------------------------------------------------------------------
# Standalone signal operations
# ---------------------------------------------------------------------------

class SignalDirection(Enum):
    BUY = "buy"
    SELL = "sell"


def ema_crossover_signals(series: CandleSeries, p_short: int, p_long: int
                          ) -> list[tuple[int, SignalDirection]]:
    """Bars where the short EMA crosses the long EMA (both defined).

    Buy at bar i iff short[i] > long[i] and short[i-1] <= long[i-1]; sell is
    symmetric. No signals during warm-up.
    """
    if p_short >= p_long:
        raise InvalidPeriods(f"p_short {p_short} must be < p_long {p_long}")
    short = EmaStream(p_short)
    long_ = EmaStream(p_long)
    prev: tuple[float, float] | None = None
    signals: list[tuple[int, SignalDirection]] = []
    for i, candle in enumerate(series.candles):
        s = short.push(candle)
        l = long_.push(candle)
        if s is None or l is None:
            continue
        if prev is not None:
            ps, pl = prev
            if s > l and ps <= pl:
                signals.append((i, SignalDirection.BUY))
            elif s < l and ps >= pl:
                signals.append((i, SignalDirection.SELL))
        prev = (s, l)
    return signals


class PairsAction(Enum):
    LONG_A_SHORT_B = "long_a_short_b"
    SHORT_A_LONG_B = "short_a_long_b"
    EXIT = "exit"


def pairs_signals(series_a: CandleSeries, series_b: CandleSeries, lookback: int,
                  z_entry: float, z_exit: float) -> list[tuple[int, PairsAction]]:
    """Entry/exit bars for the mean-reverting log spread of two aligned series."""
    if len(series_a) != len(series_b) or series_a.timestamps != series_b.timestamps:
        raise MisalignedSeries("pairs series must share timestamps")
    if not (0 <= z_exit < z_entry):
        raise ValidationError(f"need 0 <= z_exit < z_entry, got {z_exit}, {z_entry}")
    config = StrategyConfig(
        symbol=series_a.symbol,
        params=PairsParams(symbol_b=series_b.symbol, lookback=lookback,
                           z_entry=z_entry, z_exit=z_exit),
    )
    stepper = PairsStepper(config)
    signals: list[tuple[int, PairsAction]] = []
    for i, (ca, cb) in enumerate(zip(series_a.candles, series_b.candles)):
        opens, closes = stepper.step_pair(ca, cb)
        for intent in opens:
            if intent.symbol == series_a.symbol:
                action = (PairsAction.SHORT_A_LONG_B if intent.side is Side.OPEN_SHORT
                          else PairsAction.LONG_A_SHORT_B)
                signals.append((i, action))
        if closes:
            signals.append((i, PairsAction.EXIT))
    return signals


class TrendLabel(Enum):
    BULLISH = "bullish"
    BEARISH = "bearish"
    SIDEWAYS = "sideways"


def trend_identify(series: CandleSeries, p_short: int, p_long: int,
                   adx_p: int = 14, adx_min: float = 20.0) -> list[TrendLabel]:
    """Per-bar market regime: EMA ordering gated by ADX strength.

    Bullish iff short EMA > long EMA and ADX >= adx_min; bearish symmetric;
    sideways otherwise and throughout warm-up.
    """
    if p_short >= p_long:
        raise InvalidPeriods(f"p_short {p_short} must be < p_long {p_long}")
    short = EmaStream(p_short)
    long_ = EmaStream(p_long)
    strength = AdxStream(adx_p)
    labels = []
    for candle in series.candles:
        s = short.push(candle)
        l = long_.push(candle)
        a = strength.push(candle)
        if s is None or l is None or a is None or a < adx_min:
            labels.append(TrendLabel.SIDEWAYS)
        elif s > l:
            labels.append(TrendLabel.BULLISH)
        elif s < l:
            labels.append(TrendLabel.BEARISH)
        else:
            labels.append(TrendLabel.SIDEWAYS)
    return labels


# ---------------------------------------------------------------------------
# Stop-loss / take-profit component
# ---------------------------------------------------------------------------

@dataclass
class PositionStopState:
    """Per-position trailing-stop bookkeeping owned by the execution layer.

    ``target`` is fixed from the entry bar; ``stop`` ratchets with each close
    (never loosening). ``None`` ATR values fall back to the percentage rules.
    """

    symbol: str
    is_long: bool
    entry_price: float
    entry_bar: int
    target: float
    stop: float | None = None

    @classmethod
    def at_entry(cls, symbol: str, is_long: bool, entry_price: float, entry_bar: int,
                 atr_at_entry: float | None, settings: StopSettings) -> "PositionStopState":
        if atr_at_entry is not None:
            offset = settings.profit_mult * atr_at_entry
            target = entry_price + offset if is_long else entry_price - offset
        else:
            pct = settings.fallback_profit_pct
            target = entry_price * (1 + pct) if is_long else entry_price * (1 - pct)
        return cls(symbol=symbol, is_long=is_long, entry_price=entry_price,
                   entry_bar=entry_bar, target=target)


def apply_stops(position: PositionStopState, bar: Candle, atr_value: float | None,
                settings: StopSettings) -> TradeIntent | None:
    """Update the trailing stop with this bar's close and emit a close intent
    when the close strictly breaches the target or the stop."""
    close = bar.close
    if position.is_long:
        if atr_value is not None:
            candidate = close - settings.stop_mult * atr_value
        else:
            candidate = close * (1 - settings.fallback_stop_pct)
        if position.stop is None or candidate > position.stop:
            position.stop = candidate
        if close > position.target:
            return TradeIntent(Side.CLOSE_LONG, position.symbol, reason="take-profit")
        if close < position.stop:
            return TradeIntent(Side.CLOSE_LONG, position.symbol, reason="stop-loss")
    else:
        if atr_value is not None:
            candidate = close + settings.stop_mult * atr_value
        else:
            candidate = close * (1 + settings.fallback_stop_pct)
        if position.stop is None or candidate < position.stop:
            position.stop = candidate
        if close < position.target:
            return TradeIntent(Side.CLOSE_SHORT, position.symbol, reason="take-profit")
        if close > position.stop:
            return TradeIntent(Side.CLOSE_SHORT, position.symbol, reason="stop-loss")
    return None
