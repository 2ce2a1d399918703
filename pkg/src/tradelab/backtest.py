"""Event-driven backtester with cost modelling and score metrics.

Execution model: intents emitted on bar t are queued and filled at bar t+1's
open, with slippage applied adversely and a proportional fee; open positions
left at the end of the data are force-closed at the final close (flagged).
Accounting invariant maintained throughout: equity = cash + sum(qty * close),
and every equity change flows through a fill or a price move.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .data import CandleSeries
from .errors import ValidationError
from .indicators import AtrStream
from .strategy import (
    PositionStopState,
    Side,
    StrategyConfig,
    StrategyKind,
    TradeIntent,
    apply_stops,
    new_state,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostModel:
    """Proportional execution costs in basis points."""

    fee_bps: float = 10.0
    slippage_bps: float = 5.0

    @property
    def fee_rate(self) -> float:
        return self.fee_bps / 10_000.0

    @property
    def slippage_rate(self) -> float:
        return self.slippage_bps / 10_000.0


ZERO_COSTS = CostModel(fee_bps=0.0, slippage_bps=0.0)


class OrderStatus(Enum):
    PENDING = "pending"
    FILLED = "filled"
    REJECTED = "rejected"


@dataclass
class Order:
    id: int
    intent: TradeIntent
    created_at_bar: int
    status: OrderStatus = OrderStatus.PENDING
    reject_reason: str = ""


@dataclass(frozen=True)
class Fill:
    order_id: int
    bar: int
    symbol: str
    side: Side
    price: float
    quantity: float
    fee: float
    reason: str = ""
    forced: bool = False


@dataclass
class PositionState:
    quantity: float = 0.0
    avg_price: float = 0.0
    stop: PositionStopState | None = None


@dataclass
class Account:
    """Spot account: cash plus signed base-asset positions."""

    cash: float
    positions: dict[str, PositionState] = field(default_factory=dict)
    fees_paid: float = 0.0

    def position(self, symbol: str) -> PositionState:
        state = self.positions.get(symbol)
        if state is None:
            state = PositionState()
            self.positions[symbol] = state
        return state


@dataclass(frozen=True)
class TradeRecord:
    symbol: str
    quantity: float
    entry_bar: int
    entry_price: float
    exit_bar: int
    exit_price: float
    profit_pct: float
    exit_reason: str
    forced: bool
    is_long: bool


@dataclass(frozen=True)
class Metrics:
    net_profit_pct: float
    max_drawdown_pct: float
    win_rate: float
    trade_count: int


@dataclass
class BacktestReport:
    symbol: str
    interval: int
    bars: int
    initial_cash: float
    final_equity: float
    timestamps: list[int]
    equity: list[float]
    fills: list[Fill]
    trades: list[TradeRecord]
    orders: list[Order]
    metrics: Metrics
    score: float
    drawdown_lambda: float
    forced_close: bool = False
    interrupted: bool = False

    def equity_curve(self) -> list[tuple[int, float]]:
        return list(zip(self.timestamps, self.equity))


def compute_metrics(equity: list[float], trades: list[TradeRecord]) -> Metrics:
    """Net profit, peak-to-trough drawdown and win rate over a run."""
    if not equity:
        raise ValidationError("equity curve is empty")
    initial = equity[0]
    net = (equity[-1] - initial) / initial * 100.0
    peak = equity[0]
    max_dd = 0.0
    for value in equity:
        if value > peak:
            peak = value
        elif peak > 0:
            dd = (peak - value) / peak * 100.0
            if dd > max_dd:
                max_dd = dd
    wins = sum(1 for t in trades if t.profit_pct > 0)
    win_rate = wins / len(trades) if trades else 0.0
    return Metrics(net_profit_pct=net, max_drawdown_pct=max_dd,
                   win_rate=win_rate, trade_count=len(trades))


def score(report, drawdown_lambda: float = 0.5) -> float:
    """Single scalar strategy score: profit penalized by drawdown.

    Accepts a BacktestReport or its Metrics.
    """
    metrics = getattr(report, "metrics", report)
    return metrics.net_profit_pct - drawdown_lambda * metrics.max_drawdown_pct


def open_quantity(intent: TradeIntent, cash: float, price: float, fee_rate: float) -> float:
    """Quantity for an opening fill: fractional intents spend that share of
    available cash, fees included, so a 100% open leaves cash at zero."""
    if intent.absolute:
        return intent.size
    return intent.size * cash / (price * (1.0 + fee_rate))


class _Backtester:
    def __init__(self, strategy, data: CandleSeries, initial_cash: float,
                 costs: CostModel, aux_series: dict[str, CandleSeries] | None,
                 allow_short: bool | None, drawdown_lambda: float):
        if initial_cash <= 0:
            raise ValidationError("initial cash must be > 0")
        if not data.candles:
            raise ValidationError("cannot backtest an empty series")
        if data.has_gaps:
            raise ValidationError("backtest data must be gap-free")
        self.data = data
        self.costs = costs
        self.lam = drawdown_lambda
        self.account = Account(cash=initial_cash)
        self.initial_cash = initial_cash
        self.orders: list[Order] = []
        self.fills: list[Fill] = []
        self.trades: list[TradeRecord] = []
        self.queue: list[Order] = []
        self.lots: dict[str, list[list]] = {}  # symbol -> [[qty_left, fill], ...]
        self.symbol = data.symbol

        self.config = strategy if isinstance(strategy, StrategyConfig) else None
        if self.config is not None:
            self.stepper = new_state(self.config)
            self.stop_settings = self.config.stops
            self.pairs = self.config.kind is StrategyKind.PAIRS
        else:
            self.stepper = strategy  # duck-typed: anything with .step(candle)
            self.stop_settings = getattr(strategy, "stops", None)
            self.pairs = False
        if self.pairs:
            symbol_b = self.config.params.symbol_b
            if not aux_series or symbol_b not in aux_series:
                raise ValidationError(f"pairs strategy needs aux series for '{symbol_b}'")
            self.series_b = aux_series[symbol_b]
            if self.series_b.timestamps != data.timestamps:
                raise ValidationError("pairs legs must share timestamps")
        else:
            self.series_b = None
        if allow_short is None:
            allow_short = self.pairs
        self.allow_short = allow_short
        self._atr = AtrStream(self.stop_settings.atr_period) if self.stop_settings else None
        self._last_atr: float | None = None
        self.forced_close = False

    # -- order life cycle ---------------------------------------------------

    def submit(self, intent: TradeIntent, bar: int) -> Order:
        order = Order(id=len(self.orders), intent=intent, created_at_bar=bar)
        self.orders.append(order)
        self.queue.append(order)
        return order

    def _reject(self, order: Order, reason: str) -> None:
        order.status = OrderStatus.REJECTED
        order.reject_reason = reason
        logger.debug("order %d rejected: %s", order.id, reason)

    def execute(self, order: Order, bar: int, raw_price: float, forced: bool = False) -> None:
        intent = order.intent
        if intent.symbol != self.symbol:
            if self.series_b is None or intent.symbol != self.series_b.symbol:
                self._reject(order, f"no price feed for symbol '{intent.symbol}'")
                return
            if not forced:  # forced closes arrive with their price resolved
                raw_price = self.series_b.candles[bar].open
        account = self.account
        fee_rate = self.costs.fee_rate
        slip = self.costs.slippage_rate
        side = intent.side
        pos = account.position(intent.symbol)

        if side is Side.OPEN_LONG or side is Side.CLOSE_SHORT:
            price = raw_price * (1.0 + slip)  # buying: slippage against us
        else:
            price = raw_price * (1.0 - slip)

        if side is Side.OPEN_LONG:
            if pos.quantity < 0:
                self._reject(order, "symbol currently short")
                return
            qty = open_quantity(intent, account.cash, price, fee_rate)
            if qty <= 0:
                self._reject(order, "zero quantity")
                return
            cost = qty * price
            fee = cost * fee_rate
            if cost + fee > account.cash + 1e-9:
                self._reject(order, "InsufficientFunds")
                return
            account.cash -= cost + fee
            total_qty = pos.quantity + qty
            pos.avg_price = (pos.avg_price * pos.quantity + price * qty) / total_qty
            pos.quantity = total_qty
            self._record_fill(order, bar, price, qty, fee, forced)
            self._open_lot(intent.symbol, self.fills[-1], is_long=True)
            self._arm_stops(intent.symbol, True, price, bar)
        elif side is Side.OPEN_SHORT:
            if not self.allow_short:
                self._reject(order, "shorting disabled in spot mode")
                return
            if pos.quantity > 0:
                self._reject(order, "symbol currently long")
                return
            qty = open_quantity(intent, account.cash, price, fee_rate)
            if qty <= 0:
                self._reject(order, "zero quantity")
                return
            proceeds = qty * price
            fee = proceeds * fee_rate
            account.cash += proceeds - fee
            total_qty = pos.quantity - qty
            pos.avg_price = (pos.avg_price * -pos.quantity + price * qty) / -total_qty
            pos.quantity = total_qty
            self._record_fill(order, bar, price, qty, fee, forced)
            self._open_lot(intent.symbol, self.fills[-1], is_long=False)
            self._arm_stops(intent.symbol, False, price, bar)
        elif side is Side.CLOSE_LONG:
            if pos.quantity <= 0:
                self._reject(order, "no open long position")
                return
            qty = min(intent.size, pos.quantity) if intent.absolute else pos.quantity * intent.size
            proceeds = qty * price
            fee = proceeds * fee_rate
            account.cash += proceeds - fee
            pos.quantity -= qty
            if pos.quantity <= 1e-12:
                pos.quantity = 0.0
                pos.stop = None
            self._record_fill(order, bar, price, qty, fee, forced)
            self._close_lots(intent.symbol, self.fills[-1], is_long=True)
        else:  # CLOSE_SHORT
            if pos.quantity >= 0:
                self._reject(order, "no open short position")
                return
            short_qty = -pos.quantity
            qty = min(intent.size, short_qty) if intent.absolute else short_qty * intent.size
            cost = qty * price
            fee = cost * fee_rate
            account.cash -= cost + fee
            pos.quantity += qty
            if -pos.quantity <= 1e-12:
                pos.quantity = 0.0
                pos.stop = None
            self._record_fill(order, bar, price, qty, fee, forced)
            self._close_lots(intent.symbol, self.fills[-1], is_long=False)

    def _record_fill(self, order: Order, bar: int, price: float, qty: float,
                     fee: float, forced: bool) -> None:
        order.status = OrderStatus.FILLED
        self.account.fees_paid += fee
        self.fills.append(
            Fill(order_id=order.id, bar=bar, symbol=order.intent.symbol,
                 side=order.intent.side, price=price, quantity=qty, fee=fee,
                 reason=order.intent.reason, forced=forced)
        )

    def _open_lot(self, symbol: str, fill: Fill, is_long: bool) -> None:
        self.lots.setdefault(symbol, []).append([fill.quantity, fill])

    def _close_lots(self, symbol: str, exit_fill: Fill, is_long: bool) -> None:
        """FIFO-match an exit fill against open entry lots into trade records."""
        fee_rate = self.costs.fee_rate
        remaining = exit_fill.quantity
        lots = self.lots.get(symbol, [])
        while remaining > 1e-12 and lots:
            lot = lots[0]
            take = min(lot[0], remaining)
            entry_fill: Fill = lot[1]
            if is_long:
                entry_unit = entry_fill.price * (1.0 + fee_rate)
                exit_unit = exit_fill.price * (1.0 - fee_rate)
                pct = (exit_unit - entry_unit) / entry_unit * 100.0
            else:
                entry_unit = entry_fill.price * (1.0 - fee_rate)
                exit_unit = exit_fill.price * (1.0 + fee_rate)
                pct = (entry_unit - exit_unit) / entry_fill.price * 100.0
            self.trades.append(
                TradeRecord(symbol=symbol, quantity=take,
                            entry_bar=entry_fill.bar, entry_price=entry_fill.price,
                            exit_bar=exit_fill.bar, exit_price=exit_fill.price,
                            profit_pct=pct, exit_reason=exit_fill.reason or "close",
                            forced=exit_fill.forced, is_long=is_long)
            )
            lot[0] -= take
            remaining -= take
            if lot[0] <= 1e-12:
                lots.pop(0)

    def _arm_stops(self, symbol: str, is_long: bool, price: float, bar: int) -> None:
        if self.stop_settings is None or symbol != self.symbol:
            return
        pos = self.account.position(symbol)
        if pos.stop is None:
            pos.stop = PositionStopState.at_entry(
                symbol, is_long, price, bar, self._last_atr, self.stop_settings
            )

    # -- main loop ------------------------------------------------------------

    def run(self) -> BacktestReport:
        data = self.data
        candles = data.candles
        closes = data.closes
        opens = data.opens
        account = self.account
        equity: list[float] = []
        candles_b = self.series_b.candles if self.series_b is not None else None

        for t, candle in enumerate(candles):
            if self.queue:
                pending, self.queue = self.queue, []
                open_price = opens[t]
                for order in pending:
                    self.execute(order, t, open_price)
            if self._atr is not None:
                # the stop component watches the primary series; pairs legs
                # exit on their own signal, not on per-leg stops
                atr_value = self._atr.push(candle)
                pos = account.positions.get(self.symbol)
                if pos is not None and pos.quantity != 0.0 and pos.stop is not None:
                    intent = apply_stops(pos.stop, candle, atr_value, self.stop_settings)
                    if intent is not None:
                        self.submit(intent, t)
                self._last_atr = atr_value
            if candles_b is not None:
                opens_i, closes_i = self.stepper.step_pair(candle, candles_b[t])
            else:
                opens_i, closes_i = self.stepper.step(candle)
            for intent in closes_i:
                self.submit(intent, t)
            for intent in opens_i:
                self.submit(intent, t)
            if account.positions:
                value = account.cash
                close_t = closes[t]
                for symbol, pos in account.positions.items():
                    if pos.quantity != 0.0:
                        ref = close_t if symbol == self.symbol else candles_b[t].close
                        value += pos.quantity * ref
                equity.append(value)
            else:
                equity.append(account.cash)

        self._force_close(len(candles) - 1)
        if self.forced_close:
            equity[-1] = account.cash

        metrics = compute_metrics(equity, self.trades)
        return BacktestReport(
            symbol=data.symbol,
            interval=data.interval,
            bars=len(candles),
            initial_cash=self.initial_cash,
            final_equity=equity[-1],
            timestamps=list(data.timestamps),
            equity=equity,
            fills=self.fills,
            trades=self.trades,
            orders=self.orders,
            metrics=metrics,
            score=score(metrics, self.lam),
            drawdown_lambda=self.lam,
            forced_close=self.forced_close,
        )

    def _force_close(self, last_bar: int) -> None:
        for symbol in sorted(self.account.positions):
            pos = self.account.positions[symbol]
            if pos.quantity == 0.0:
                continue
            if symbol == self.symbol:
                raw_price = self.data.closes[last_bar]
            else:
                raw_price = self.series_b.candles[last_bar].close
            side = Side.CLOSE_LONG if pos.quantity > 0 else Side.CLOSE_SHORT
            intent = TradeIntent(side, symbol, reason="end-of-data")
            order = Order(id=len(self.orders), intent=intent, created_at_bar=last_bar)
            self.orders.append(order)
            self.execute(order, last_bar, raw_price, forced=True)
            self.forced_close = True


def run_backtest(strategy, data: CandleSeries, initial_cash: float = 10_000.0,
                 costs: CostModel | None = None, *,
                 aux_series: dict[str, CandleSeries] | None = None,
                 allow_short: bool | None = None,
                 drawdown_lambda: float = 0.5) -> BacktestReport:
    """Replay a strategy over a series with simulated execution.

    ``strategy`` is a StrategyConfig, or any object with a
    ``step(candle) -> (opens, closes)`` method for custom strategies.
    Shorting defaults to off (spot semantics) except for pairs configs.
    """
    runner = _Backtester(strategy, data, initial_cash, costs or CostModel(),
                         aux_series, allow_short, drawdown_lambda)
    return runner.run()
