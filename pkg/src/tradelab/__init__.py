"""Trading research toolkit: OHLCV data handling, technical indicators,
heuristic strategies, parameter tuning and neuroevolution, plus a scoring
backtester and a simulated broker."""

__version__ = "0.1.0"
