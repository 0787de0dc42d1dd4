"""Threshold trading state machine and the causal backtest loop.

Position is held in whole units capped to {-1, 0, +1}. A predicted change
above the threshold buys one unit when flat or short; below the negative
threshold sells one unit when flat or long; anything else holds. Fills are
at the current bucket price with no fees or slippage.

A round trip is a matched entry/exit pair returning the position to flat;
its profit attaches to the closing trade. Any position still open at the
end of a backtest is force-liquidated at the final bucket price and counted
as a final round trip.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .evaluator import SHARPE_SQRT, BacktestReport, sharpe
from .market_data import PriceSeries
from .regression import PredictorModel, fit_points

SIDE_BUY = "buy"
SIDE_SELL = "sell"

LEDGER_HEADER = ("time", "side", "price", "position_after", "round_trip_profit")


@dataclass(frozen=True)
class Position:
    units: int = 0

    def __post_init__(self) -> None:
        if self.units not in (-1, 0, 1):
            raise ValueError(f"position units must be in {{-1, 0, +1}}, got {self.units}")


FLAT = Position(0)


@dataclass(frozen=True)
class Trade:
    """One fill. round_trip_profit is set on trades that close a round trip."""

    time: int
    side: str
    price: float
    position_after: int
    round_trip_profit: float | None = None


def step(
    position: Position,
    dp: float,
    threshold: float,
    price: float,
    time: int = 0,
) -> tuple[Position, Trade | None]:
    """One decision: buy above +threshold when short or flat, sell below
    -threshold when long or flat, else hold. Strict inequalities; exactly one
    unit moves per trade."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    if dp > threshold and position.units <= 0:
        new = Position(position.units + 1)
        return new, Trade(time=time, side=SIDE_BUY, price=price, position_after=new.units)
    if dp < -threshold and position.units >= 0:
        new = Position(position.units - 1)
        return new, Trade(time=time, side=SIDE_SELL, price=price, position_after=new.units)
    return position, None


def write_ledger_csv(trades, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_HEADER)
        for trade in trades:
            profit = "" if trade.round_trip_profit is None else repr(float(trade.round_trip_profit))
            writer.writerow(
                [trade.time, trade.side, repr(float(trade.price)), trade.position_after, profit]
            )


def run_backtest(
    model: PredictorModel,
    series: PriceSeries,
    threshold: float,
    dp_stream: tuple[np.ndarray, np.ndarray] | None = None,
    sharpe_variant: str = SHARPE_SQRT,
) -> BacktestReport:
    """Simulate the strategy causally over a series at one threshold.

    At each feasible bucket t the predictor sees data up to t, predicts the
    change into t+1, and the state machine acts at the bucket-t price. An
    open position at the series end is liquidated at the final price. The
    cumulative profit series marks the position to market per bucket.

    A precomputed (ts, dp) stream may be passed to share feature work across
    thresholds; it must cover exactly the feasible prediction points.
    """
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    ts = fit_points(series, model.banks)  # raises when the series is too short
    if dp_stream is None:
        ts, dp = model.dp_stream(series, ts)
    else:
        given_ts, dp = dp_stream
        if len(given_ts) != len(ts) or given_ts[0] != ts[0] or given_ts[-1] != ts[-1]:
            raise ValueError("dp_stream does not cover this series' prediction points")

    prices = series.prices
    n = len(series)
    first_t = int(ts[0])

    trades: list[Trade] = []
    profits: list[float] = []
    holding_buckets: list[int] = []
    entry_prices: list[float] = []
    cumulative = np.zeros(n)
    cash = 0.0
    position = FLAT
    entry_price = 0.0
    entry_time = 0

    for t in range(first_t, n):
        if t < n - 1:
            position, trade = step(position, float(dp[t - first_t]), threshold, float(prices[t]), time=t)
        else:
            trade = None
            if position.units != 0:  # force-liquidate at the final bucket
                side = SIDE_SELL if position.units > 0 else SIDE_BUY
                trade = Trade(time=t, side=side, price=float(prices[t]), position_after=0)
                position = FLAT
        if trade is not None:
            cash += -trade.price if trade.side == SIDE_BUY else trade.price
            if trade.position_after == 0:  # closed a round trip
                direction = 1.0 if trade.side == SIDE_SELL else -1.0
                profit = direction * (trade.price - entry_price)
                trade = replace(trade, round_trip_profit=profit)
                profits.append(profit)
                holding_buckets.append(trade.time - entry_time)
                entry_prices.append(entry_price)
            else:  # opened a round trip
                entry_price = trade.price
                entry_time = trade.time
            trades.append(trade)
        cumulative[t] = cash + position.units * prices[t]

    total_profit = math.fsum(profits)
    fill_sum = math.fsum(
        -trade.price if trade.side == SIDE_BUY else trade.price for trade in trades
    )
    if abs(total_profit - fill_sum) > 1e-9:
        raise AssertionError("ledger conservation violated")  # internal sanity check
    cumulative[-1] = total_profit  # flat after liquidation: final mark is realized P&L

    benchmark_move = abs(float(prices[-1] - prices[0]))
    sharpe_value = sharpe(profits, benchmark_move, sharpe_variant)
    return BacktestReport(
        threshold=float(threshold),
        trades=tuple(trades),
        round_trip_profits=tuple(profits),
        cumulative_profit_series=cumulative,
        total_profit=total_profit,
        num_trades=len(trades),
        num_round_trips=len(profits),
        avg_holding_time=(
            float(np.mean(holding_buckets) * series.interval) if holding_buckets else 0.0
        ),
        avg_investment=float(np.mean(entry_prices)) if entry_prices else 0.0,
        benchmark_move=benchmark_move,
        sharpe=sharpe_value,
        sharpe_defined=not math.isnan(sharpe_value),
    )
