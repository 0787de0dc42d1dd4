import io

import numpy as np
import pytest

from lstrader.market_data import BookSnapshot, PriceSeries, TickRecord


def make_book(bid_total: float, ask_total: float, price: float = 100.0) -> BookSnapshot:
    return BookSnapshot(bids=((price, bid_total),), asks=((price, ask_total),))


def make_tick(t: float, price: float, bid: float = 1.0, ask: float = 1.0) -> TickRecord:
    return TickRecord(timestamp=t, price=price, book=make_book(bid, ask, price))


def series_from_prices(prices, interval: float = 10.0, imbalances=None) -> PriceSeries:
    prices = np.asarray(prices, dtype=np.float64)
    if imbalances is None:
        imbalances = np.zeros_like(prices)
    return PriceSeries(start_time=0.0, interval=interval, prices=prices, imbalances=imbalances)


def tick_csv(rows: str) -> io.StringIO:
    return io.StringIO("timestamp,price,bid_vol_total,ask_vol_total\n" + rows)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
