"""Lookback window sets and the ring of cumulative sums that serves them."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from msdetect import _kernels


class WindowNotAvailable(IndexError):
    """Requested window is longer than the elapsed time or the ring."""


@dataclass(frozen=True)
class WindowSet:
    kind: str
    windows: tuple[int, ...]
    k1: int | None = None
    r: float | None = None
    cap: int | None = None

    @classmethod
    def lai(cls, k1: int, r: float, cap: int) -> WindowSet:
        """``{1..k1}`` plus the geometric tail ``floor(r**j * k1) <= cap``."""
        if not r > 1:
            raise ValueError(f"invalid ratio r={r}; need r > 1")
        if k1 < 1 or cap < k1:
            raise ValueError("need k1 >= 1 and cap >= k1")
        ks = set(range(1, k1 + 1))
        j = 1
        while True:
            k = math.floor(r**j * k1)
            if k > cap:
                break
            ks.add(k)
            j += 1
        return cls("lai", tuple(sorted(ks)), k1=k1, r=r, cap=cap)

    @classmethod
    def explicit(cls, windows) -> WindowSet:
        ks = sorted(set(int(k) for k in windows))
        if not ks or ks[0] < 1:
            raise ValueError("windows must be positive integers")
        return cls("explicit", tuple(ks))

    @classmethod
    def range(cls, lo: int, hi: int) -> WindowSet:
        return cls.explicit(range(lo, hi + 1))

    @classmethod
    def parse(cls, text: str) -> WindowSet:
        """Parse ``lai:k1,r,cap`` or ``range:a..b``."""
        text = text.strip()
        m = re.fullmatch(r"lai:(\d+),([0-9.eE+-]+),(\d+)", text)
        if m:
            return cls.lai(int(m[1]), float(m[2]), int(m[3]))
        m = re.fullmatch(r"range:(\d+)\.\.(\d+)", text)
        if m:
            lo, hi = int(m[1]), int(m[2])
            if lo > hi:
                raise ValueError(f"malformed window spec {text!r}: empty range")
            return cls.range(lo, hi)
        raise ValueError(f"malformed window spec {text!r}; use lai:k1,r,cap or range:a..b")

    @property
    def max_window(self) -> int:
        return self.windows[-1]

    def spec_string(self) -> str:
        if self.kind == "lai":
            return f"lai:{self.k1},{self.r:g},{self.cap}"
        ks = self.windows
        if ks == tuple(range(ks[0], ks[-1] + 1)):
            return f"range:{ks[0]}..{ks[-1]}"
        return ",".join(map(str, ks))

    def to_dict(self) -> dict:
        if self.kind == "lai":
            return {"kind": "lai", "k1": self.k1, "r": self.r, "cap": self.cap}
        return {"kind": "explicit", "windows": list(self.windows)}

    @classmethod
    def from_obj(cls, obj) -> WindowSet:
        if isinstance(obj, str):
            return cls.parse(obj)
        if obj["kind"] == "lai":
            return cls.lai(int(obj["k1"]), float(obj["r"]), int(obj["cap"]))
        return cls.explicit(obj["windows"])


def build_window_set(kind: str, **params) -> WindowSet:
    if kind == "lai":
        return WindowSet.lai(params["k1"], params["r"], params["cap"])
    if kind == "explicit":
        return WindowSet.explicit(params["windows"])
    raise ValueError(f"unknown window kind {kind!r}")


class PrefixState:
    """Circular buffer of the last ``max_window + 1`` cumulative sums.

    Row ``t mod (max_window + 1)`` holds the cumulative sum at time ``t``;
    the ring is periodically rebased so stored values stay small.
    """

    def __init__(self, n_streams: int, max_window: int):
        if n_streams < 1 or max_window < 1:
            raise ValueError("n_streams and max_window must be >= 1")
        self.n_streams = n_streams
        self.max_window = max_window
        self.ring = np.zeros((max_window + 1, n_streams))
        self.ctr = np.zeros(2, dtype=np.int64)  # [row of current time, t]
        self.inv_sqrt = np.zeros(max_window + 1)
        self.inv_sqrt[1:] = 1.0 / np.sqrt(np.arange(1, max_window + 1))

    @property
    def t(self) -> int:
        return int(self.ctr[1])

    def push_column(self, values) -> PrefixState:
        x = np.asarray(values, dtype=float)
        if x.shape != (self.n_streams,):
            raise ValueError(f"column length {x.size} != n_streams {self.n_streams}")
        _kernels._push(self.ring, self.ctr, x)
        return self

    def window_sum(self, n: int, k: int) -> float:
        """Sum of the last ``k`` observations of stream ``n`` (0-based)."""
        if not 1 <= k <= min(self.t, self.max_window):
            raise WindowNotAvailable(f"window k={k} not available at t={self.t}")
        L = self.max_window + 1
        return float(self.ring[self.ctr[0], n] - self.ring[(self.t - k) % L, n])

    def z_score(self, n: int, k: int) -> float:
        return self.window_sum(n, k) * self.inv_sqrt[k]

    def z_vector(self, k: int) -> np.ndarray:
        if not 1 <= k <= min(self.t, self.max_window):
            raise WindowNotAvailable(f"window k={k} not available at t={self.t}")
        L = self.max_window + 1
        return (self.ring[self.ctr[0]] - self.ring[(self.t - k) % L]) * self.inv_sqrt[k]


def push_column(state: PrefixState, column) -> PrefixState:
    values = getattr(column, "values", column)
    return state.push_column(values)


def z_score(state: PrefixState, n: int, k: int) -> float:
    return state.z_score(n, k)
