"""Adaptive-frequency range coder shared by both layer codecs.

The coder keeps a 32-bit range and a 33-bit ``low`` with a cached output
byte so carries can ripple into bytes not yet written (the LZMA scheme).
Frequencies live in a Fenwick tree so cumulative lookups and symbol search
are O(log A).
"""

from __future__ import annotations

from typing import Iterable

from .errors import FormatError, TruncatedStreamError

TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class AdaptiveModel:
    """Frequency model over ``size`` symbols.

    All counts start at 1; each coded symbol adds :attr:`INCREMENT`; when the
    total exceeds :attr:`LIMIT` every count is halved (rounding up, so no
    count drops below 1).
    """

    INCREMENT = 32
    LIMIT = 1 << 16

    def __init__(self, size: int):
        if not 1 <= size <= 256:
            raise ValueError("alphabet size must be in [1, 256]")
        self.size = size
        self.freq = [1] * size
        self.total = size
        self._top = 1 << (size.bit_length() - 1)
        self._build()

    def _build(self):
        tree = [0] * (self.size + 1)
        for i, f in enumerate(self.freq, start=1):
            tree[i] += f
            j = i + (i & -i)
            if j <= self.size:
                tree[j] += tree[i]
        self.tree = tree

    def cumulative(self, sym: int) -> int:
        """Sum of counts of all symbols below ``sym``."""
        tree, total = self.tree, 0
        while sym > 0:
            total += tree[sym]
            sym &= sym - 1
        return total

    def find(self, target: int) -> tuple[int, int]:
        """Symbol whose interval holds ``target``, and that interval's start."""
        tree, size = self.tree, self.size
        pos, rem, step = 0, target, self._top
        while step:
            nxt = pos + step
            if nxt <= size and tree[nxt] <= rem:
                pos = nxt
                rem -= tree[nxt]
            step >>= 1
        return pos, target - rem

    def update(self, sym: int) -> None:
        inc = self.INCREMENT
        self.freq[sym] += inc
        self.total += inc
        if self.total > self.LIMIT:
            self.freq = [(f + 1) >> 1 for f in self.freq]
            self.total = sum(self.freq)
            self._build()
            return
        tree, size = self.tree, self.size
        i = sym + 1
        while i <= size:
            tree[i] += inc
            i += i & -i


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            out = self.out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low << 8) & MASK32

    def encode(self, model: AdaptiveModel, sym: int) -> None:
        """Code ``sym`` under ``model`` and then adapt the model."""
        if not 0 <= sym < model.size:
            raise ValueError(f"symbol {sym} outside alphabet of {model.size}")
        r = self.range // model.total
        self.low += r * model.cumulative(sym)
        self.range = r * model.freq[sym]
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()
        model.update(sym)

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(5):
            self.code = (self.code << 8) | self._byte()
        if self.code > MASK32:
            raise FormatError("corrupt range-coded stream")

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise TruncatedStreamError("range-coded stream is truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, model: AdaptiveModel) -> int:
        r = self.range // model.total
        target = self.code // r
        if target >= model.total:
            raise FormatError("corrupt range-coded stream")
        sym, start = model.find(target)
        self.code -= r * start
        self.range = r * model.freq[sym]
        while self.range < TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range <<= 8
        model.update(sym)
        return sym


def encode_symbols(symbols: Iterable[int], alphabet: int) -> bytes:
    """Code a whole sequence under one fresh adaptive model."""
    enc = RangeEncoder()
    model = AdaptiveModel(alphabet)
    for s in symbols:
        enc.encode(model, s)
    return enc.finish()


def decode_symbols(data: bytes, count: int, alphabet: int) -> list[int]:
    dec = RangeDecoder(data)
    model = AdaptiveModel(alphabet)
    return [dec.decode(model) for _ in range(count)]
