"""Background token-frequency tables.

The calibration term of the composite scorer needs ``-ln p(token)`` under a
background corpus distribution. Tables are built from pre-tokenized id
streams, additively smoothed so every token has finite rarity, and persisted
in a checksummed little-endian binary format (``.freq`` files).
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import FormatError, TokenOutOfRange
from .state import Vocabulary

MAGIC = b"MDFQ"
VERSION = 1

_HEADER = struct.Struct("<4sHIdQI")  # magic, version, vocab, delta, total, n_entries
_PAIR = struct.Struct("<IQ")
_CRC = struct.Struct("<I")


@dataclass(frozen=True)
class FrequencyTable:
    """Smoothed token frequencies: p(x) = (count[x] + delta) / (total + delta * V)."""

    counts: np.ndarray  # int64, one slot per vocabulary id
    total: int
    smoothing: float
    vocab_size: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if self.smoothing <= 0:
            raise ValueError("smoothing must be > 0 so every probability is finite")
        if counts.shape != (self.vocab_size,):
            raise ValueError("counts must have one slot per vocabulary id")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if int(counts.sum()) != self.total:
            raise ValueError("total must equal the sum of counts")

    def prob(self, token: int) -> float:
        if not 0 <= token < self.vocab_size:
            raise TokenOutOfRange(f"token {token} outside vocabulary of size {self.vocab_size}")
        denom = self.total + self.smoothing * self.vocab_size
        return (float(self.counts[token]) + self.smoothing) / denom

    def probs(self) -> np.ndarray:
        denom = self.total + self.smoothing * self.vocab_size
        return (self.counts.astype(np.float64) + self.smoothing) / denom


def _vocab_size(vocab: Union[Vocabulary, int]) -> int:
    return vocab.size if isinstance(vocab, Vocabulary) else int(vocab)


def build_table(
    token_stream: Iterable[int],
    vocab: Union[Vocabulary, int],
    smoothing: float = 1.0,
) -> FrequencyTable:
    """Count stream multiplicities into a smoothed table."""
    size = _vocab_size(vocab)
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    counts = np.zeros(size, dtype=np.int64)
    total = 0
    for token in token_stream:
        if not 0 <= token < size:
            raise TokenOutOfRange(f"token {token} outside vocabulary of size {size}")
        counts[token] += 1
        total += 1
    return FrequencyTable(counts, total, smoothing, size)


def uniform_table(vocab: Union[Vocabulary, int], smoothing: float = 1.0) -> FrequencyTable:
    """Smoothing-only table: every token equally frequent."""
    size = _vocab_size(vocab)
    return FrequencyTable(np.zeros(size, dtype=np.int64), 0, smoothing, size)


def neg_log_freq(table: FrequencyTable, token: int) -> float:
    """-ln p(token); finite and nonnegative for any smoothed table."""
    return -math.log(table.prob(token))


def save_table(table: FrequencyTable) -> bytes:
    """Serialize: header, sparse (id, count) pairs sorted by id, CRC32 trailer.

    The layout is byte-deterministic, so equal tables serialize identically.
    """
    nonzero = np.flatnonzero(table.counts)
    parts = [
        _HEADER.pack(MAGIC, VERSION, table.vocab_size, table.smoothing, table.total, len(nonzero))
    ]
    for token in nonzero:
        parts.append(_PAIR.pack(int(token), int(table.counts[token])))
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def load_table(payload: bytes) -> FrequencyTable:
    """Inverse of :func:`save_table`; raises :class:`FormatError` on anything off."""
    if len(payload) < _HEADER.size + _CRC.size:
        raise FormatError("payload shorter than header plus checksum")
    body, crc_bytes = payload[:-_CRC.size], payload[-_CRC.size:]
    (stored_crc,) = _CRC.unpack(crc_bytes)
    if zlib.crc32(body) != stored_crc:
        raise FormatError("checksum mismatch")
    magic, version, vocab_size, smoothing, total, n_entries = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    expected_len = _HEADER.size + n_entries * _PAIR.size
    if len(body) != expected_len:
        raise FormatError("entry count disagrees with payload length")
    counts = np.zeros(vocab_size, dtype=np.int64)
    prev_token = -1
    offset = _HEADER.size
    for _ in range(n_entries):
        token, count = _PAIR.unpack_from(body, offset)
        offset += _PAIR.size
        if token >= vocab_size:
            raise FormatError(f"token {token} outside vocabulary of size {vocab_size}")
        if token <= prev_token:
            raise FormatError("entries must be sorted by strictly increasing id")
        if count == 0:
            raise FormatError("zero-count entry in sparse payload")
        counts[token] = count
        prev_token = token
    if int(counts.sum()) != total:
        raise FormatError("stored total disagrees with entry counts")
    try:
        return FrequencyTable(counts, total, smoothing, vocab_size)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_table(table: FrequencyTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_table(table))


def read_table(path) -> FrequencyTable:
    with open(path, "rb") as fh:
        return load_table(fh.read())
