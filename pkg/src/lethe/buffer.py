"""Bounded replay buffer with reservoir insertion and class purging.

Insertion follows the classic reservoir rule: fill to capacity, then
replace a uniform slot with probability capacity/(n_seen+1), so every
offered sample has equal inclusion probability regardless of arrival
order. Purging deletes items of the named classes outright.

`n_seen` keeps counting across purges by default. Decrementing it would
re-inflate the acceptance rate and bias the reservoir toward whatever
arrives right after a purge; `decrement_seen_on_purge` opts into that
behavior for anyone who wants purged history to be forgotten by the
sampler too.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class ReplayBuffer:
    __slots__ = ("capacity", "items", "n_seen", "decrement_seen_on_purge")

    def __init__(self, capacity: int, decrement_seen_on_purge: bool = False):
        if capacity < 1:
            raise ContractError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.items: list[tuple[np.ndarray, int]] = []
        self.n_seen = 0
        self.decrement_seen_on_purge = decrement_seen_on_purge

    def __len__(self) -> int:
        return len(self.items)


def reservoir_insert(buf: ReplayBuffer, sample, rng: np.random.Generator) -> ReplayBuffer:
    x, y = sample
    record = (np.asarray(x, dtype=np.float64).copy(), int(y))
    if len(buf.items) < buf.capacity:
        buf.items.append(record)
    else:
        slot = int(rng.integers(0, buf.n_seen + 1))
        if slot < buf.capacity:
            buf.items[slot] = record
    buf.n_seen += 1
    return buf


def sample_batch(buf: ReplayBuffer, k: int, rng: np.random.Generator) -> list:
    """k items uniformly without replacement; the whole buffer when k
    meets or exceeds its size, nothing when it is empty."""
    if k < 0:
        raise ContractError("batch size must be nonnegative")
    size = len(buf.items)
    if size == 0 or k == 0:
        return []
    if k >= size:
        picks = rng.permutation(size)
    else:
        picks = rng.choice(size, size=k, replace=False)
    return [buf.items[i] for i in picks]


def purge_classes(buf: ReplayBuffer, classes) -> ReplayBuffer:
    doomed = {int(c) for c in classes}
    kept = [item for item in buf.items if item[1] not in doomed]
    removed = len(buf.items) - len(kept)
    buf.items = kept
    if buf.decrement_seen_on_purge:
        buf.n_seen -= removed
    return buf


def class_histogram(buf: ReplayBuffer) -> dict[int, int]:
    hist: dict[int, int] = {}
    for _, y in buf.items:
        hist[y] = hist.get(y, 0) + 1
    return hist


def write_snapshot(buf: ReplayBuffer, path) -> None:
    """One line per item: class id, then the input coordinates as hex
    floats, space-separated. Sorted by (class, coordinates) so equal
    buffer contents serialize identically regardless of slot order."""
    rows = []
    for x, y in buf.items:
        coords = " ".join(v.hex() for v in np.asarray(x, dtype=np.float64).tolist())
        rows.append(f"{y} {coords}")
    rows.sort()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(rows) + ("\n" if rows else ""))


def read_snapshot(path) -> list[tuple[np.ndarray, int]]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line:
                continue
            parts = line.split(" ")
            try:
                y = int(parts[0])
                x = np.array([float.fromhex(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ContractError(f"{path}: malformed snapshot record at line {lineno}") from exc
            out.append((x, y))
    return out
