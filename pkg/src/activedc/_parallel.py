"""Deterministic chunked execution over pool rows.

Chunk boundaries depend only on the row count, never on the worker count, and
partial results are always combined in chunk order. Changing ``threads``
therefore cannot change any result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

CHUNK_ROWS = 4096

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("threads must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def chunk_bounds(n: int, chunk: int = CHUNK_ROWS) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(fn, n: int, threads: int | None = None, chunk: int = CHUNK_ROWS) -> list:
    """Apply ``fn(lo, hi)`` to every chunk; results come back in chunk order."""
    bounds = chunk_bounds(n, chunk)
    threads = _threads if threads is None else threads
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda b: fn(*b), bounds))


def ordered_sum(parts):
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total
