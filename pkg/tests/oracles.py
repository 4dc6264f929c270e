"""Independent brute-force oracles the implementation is checked against.

These deliberately avoid the library code paths they verify: the alignment
oracle enumerates every monotone alignment, and the groundedness table uses
pure integer arithmetic for the ceiling.
"""

from __future__ import annotations

from functools import lru_cache


def oracle_alignment(hypothesis: tuple[str, ...], reference: tuple[str, ...]) -> tuple[int, int]:
    """(edits, hits) of the minimum-edit alignment, ties broken toward more hits."""

    @lru_cache(maxsize=None)
    def outcomes(i: int, j: int) -> frozenset[tuple[int, int]]:
        if i == len(reference) and j == len(hypothesis):
            return frozenset({(0, 0)})
        acc: set[tuple[int, int]] = set()
        if i < len(reference) and j < len(hypothesis):
            for edits, hits in outcomes(i + 1, j + 1):
                if reference[i] == hypothesis[j]:
                    acc.add((edits, hits + 1))
                else:
                    acc.add((edits + 1, hits))
        if i < len(reference):
            for edits, hits in outcomes(i + 1, j):
                acc.add((edits + 1, hits))
        if j < len(hypothesis):
            for edits, hits in outcomes(i, j + 1):
                acc.add((edits + 1, hits))
        return frozenset(acc)

    all_outcomes = outcomes(0, 0)
    best_edits = min(edits for edits, _ in all_outcomes)
    best_hits = max(hits for edits, hits in all_outcomes if edits == best_edits)
    return best_edits, best_hits


def oracle_mer(hypothesis: tuple[str, ...], reference: tuple[str, ...]) -> float:
    if not hypothesis and not reference:
        return 0.0
    edits, hits = oracle_alignment(hypothesis, reference)
    return edits / (edits + hits)


def oracle_groundedness(hallucinated: int, total: int) -> int:
    """Rubric table via integer ceiling: 5 iff H == 0, else max(0, 5 - ceil(5H/N))."""
    if hallucinated == 0:
        return 5
    ceiling = -((-5 * hallucinated) // total)
    return max(0, 5 - ceiling)


def all_sequences(alphabet: tuple[str, ...], max_len: int):
    """Every token sequence over the alphabet up to max_len, shortest first."""
    frontier: list[tuple[str, ...]] = [()]
    yield ()
    for _ in range(max_len):
        frontier = [seq + (tok,) for seq in frontier for tok in alphabet]
        yield from frontier
