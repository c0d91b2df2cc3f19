"""Brute-force oracles, written independently of the planners they check."""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations, product

import numpy as np


def live_set(lin_offsets, length: int) -> int:
    """Largest number of stream elements a FIFO must hold at one PE.

    Element ``t`` arrives in cycle ``t``. Output ``q`` reads ``q + o`` for every
    offset ``o`` and fires in the cycle its newest tap arrives. Every output
    whose taps all lie inside the stream is computed, since a FIFO cannot skip
    positions. An element is live from its arrival until its last read.
    """
    offs = np.array(sorted(set(lin_offsets)))
    lo, hi = offs[0], offs[-1]
    q = np.arange(max(0, -lo), length - max(hi, 0))
    q = q[(q + lo >= 0) & (q + hi < length)]
    if q.size == 0:
        return 0
    last_read = np.full(length, -1)
    for o in offs:
        np.maximum.at(last_read, q + o, q + hi)
    arrive = np.arange(length)
    live = np.zeros(length + 1, dtype=np.int64)
    used = last_read >= 0
    np.add.at(live, arrive[used], 1)
    np.add.at(live, last_read[used] + 1, -1)
    return int(np.cumsum(live).max())


def _canon(terms):
    """Translate a sparse form ``((offset, weight), ...)`` to start at 0 with a positive lead."""
    terms = sorted(terms)
    base = terms[0][0]
    sign = 1 if terms[0][1] > 0 else -1
    return tuple((o - base, w * sign) for o, w in terms)


@lru_cache(maxsize=None)
def _placements(host, guest):
    """Masks of ``host`` terms equal to a translated copy of ``guest`` times +-1."""
    where = {o: (i, w) for i, (o, w) in enumerate(host)}
    masks = set()
    for shift in range(host[0][0] - guest[-1][0], host[-1][0] - guest[0][0] + 1):
        for sign in (1, -1):
            mask = 0
            for o, w in guest:
                hit = where.get(o + shift)
                if hit is None or hit[1] != sign * w:
                    break
                mask |= 1 << hit[0]
            else:
                masks.add(mask)
    return frozenset(masks)


def _min_pieces(host, shared):
    """Fewest pieces exactly partitioning ``host``; pieces are single terms or shared forms."""
    n = len(host)
    usable = tuple(g for g in shared if len(g) < n and _placements(host, g))
    return _partition(host, usable)


@lru_cache(maxsize=None)
def _partition(host, usable):
    n = len(host)
    blocks = {1 << i for i in range(n)}
    for g in usable:
        blocks |= _placements(host, g)
    full = (1 << n) - 1
    best = [0] + [n + 1] * full
    for mask in range(1, full + 1):
        low = mask & -mask
        best[mask] = min((best[mask ^ b] + 1 for b in blocks if b & low and b & mask == b), default=n + 1)
    return best[full]


def _mirror(terms):
    return tuple(sorted((-o, w) for o, w in terms))


def min_ops(weights: dict) -> int:
    """Fewest multiplies plus adds computing ``sum(w * x[p + o])`` for every ``p``.

    Exhaustive over plans whose intermediate values are sub-sums of the stencil.
    Such a value is computed once per position and read at any translation,
    with either sign. Every subset of sub-sums is tried as the shared set; each
    shared form and the result are built by the fewest adds that partition them
    into single terms and smaller shared forms. Products ``|w| * x`` are
    computed once per distinct ``|w| != 1``, which every such plan needs anyway.
    """
    terms = tuple(sorted((o, w) for o, w in weights.items() if w != 0))
    if not terms:
        return 0
    # the cost is invariant under mirroring and negation
    return _min_ops(min(_canon(terms), _canon(_mirror(terms))))


@lru_cache(maxsize=None)
def _min_ops(terms) -> int:
    mults = len({abs(w) for _, w in terms if abs(w) != 1})
    n = len(terms)
    forms = sorted({_canon([terms[i] for i in range(n) if m >> i & 1])
                    for m in range(1, 1 << n) if bin(m).count("1") >= 2} - {_canon(terms)})
    best = None
    for r in range(len(forms) + 1):
        for shared in combinations(forms, r):
            adds = _min_pieces(terms, shared) - 1
            if best is not None and adds >= best:
                continue
            for f in shared:
                adds += _min_pieces(f, [g for g in shared if g != f]) - 1
            if best is None or adds < best:
                best = adds
    return mults + best


def all_small_kernels(max_taps=4, max_offset=5):
    """Every 1-D kernel with up to ``max_taps`` taps and weights in {-2, -1, 1, 2}, up to translation."""
    for n in range(1, max_taps + 1):
        for rest in combinations(range(1, max_offset + 1), n - 1):
            offsets = (0,) + rest
            for ws in product((-2, -1, 1, 2), repeat=n):
                yield dict(zip(offsets, ws))
