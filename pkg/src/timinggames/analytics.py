"""Bid-timing analytics: marginal value of waiting, winner classification,
attestation shares and orphaned-block timing.

The regression first strips slot and builder fixed effects from bid values by
alternating group demeaning, then fits residual value on arrival time by
ordinary least squares.  The slope is the marginal ETH value of one extra
millisecond of waiting.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .relaydata import BidRecord

REORG_SHARE_THRESHOLD = 0.40
DEMEAN_TOLERANCE = 1e-12
DEMEAN_MAX_ITER = 1000

CLASS_EARLY = "EARLY"
CLASS_LATE = "LATE"
CLASS_HIGHEST = "HIGHEST"

STATUS_CANONICAL = "canonical"
STATUS_ORPHANED = "orphaned"
STATUS_MISSED = "missed"


class AnalyticsError(Exception):
    """Invalid analysis input."""


@dataclass(frozen=True)
class RegressionResult:
    slope: float  # ETH per millisecond
    intercept: float
    n: int
    r_squared: float


@dataclass(frozen=True)
class WinnerTiming:
    slot: int
    winner_arrival_ms: int
    highest_arrival_ms: int
    delta_t_ms: int
    delta_v_eth: float
    winner_class: str


@dataclass(frozen=True)
class AttestationShareRecord:
    slot: int
    share: float
    winner_arrival_ms: int | None
    vulnerable: bool


@dataclass(frozen=True)
class OrphanReport:
    orphaned_count: int
    missed_count: int
    median_orphaned_arrival_ms: float | None
    median_nonorphaned_arrival_ms: float | None
    late_nonorphaned_count: int
    considered_count: int


def residualize(
    values: Sequence[float],
    slot_ids: Sequence,
    builder_ids: Sequence,
    *,
    tolerance: float = DEMEAN_TOLERANCE,
    max_iter: int = DEMEAN_MAX_ITER,
) -> np.ndarray:
    """Two-way fixed-effect residuals by alternating demeaning.

    Subtracts slot-group means, then builder-group means, repeating until the
    largest per-iteration change drops below ``tolerance``.
    """
    if not (len(values) == len(slot_ids) == len(builder_ids)):
        raise AnalyticsError("values, slot_ids and builder_ids must align")
    if len(values) == 0:
        raise AnalyticsError("empty input")
    r = np.asarray(values, dtype=np.float64).copy()
    slot_codes, slot_counts = _codes(slot_ids)
    builder_codes, builder_counts = _codes(builder_ids)
    for _ in range(max_iter):
        before = r.copy()
        means = np.bincount(slot_codes, weights=r) / slot_counts
        r -= means[slot_codes]
        means = np.bincount(builder_codes, weights=r) / builder_counts
        r -= means[builder_codes]
        if np.max(np.abs(r - before)) < tolerance:
            break
    return r


def _codes(ids: Sequence):
    codes, counts = {}, []
    out = np.empty(len(ids), dtype=np.intp)
    for i, key in enumerate(ids):
        c = codes.get(key)
        if c is None:
            c = codes[key] = len(counts)
            counts.append(0)
        counts[c] += 1
        out[i] = c
    return out, np.asarray(counts, dtype=np.float64)


def fit_marginal_value(
    arrival_ms: Sequence[float], residuals: Sequence[float]
) -> RegressionResult:
    """OLS of residual bid value (ETH) on arrival time (ms)."""
    t = np.asarray(arrival_ms, dtype=np.float64)
    y = np.asarray(residuals, dtype=np.float64)
    if t.shape != y.shape:
        raise AnalyticsError("arrival times and residuals must align")
    n = t.size
    if n < 2:
        raise AnalyticsError("need at least 2 observations")
    t_c = t - t.mean()
    sxx = float(t_c @ t_c)
    if sxx == 0.0:
        raise AnalyticsError("arrival times are all identical")
    y_c = y - y.mean()
    slope = float(t_c @ y_c) / sxx
    intercept = float(y.mean() - slope * t.mean())
    syy = float(y_c @ y_c)
    if syy == 0.0:
        r2 = 1.0 if slope == 0.0 else 0.0
    else:
        resid = y - (intercept + slope * t)
        r2 = max(0.0, min(1.0, 1.0 - float(resid @ resid) / syy))
    return RegressionResult(slope=slope, intercept=intercept, n=n, r_squared=r2)


def _highest_bid(slot_bids: Sequence[BidRecord]) -> BidRecord:
    # Ties: earliest arrival, then lexicographic block hash.
    return min(slot_bids, key=lambda b: (-b.value_wei, b.arrival_ms, b.block_hash))


def classify_winner(
    winner: BidRecord, slot_bids: Sequence[BidRecord]
) -> WinnerTiming:
    """Place the winning bid relative to the slot's highest bid.

    HIGHEST means the winner is itself a maximal-value bid; EARLY means it
    arrived before the highest bid; LATE means at or after it.
    """
    if not any(b.dedup_key == winner.dedup_key for b in slot_bids):
        raise AnalyticsError(f"winner not among slot {winner.slot} bids")
    highest = _highest_bid(slot_bids)
    delta_v_wei = highest.value_wei - winner.value_wei
    if delta_v_wei == 0:
        cls = CLASS_HIGHEST
    elif winner.arrival_ms < highest.arrival_ms:
        cls = CLASS_EARLY
    else:
        cls = CLASS_LATE
    return WinnerTiming(
        slot=winner.slot,
        winner_arrival_ms=winner.arrival_ms,
        highest_arrival_ms=highest.arrival_ms,
        delta_t_ms=highest.arrival_ms - winner.arrival_ms,
        delta_v_eth=delta_v_wei / 1e18,
        winner_class=cls,
    )


def unrealized_value(timings: Sequence[WinnerTiming]) -> dict:
    """Aggregate value left on the table by early winners.

    EARLY deltas were forgone for good (the higher bid came after signing);
    LATE deltas were realizable in principle.
    """
    early = [t for t in timings if t.winner_class == CLASS_EARLY]
    late = [t for t in timings if t.winner_class == CLASS_LATE]
    non_highest = [t for t in timings if t.winner_class != CLASS_HIGHEST]
    return {
        "unrealized_eth": sum(t.delta_v_eth for t in early),
        "realizable_eth": sum(t.delta_v_eth for t in late),
        "median_delta_t_ms": (
            statistics.median(t.delta_t_ms for t in non_highest)
            if non_highest
            else None
        ),
        "early_count": len(early),
        "late_count": len(late),
        "highest_count": sum(1 for t in timings if t.winner_class == CLASS_HIGHEST),
    }


def attestation_share(block_weight_gwei: int, committee_weight_gwei: int) -> float:
    if committee_weight_gwei <= 0:
        raise AnalyticsError("committee weight must be positive")
    share = block_weight_gwei / committee_weight_gwei
    return max(0.0, min(1.0, share))


def reorg_vulnerable(share: float) -> bool:
    """A block below 40% next-slot attestation share can be displaced by a
    boosted competitor."""
    if not 0.0 <= share <= 1.0:
        raise AnalyticsError("share must lie in [0, 1]")
    return share < REORG_SHARE_THRESHOLD


def orphan_comparison(blocks: Sequence[dict]) -> OrphanReport:
    """Arrival-time contrast between orphaned and canonical blocks.

    Each record carries ``arrival_ms`` and ``status``.  Missed slots have no
    block and are only counted.  Group medians use all records of the group;
    the late count restricts attention to blocks from the earliest orphaned
    arrival onward, since earlier slots could not have been influenced by the
    orphaning episode.
    """
    orphaned = []
    nonorphaned = []
    missed = 0
    for rec in blocks:
        status = rec["status"]
        if status == STATUS_MISSED:
            missed += 1
        elif status == STATUS_ORPHANED:
            orphaned.append(rec["arrival_ms"])
        elif status == STATUS_CANONICAL:
            nonorphaned.append(rec["arrival_ms"])
        else:
            raise AnalyticsError(f"unknown block status {status!r}")
    med_orphaned = statistics.median(orphaned) if orphaned else None
    med_nonorphaned = statistics.median(nonorphaned) if nonorphaned else None
    if orphaned:
        earliest = min(orphaned)
        considered = [a for a in nonorphaned if a >= earliest]
        late = sum(1 for a in considered if a > med_orphaned)
    else:
        considered = []
        late = 0
    return OrphanReport(
        orphaned_count=len(orphaned),
        missed_count=missed,
        median_orphaned_arrival_ms=med_orphaned,
        median_nonorphaned_arrival_ms=med_nonorphaned,
        late_nonorphaned_count=late,
        considered_count=len(considered),
    )
