"""Relay bid ingestion, slot-relative timing and duplicate removal.

Builders resubmit identical bids (same block hash and value) throughout an
auction and mirror them to several relays, so the raw streams carry heavy
duplication.  A bid's identity is the (slot, builder, block hash, value)
tuple; within a relay the first appearance wins, across relays the globally
earliest one does.

Values stay as exact wei integers everywhere in this module; conversion to
ETH happens only at analysis boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

SLOT_MS = 12_000
MAINNET_GENESIS_UNIX_MS = 1_606_824_023_000  # config preset, never hardcoded in logic
DEFAULT_PLAUSIBILITY_WINDOW_MS = (-24_000, 24_000)

CSV_HEADER = "slot,relay,builder,block_hash,value_wei,arrival_ms,num_tx"

DEFAULT_FIELD_MAP = {
    "slot": "slot",
    "builder_id": "builder_pubkey",
    "block_hash": "block_hash",
    "parent_hash": "parent_hash",
    "value_wei": "value",
    "num_transactions": "num_tx",
    "timestamp_ms": "timestamp_ms",
    "timestamp_s": "timestamp",
    "proposer_id": "proposer_pubkey",
}


class IngestError(Exception):
    """A record rejected at ingest; carries the raw record."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class BidRecord:
    slot: int
    relay_id: str
    builder_id: str
    block_hash: str
    parent_hash: str
    value_wei: int
    num_transactions: int
    arrival_ms: int

    def __post_init__(self):
        if self.slot < 0:
            raise ValueError("slot must be non-negative")
        if self.value_wei < 0:
            raise ValueError("value_wei must be non-negative")
        if self.num_transactions < 0:
            raise ValueError("num_transactions must be non-negative")

    @property
    def dedup_key(self) -> "DedupKey":
        return DedupKey(self.slot, self.builder_id, self.block_hash, self.value_wei)

    @property
    def value_eth(self) -> float:
        return self.value_wei / 1e18


@dataclass(frozen=True)
class DeliveredPayload:
    slot: int
    relay_id: str
    builder_id: str
    block_hash: str
    value_wei: int
    proposer_id: str


@dataclass(frozen=True)
class DedupKey:
    slot: int
    builder_id: str
    block_hash: str
    value_wei: int


def normalize_arrival(
    unix_ms: int,
    slot: int,
    genesis_unix_ms: int,
    window_ms=DEFAULT_PLAUSIBILITY_WINDOW_MS,
) -> int:
    """Milliseconds relative to the slot start; negative means the bid
    arrived during the previous slot."""
    slot_start = genesis_unix_ms + slot * SLOT_MS
    arrival = unix_ms - slot_start
    lo, hi = window_ms
    if not lo <= arrival <= hi:
        raise IngestError(
            f"arrival {arrival}ms outside plausibility window [{lo}, {hi}]",
            record={"unix_ms": unix_ms, "slot": slot},
        )
    return arrival


def dedup_within_relay(bids: Sequence[BidRecord], relay_id: str) -> list:
    """One record per key, keeping the earliest arrival (ties: first read).

    Output sorted by ascending arrival_ms, stable on ties.
    """
    best: dict = {}
    for bid in bids:
        if bid.relay_id != relay_id:
            raise ValueError(f"bid from relay {bid.relay_id!r}, expected {relay_id!r}")
        key = bid.dedup_key
        held = best.get(key)
        if held is None or bid.arrival_ms < held[1].arrival_ms:
            best[key] = (len(best), bid)
    survivors = [bid for _, bid in best.values()]
    survivors.sort(key=lambda b: b.arrival_ms)
    return survivors


def dedup_across_relays(bids: Sequence[BidRecord]) -> list:
    """Globally earliest record per key; survivors keep their relay_id."""
    best: dict = {}
    for bid in bids:
        key = bid.dedup_key
        held = best.get(key)
        if held is None or bid.arrival_ms < held.arrival_ms:
            best[key] = bid
    survivors = list(best.values())
    survivors.sort(key=lambda b: b.arrival_ms)
    return survivors


def duplicate_stats(bids: Sequence[BidRecord]) -> dict:
    """Duplicate counts (raw records minus unique keys) per (relay, slot),
    plus the per-relay average over the slots that relay saw."""
    raw: dict = {}
    keys: dict = {}
    for bid in bids:
        cell = (bid.relay_id, bid.slot)
        raw[cell] = raw.get(cell, 0) + 1
        keys.setdefault(cell, set()).add(bid.dedup_key)
    per_cell = {cell: raw[cell] - len(keys[cell]) for cell in raw}
    relay_totals: dict = {}
    relay_slots: dict = {}
    for (relay, _), count in per_cell.items():
        relay_totals[relay] = relay_totals.get(relay, 0) + count
        relay_slots[relay] = relay_slots.get(relay, 0) + 1
    per_relay_avg = {r: relay_totals[r] / relay_slots[r] for r in relay_totals}
    return {"per_relay_slot": per_cell, "per_relay_avg": per_relay_avg}


def parse_bid_line(
    line: str,
    relay_id: str,
    genesis_unix_ms: int,
    field_map: dict | None = None,
    window_ms=DEFAULT_PLAUSIBILITY_WINDOW_MS,
) -> BidRecord:
    """One newline-delimited JSON record in the relay data API schema."""
    fm = field_map or DEFAULT_FIELD_MAP
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IngestError(f"not valid JSON: {exc}", record=line) from exc
    try:
        slot = int(raw[fm["slot"]])
        builder = str(raw[fm["builder_id"]])
        block_hash = str(raw[fm["block_hash"]])
        parent_hash = str(raw.get(fm["parent_hash"], ""))
        value_wei = int(raw[fm["value_wei"]])
        num_tx = int(raw.get(fm["num_transactions"], 0))
    except (KeyError, ValueError, TypeError) as exc:
        raise IngestError(f"malformed record: {exc}", record=raw) from exc
    if not _plausible_hash(block_hash):
        raise IngestError(f"non-hex block hash {block_hash!r}", record=raw)
    if fm["timestamp_ms"] in raw:
        unix_ms = int(raw[fm["timestamp_ms"]])
    elif fm["timestamp_s"] in raw:
        unix_ms = int(raw[fm["timestamp_s"]]) * 1000
    else:
        raise IngestError("no timestamp field", record=raw)
    arrival = normalize_arrival(unix_ms, slot, genesis_unix_ms, window_ms)
    return BidRecord(
        slot=slot,
        relay_id=relay_id,
        builder_id=builder,
        block_hash=block_hash,
        parent_hash=parent_hash,
        value_wei=value_wei,
        num_transactions=num_tx,
        arrival_ms=arrival,
    )


def _plausible_hash(value: str) -> bool:
    body = value[2:] if value.startswith("0x") else value
    if len(body) != 64:
        return False
    try:
        int(body, 16)
    except ValueError:
        return False
    return True


def load_bids(
    path,
    relay_id: str,
    genesis_unix_ms: int,
    field_map: dict | None = None,
    window_ms=DEFAULT_PLAUSIBILITY_WINDOW_MS,
):
    """Read an NDJSON bid dump.  Malformed or out-of-window records are
    skipped and counted, not fatal.  Returns (bids, skipped_count)."""
    bids = []
    skipped = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                bids.append(
                    parse_bid_line(line, relay_id, genesis_unix_ms, field_map, window_ms)
                )
            except IngestError:
                skipped += 1
    return bids, skipped


def load_delivered(
    path, relay_id: str, field_map: dict | None = None
):
    """Read an NDJSON delivered-payload dump; returns (payloads, skipped)."""
    fm = field_map or DEFAULT_FIELD_MAP
    payloads = []
    skipped = 0
    seen = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                payload = DeliveredPayload(
                    slot=int(raw[fm["slot"]]),
                    relay_id=relay_id,
                    builder_id=str(raw[fm["builder_id"]]),
                    block_hash=str(raw[fm["block_hash"]]),
                    value_wei=int(raw[fm["value_wei"]]),
                    proposer_id=str(raw.get(fm["proposer_id"], "")),
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                skipped += 1
                continue
            if (payload.slot, relay_id) in seen:
                skipped += 1
                continue
            seen.add((payload.slot, relay_id))
            payloads.append(payload)
    return payloads, skipped


def write_bids_csv(bids: Iterable[BidRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for b in bids:
            fh.write(
                f"{b.slot},{b.relay_id},{b.builder_id},{b.block_hash},"
                f"{b.value_wei},{b.arrival_ms},{b.num_transactions}\n"
            )


def read_bids_csv(path) -> list:
    import csv

    bids = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER.split(",")) - set(reader.fieldnames or [])
        if missing:
            raise IngestError(f"missing columns: {sorted(missing)}")
        for row in reader:
            bids.append(
                BidRecord(
                    slot=int(row["slot"]),
                    relay_id=row["relay"],
                    builder_id=row["builder"],
                    block_hash=row["block_hash"],
                    parent_hash="",
                    value_wei=int(row["value_wei"]),
                    num_transactions=int(row["num_tx"]),
                    arrival_ms=int(row["arrival_ms"]),
                )
            )
    return bids
