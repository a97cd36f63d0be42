"""Consensus-layer reward arithmetic and MEV-versus-proposal comparison.

All reward quantities are gwei integers computed with floor division and
``math.isqrt``, multiplication before division in the stated operand order,
so results are exactly reproducible.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

# Conventional flag presets (source, target, head over a common
# denominator); shipped as data so configs can override them.
DEFAULT_WEIGHT_DENOMINATOR = 64
DEFAULT_FLAG_SPECS = (
    ("source", 14, DEFAULT_WEIGHT_DENOMINATOR),
    ("target", 26, DEFAULT_WEIGHT_DENOMINATOR),
    ("head", 14, DEFAULT_WEIGHT_DENOMINATOR),
)


class RewardError(Exception):
    """Invalid balance or parameter input."""


@dataclass(frozen=True)
class RewardParams:
    base_reward_factor: int = 64
    flag_specs: tuple = DEFAULT_FLAG_SPECS

    def __post_init__(self):
        if self.base_reward_factor <= 0:
            raise RewardError("base_reward_factor must be positive")
        for name, weight, denom in self.flag_specs:
            if weight < 0:
                raise RewardError(f"flag {name!r}: negative weight")
            if denom <= 0:
                raise RewardError(f"flag {name!r}: non-positive denominator")


@dataclass(frozen=True)
class BalanceState:
    effective_balance_gwei: int
    active_balance_gwei: int
    attestation_balance_gwei: int

    def __post_init__(self):
        if not 0 <= self.attestation_balance_gwei <= self.active_balance_gwei:
            raise RewardError("attestation balance outside [0, active]")
        if self.effective_balance_gwei > self.active_balance_gwei:
            raise RewardError("effective balance exceeds active balance")


def base_reward(
    effective_balance_gwei: int,
    active_balance_gwei: int,
    params: RewardParams = RewardParams(),
) -> int:
    """effective × factor / isqrt(active), rounded to the nearest gwei
    (half away from zero), in exact integer arithmetic."""
    if active_balance_gwei <= 0:
        raise RewardError("active balance must be positive")
    s = math.isqrt(active_balance_gwei)
    num = effective_balance_gwei * params.base_reward_factor
    return (2 * num + s) // (2 * s)


def flag_reward(
    flag_weight: int,
    weight_denominator: int,
    base_reward_gwei: int,
    attestation_balance_gwei: int,
    active_balance_gwei: int,
) -> int:
    if weight_denominator <= 0:
        raise RewardError("weight denominator must be positive")
    if active_balance_gwei <= 0:
        raise RewardError("active balance must be positive")
    return (
        flag_weight
        * base_reward_gwei
        * attestation_balance_gwei
        // (weight_denominator * active_balance_gwei)
    )


def attestation_reward(flag_rewards: Sequence[int]) -> int:
    return sum(flag_rewards)


def full_attestation_reward(
    state: BalanceState, params: RewardParams = RewardParams()
) -> int:
    """Sum of all flag rewards for one attester under ``state``."""
    base = base_reward(state.effective_balance_gwei, state.active_balance_gwei, params)
    return attestation_reward(
        [
            flag_reward(
                weight,
                denom,
                base,
                state.attestation_balance_gwei,
                state.active_balance_gwei,
            )
            for _, weight, denom in params.flag_specs
        ]
    )


@dataclass(frozen=True)
class RewardComparison:
    per_epoch: dict  # epoch -> (median_mev_eth, median_proposal_eth)
    median_mev_eth: float | None
    median_proposal_eth: float | None
    mev_share_of_total: float | None


def compare_rewards(per_block: Sequence[dict]) -> RewardComparison:
    """Per-epoch and overall medians of MEV and proposal rewards (ETH), plus
    the MEV fraction of the combined total.

    Results are invariant under input permutation.
    """
    by_epoch: dict = {}
    mev_all = []
    proposal_all = []
    for rec in per_block:
        by_epoch.setdefault(rec["epoch"], ([], []))
        m, p = by_epoch[rec["epoch"]]
        m.append(rec["mev_eth"])
        p.append(rec["proposal_eth"])
        mev_all.append(rec["mev_eth"])
        proposal_all.append(rec["proposal_eth"])
    per_epoch = {
        epoch: (statistics.median(m), statistics.median(p))
        for epoch, (m, p) in sorted(by_epoch.items())
    }
    # fsum keeps the share permutation-invariant (exactly rounded sums).
    mev_total = math.fsum(mev_all)
    total = mev_total + math.fsum(proposal_all)
    return RewardComparison(
        per_epoch=per_epoch,
        median_mev_eth=statistics.median(mev_all) if mev_all else None,
        median_proposal_eth=statistics.median(proposal_all) if proposal_all else None,
        mev_share_of_total=mev_total / total if total > 0 else None,
    )
