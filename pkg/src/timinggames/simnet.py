"""Random peer-to-peer topologies and the continuous-time gossip event engine.

The engine carries two message classes between adjacent nodes:

* blocks, forwarded with plain set semantics (receiver gains every block the
  sender knows and it lacks), and
* attestations, forwarded with keyed-latest semantics: each validator's newest
  vote supersedes older ones, so only the per-validator latest (slot, target)
  pair travels.  Older votes can never alter a latest-message table, which
  makes this exchange outcome-equivalent to forwarding every stored vote.

Interaction times per ordered adjacent pair form a renewal process with
exponential gaps of mean ``tau``.  Internally the engine draws the superposed
Poisson stream (one global clock, then a uniformly chosen edge and message
class), which is statistically identical and much cheaper to schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

SLOT_SECONDS = 12.0
ATTEST_DEADLINE_OFFSET = 4.0

_MAX_CONNECT_ATTEMPTS = 100
_RNG_BATCH = 1 << 15


class TopologyError(Exception):
    """Raised when no connected graph can be sampled for the parameters."""


@dataclass(frozen=True)
class Topology:
    """Simple undirected connected graph over nodes 0..n-1."""

    n: int
    edges: frozenset
    seed: int

    @property
    def mean_degree(self) -> float:
        return 2.0 * len(self.edges) / self.n

    def adjacency(self) -> list:
        adj = [[] for _ in range(self.n)]
        for u, v in sorted(self.edges):
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def directed_pairs(self) -> list:
        """All ordered adjacent pairs, sorted for determinism."""
        pairs = []
        for u, v in self.edges:
            pairs.append((u, v))
            pairs.append((v, u))
        pairs.sort()
        return pairs


@dataclass(frozen=True)
class GossipConfig:
    """Interaction clocks: one per ordered adjacent pair, exponential gaps
    with mean tau.

    With ``bidirectional`` (the default) an interaction synchronizes both
    endpoints, so content crosses each link at twice the one-way rate; with
    it off only the pair's source pushes to its destination.
    """

    tau_block: float = 3.0
    tau_attestation: float = 3.0
    bidirectional: bool = True

    def __post_init__(self):
        if self.tau_block <= 0 or self.tau_attestation <= 0:
            raise ValueError("gossip latencies must be positive")


class EventKind(IntEnum):
    # Numeric order doubles as the tie-break priority at equal times.
    BLOCK_RELEASE = 0
    SLOT_START = 1
    ATTEST_DEADLINE = 2
    GOSSIP_INTERACTION = 3
    SIM_END = 4


def _connected(n: int, edges) -> bool:
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = bytearray(n)
    seen[0] = 1
    stack = [0]
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = 1
                count += 1
                stack.append(v)
    return count == n


def generate_er_graph(n: int, mean_degree: float, seed: int) -> Topology:
    """G(n, p) with p = mean_degree / (n - 1), resampled until connected.

    The sub-seed is incremented per attempt so the result is deterministic
    for a given (n, mean_degree, seed).
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if not 0 < mean_degree < n:
        raise ValueError("mean_degree must be in (0, n)")
    p = mean_degree / (n - 1)
    for attempt in range(_MAX_CONNECT_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        iu, ju = np.triu_indices(n, k=1)
        mask = rng.random(iu.shape[0]) < p
        edges = frozenset(zip(iu[mask].tolist(), ju[mask].tolist()))
        if _connected(n, edges):
            return Topology(n=n, edges=edges, seed=seed)
    raise TopologyError(
        f"no connected graph in {_MAX_CONNECT_ATTEMPTS} attempts "
        f"(n={n}, mean_degree={mean_degree})"
    )


def gap_from_uniform(tau: float, u: float) -> float:
    """Inverse-CDF exponential gap with mean tau; u must lie in (0, 1]."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return -tau * math.log(u)


def sample_interaction_gap(tau: float, rng: np.random.Generator) -> float:
    return gap_from_uniform(tau, 1.0 - rng.random())


class EngineError(Exception):
    """A handler failure, with the offending event attached."""

    def __init__(self, event, cause):
        super().__init__(f"handler failed on {event}: {cause}")
        self.event = event
        self.cause = cause


@dataclass
class _PendingRelease:
    time: float
    node: int
    block_id: int


class EventEngine:
    """Deterministic single-threaded event loop over one topology.

    Handlers is any object providing::

        on_slot_start(engine, t, slot)      # select proposer, create block
        on_attest_deadline(engine, t, slot) # attestors vote
        on_sim_end(engine, t)               # optional, may be absent

    Blocks enter circulation via ``publish_block`` (usually from a scheduled
    release), attestations via ``publish_attestation``.
    """

    def __init__(
        self,
        topology: Topology,
        gossip: GossipConfig,
        handlers,
        end_time: float,
        seed,
        *,
        n_validators: int | None = None,
        max_blocks: int | None = None,
        record_trace: bool = False,
    ):
        if end_time <= 0:
            raise ValueError("end_time must be positive")
        self.topology = topology
        self.gossip = gossip
        self.handlers = handlers
        self.end_time = float(end_time)
        self.record_trace = record_trace
        self.trace: list = [] if record_trace else None

        self.n_nodes = topology.n
        self.n_validators = n_validators if n_validators is not None else topology.n
        self.n_slots = int(self.end_time // SLOT_SECONDS)
        cap = max_blocks if max_blocks is not None else self.n_slots + 2

        pairs = topology.directed_pairs()
        self._src = [p[0] for p in pairs]
        self._dst = [p[1] for p in pairs]
        self._n_dir = len(pairs)
        index = {p: i for i, p in enumerate(pairs)}
        self._rev = [index[(v, u)] for u, v in pairs]
        self._bidirectional = gossip.bidirectional

        # Knowledge state.
        self.block_seen = np.zeros((self.n_nodes, cap), dtype=bool)
        self.block_arrival = np.full((self.n_nodes, cap), np.nan)
        self.lm_slot = np.full((self.n_nodes, self.n_validators), -1, dtype=np.int32)
        self.lm_target = np.zeros((self.n_nodes, self.n_validators), dtype=np.int32)

        # Version counters let the gossip loop skip interactions where the
        # sender gained nothing since it last synced this edge.
        self._bver = [1] * self.n_nodes
        self._aver = [1] * self.n_nodes
        self._bsync = [0] * self._n_dir
        self._async_ = [0] * self._n_dir

        self._rng = np.random.default_rng(seed)
        rate_b = self._n_dir / gossip.tau_block
        rate_a = self._n_dir / gossip.tau_attestation
        self._total_rate = rate_b + rate_a
        self._p_block = rate_b / self._total_rate

        self._pending_releases: list = []  # kept sorted by (time, insertion)
        self._release_seq = 0

        self._gaps = None
        self._edges_draw = None
        self._kinds_draw = None
        self._draw_idx = 0

    # -- scheduling ---------------------------------------------------------

    def schedule_release(self, time: float, node: int, block_id: int) -> None:
        self._pending_releases.append((time, self._release_seq, node, block_id))
        self._release_seq += 1
        self._pending_releases.sort()

    def publish_block(self, node: int, block_id: int, time: float) -> None:
        if not self.block_seen[node, block_id]:
            self.block_seen[node, block_id] = True
            self.block_arrival[node, block_id] = time
            self._bver[node] += 1
        if self.record_trace:
            self.trace.append((time, "BLOCK_RELEASE", node, f"block={block_id}"))

    def publish_attestation(
        self, node: int, validator: int, slot: int, target: int, time: float
    ) -> None:
        if slot > self.lm_slot[node, validator]:
            self.lm_slot[node, validator] = slot
            self.lm_target[node, validator] = target
            self._aver[node] += 1

    # -- gossip internals ---------------------------------------------------

    def _refill(self):
        self._gaps = self._rng.exponential(1.0 / self._total_rate, _RNG_BATCH)
        self._edges_draw = self._rng.integers(0, self._n_dir, _RNG_BATCH)
        self._kinds_draw = self._rng.random(_RNG_BATCH) < self._p_block
        self._draw_idx = 0

    def _push_block(self, u: int, v: int, t: float) -> None:
        new = self.block_seen[u] & ~self.block_seen[v]
        if new.any():
            self.block_seen[v] |= new
            self.block_arrival[v, new] = t
            self._bver[v] += 1

    def _gossip_block(self, u: int, v: int, e: int, t: float) -> None:
        if self._bidirectional:
            r = self._rev[e]
            if self._bsync[e] != self._bver[u] or self._bsync[r] != self._bver[v]:
                self._push_block(u, v, t)
                self._push_block(v, u, t)
                self._bsync[e] = self._bver[u]
                self._bsync[r] = self._bver[v]
        elif self._bsync[e] != self._bver[u]:
            self._push_block(u, v, t)
            self._bsync[e] = self._bver[u]

    def _push_attestation(self, u: int, v: int) -> None:
        newer = self.lm_slot[u] > self.lm_slot[v]
        if newer.any():
            self.lm_slot[v][newer] = self.lm_slot[u][newer]
            self.lm_target[v][newer] = self.lm_target[u][newer]
            self._aver[v] += 1

    def _gossip_attestation(self, u: int, v: int, e: int, t: float) -> None:
        if self._bidirectional:
            r = self._rev[e]
            if self._async_[e] != self._aver[u] or self._async_[r] != self._aver[v]:
                self._push_attestation(u, v)
                self._push_attestation(v, u)
                self._async_[e] = self._aver[u]
                self._async_[r] = self._aver[v]
        elif self._async_[e] != self._aver[u]:
            self._push_attestation(u, v)
            self._async_[e] = self._aver[u]

    # -- main loop ----------------------------------------------------------

    def run(self):
        """Process events up to end_time; returns the trace (or None)."""
        end = self.end_time
        src = self._src
        dst = self._dst
        trace = self.trace
        record = self.record_trace

        self._refill()
        gossip_t = self._gaps[0]
        self._draw_idx = 1

        slot = 0
        next_slot_t = 0.0 if self.n_slots > 0 else math.inf
        deadlines: list = []  # (time, slot), FIFO
        dl_head = 0

        def next_structural():
            # Returns (time, priority, tag) of the earliest non-gossip event.
            best = (end, EventKind.SIM_END, None)
            if self._pending_releases:
                r = self._pending_releases[0]
                if (r[0], EventKind.BLOCK_RELEASE) < (best[0], best[1]):
                    best = (r[0], EventKind.BLOCK_RELEASE, None)
            if next_slot_t < math.inf and (next_slot_t, EventKind.SLOT_START) < (
                best[0],
                best[1],
            ):
                best = (next_slot_t, EventKind.SLOT_START, None)
            if dl_head < len(deadlines):
                d = deadlines[dl_head]
                if (d[0], EventKind.ATTEST_DEADLINE) < (best[0], best[1]):
                    best = (d[0], EventKind.ATTEST_DEADLINE, None)
            return best

        while True:
            s_time, s_kind, _ = next_structural()

            # Drain gossip interactions strictly before the next structural
            # event (ties go to the structural event: lower priority number).
            gaps = self._gaps
            edges = self._edges_draw
            kinds = self._kinds_draw
            i = self._draw_idx
            while gossip_t < s_time:
                e = int(edges[i - 1])
                u = src[e]
                v = dst[e]
                if kinds[i - 1]:
                    self._gossip_block(u, v, e, gossip_t)
                    if record:
                        trace.append(
                            (gossip_t, "GOSSIP_INTERACTION", u, f"->{v}:block")
                        )
                else:
                    self._gossip_attestation(u, v, e, gossip_t)
                    if record:
                        trace.append(
                            (gossip_t, "GOSSIP_INTERACTION", u, f"->{v}:attestation")
                        )
                if i == _RNG_BATCH:
                    self._refill()
                    gaps = self._gaps
                    edges = self._edges_draw
                    kinds = self._kinds_draw
                    i = 0
                gossip_t += gaps[i]
                i += 1
            self._draw_idx = i

            try:
                if s_kind == EventKind.SIM_END:
                    if record:
                        trace.append((end, "SIM_END", -1, ""))
                    on_end = getattr(self.handlers, "on_sim_end", None)
                    if on_end is not None:
                        on_end(self, end)
                    return trace
                if s_kind == EventKind.BLOCK_RELEASE:
                    t, _, node, block_id = self._pending_releases.pop(0)
                    self.publish_block(node, block_id, t)
                elif s_kind == EventKind.SLOT_START:
                    t = next_slot_t
                    if record:
                        trace.append((t, "SLOT_START", -1, f"slot={slot}"))
                    self.handlers.on_slot_start(self, t, slot)
                    deadlines.append((t + ATTEST_DEADLINE_OFFSET, slot))
                    slot += 1
                    next_slot_t = (
                        slot * SLOT_SECONDS if slot < self.n_slots else math.inf
                    )
                else:  # ATTEST_DEADLINE
                    t, dslot = deadlines[dl_head]
                    dl_head += 1
                    if record:
                        trace.append((t, "ATTEST_DEADLINE", -1, f"slot={dslot}"))
                    self.handlers.on_attest_deadline(self, t, dslot)
            except EngineError:
                raise
            except Exception as exc:
                raise EngineError((s_time, s_kind), exc) from exc


def run_engine(
    topology: Topology,
    gossip: GossipConfig,
    handlers,
    end_time: float,
    seed,
    **kwargs,
):
    """Convenience wrapper: build an engine, run it, return (engine, trace)."""
    engine = EventEngine(topology, gossip, handlers, end_time, seed, **kwargs)
    trace = engine.run()
    return engine, trace


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("time,kind,node,detail\n")
        for time, kind, node, detail in trace:
            fh.write(f"{time!r},{kind},{node},{detail}\n")
