"""
Slot-level simulation of the cell-partitioned network under the two-hop relay
algorithm with a relay-buffer handshake.

Each slot runs three phases in a fixed order: mobility, exogenous arrivals,
then one transmission decision per cell with at least two nodes. Nodes are
0-indexed and paired 0<->1, 2<->3, ..., so a node's partner is ``i ^ 1``.

All randomness comes from one ``numpy.random.Generator`` (PCG64) per
replication, drawn inside the jitted kernel in a state-dependent but fully
deterministic order, so a (seed, replication) pair reproduces a run exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .analytic import NetworkConfig
from .errors import ConfigError

ARRIVAL, DIRECT, TO_RELAY, FROM_RELAY = 0, 1, 2, 3
EVENT_NAMES = ("arrival", "direct", "source_to_relay", "relay_to_destination")
TRACE_FIELDS = ("slot", "cell", "event", "sender", "receiver", "packet_source", "packet_seq")

MOBILITY_KINDS = ("iid", "random_walk")
_KIND_CODE = {"iid": 0, "random_walk": 1}
_KIND_ALIASES = {"walk": "random_walk", "random-walk": "random_walk", "rw": "random_walk"}

CHUNK_SLOTS = 1 << 16
_NEVER = 1 << 62

# indices into the scalar tally array
_T_ARRIVALS, _T_DIRECT, _T_TO_RELAY, _T_FROM_RELAY = 0, 1, 2, 3
_T_DELAY_SUM, _T_DELAY_COUNT, _T_MEASURED, _T_NTRACE = 4, 5, 6, 7
_N_TALLY = 8


@dataclass(frozen=True)
class MobilityModel:
    kind: str
    n_cells: int

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in MOBILITY_KINDS:
            raise ConfigError(f"unknown mobility model {self.kind!r}; expected one of {MOBILITY_KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "random_walk":
            side = math.isqrt(self.n_cells)
            if side * side != self.n_cells:
                raise ConfigError(f"random_walk needs a square number of cells, got {self.n_cells}")

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.n_cells)


@dataclass(frozen=True)
class SimConfig:
    network: NetworkConfig
    lam: float
    mobility: str = "iid"
    n_slots: int = 1_000_000
    warmup_slots: Optional[int] = None
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.n_slots < 1:
            raise ConfigError(f"n_slots must be positive, got {self.n_slots}")
        if self.warmup_slots is None:
            object.__setattr__(self, "warmup_slots", self.n_slots // 10)
        if not 0 <= self.warmup_slots < self.n_slots:
            raise ConfigError(f"warmup_slots must lie in [0, n_slots), got {self.warmup_slots}")
        object.__setattr__(self, "mobility", self.mobility_model.kind)

    @property
    def mobility_model(self) -> MobilityModel:
        return MobilityModel(self.mobility, self.network.n_cells)

    @property
    def measured_slots(self) -> int:
        return self.n_slots - self.warmup_slots

    def to_dict(self) -> dict:
        net = self.network
        return dict(n_nodes=net.n_nodes, n_cells=net.n_cells, buffer_size=net.buffer_size,
                    lam=self.lam, mobility=self.mobility, n_slots=self.n_slots,
                    warmup_slots=self.warmup_slots, seed=self.seed, replication=self.replication)


@dataclass(frozen=True)
class Packet:
    source: int
    destination: int
    sequence: int
    created_at: int


@dataclass(frozen=True)
class NodeState:
    id: int
    cell: int
    local_queue: tuple[Packet, ...]
    relay_queue: tuple[Packet, ...]


def make_rng(seed: int, replication: int = 0) -> np.random.Generator:
    """Independent PCG64 stream for one replication."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(replication)])))


# --------------------------------------------------------------------------
# jitted kernel

@numba.njit(cache=True, inline="always")
def _draw_index(rng, n):
    j = int(rng.random() * n)
    return n - 1 if j >= n else j


@numba.njit(cache=True)
def _place_nodes(cells, n_cells, rng):
    for i in range(cells.shape[0]):
        cells[i] = _draw_index(rng, n_cells)


@numba.njit(cache=True)
def _mobility(cells, kind, side, n_cells, rng):
    n = cells.shape[0]
    if kind == 0:
        for i in range(n):
            cells[i] = _draw_index(rng, n_cells)
    else:
        for i in range(n):
            d = _draw_index(rng, 9)
            x = cells[i] % side
            y = cells[i] // side
            x = (x + d % 3 - 1) % side
            y = (y + d // 3 - 1) % side
            cells[i] = y * side + x


@numba.njit(cache=True, inline="always")
def _record(trace, tally, slot, cell, event, sender, receiver, psrc, pseq):
    k = tally[_T_NTRACE]
    trace[k, 0] = slot
    trace[k, 1] = cell
    trace[k, 2] = event
    trace[k, 3] = sender
    trace[k, 4] = receiver
    trace[k, 5] = psrc
    trace[k, 6] = pseq
    tally[_T_NTRACE] = k + 1


@numba.njit(cache=True, inline="always")
def _geometric_gap(rng, lam):
    # failures before the next Bernoulli(lam) success
    if lam >= 1.0:
        return 0
    if lam <= 0.0:
        return _NEVER
    g = math.floor(math.log(1.0 - rng.random()) / math.log1p(-lam))
    return _NEVER if g >= _NEVER else int(g)


@numba.njit(cache=True)
def _schedule_arrivals(next_arrival, first_slot, lam, rng):
    for i in range(next_arrival.shape[0]):
        next_arrival[i] = first_slot + _geometric_gap(rng, lam)


@numba.njit(cache=True)
def _arrivals(slot, lam, next_arrival, cells, local_t, local_head, local_len, generated, tally,
              rng, trace, tracing):
    # Bernoulli arrivals realised through geometric gaps between arrival slots
    n = cells.shape[0]
    cap = local_t.shape[1]
    for i in range(n):
        if next_arrival[i] == slot:
            local_t[i, (local_head[i] + local_len[i]) % cap] = slot
            local_len[i] += 1
            if tracing:
                _record(trace, tally, slot, cells[i], ARRIVAL, i, i, i, generated[i])
            generated[i] += 1
            tally[_T_ARRIVALS] += 1
            next_arrival[i] = slot + 1 + _geometric_gap(rng, lam)


@numba.njit(cache=True, inline="always")
def _pop_local(i, slot, measuring, local_t, local_head, local_len, generated, tally):
    """Remove node i's head-of-line packet; return (sequence, created_at)."""
    cap = local_t.shape[1]
    created = local_t[i, local_head[i]]
    seq = generated[i] - local_len[i]
    local_head[i] = (local_head[i] + 1) % cap
    local_len[i] -= 1
    if measuring:
        tally[_T_DELAY_SUM] += slot - created + 1
        tally[_T_DELAY_COUNT] += 1
    return seq, created


@numba.njit(cache=True)
def _transmissions(slot, measuring, buffer_size, cells, n_cells,
                   local_t, local_head, local_len, generated,
                   relay_src, relay_seq, relay_t, relay_len,
                   delivered, tally, rng, trace, tracing,
                   counts, starts, members, pair_count, pair_head, pair_next):
    n = cells.shape[0]
    counts[:] = 0
    for i in range(n):
        counts[cells[i]] += 1
    acc = 0
    for c in range(n_cells):
        starts[c] = acc
        acc += counts[c]
    # members sorted by cell, node id ascending within a cell
    for i in range(n):
        c = cells[i]
        members[starts[c]] = i
        starts[c] += 1
    for c in range(n_cells):
        starts[c] -= counts[c]
    # co-located traffic pairs, linked per cell
    pair_count[:] = 0
    pair_head[:] = -1
    for p in range(n // 2):
        c = cells[2 * p]
        if cells[2 * p + 1] == c:
            pair_next[p] = pair_head[c]
            pair_head[c] = p
            pair_count[c] += 1

    for c in range(n_cells):
        m = counts[c]
        if m < 2:
            continue
        s0 = starts[c]
        npairs = pair_count[c]
        if npairs > 0:
            # uniform pair, then uniform direction within the pair
            j = _draw_index(rng, 2 * npairs)
            p = pair_head[c]
            for _ in range(j // 2):
                p = pair_next[p]
            src = 2 * p + (j % 2)
            dst = src ^ 1
            if local_len[src] > 0:
                seq, _ = _pop_local(src, slot, measuring, local_t, local_head, local_len, generated, tally)
                if measuring:
                    delivered[dst] += 1
                tally[_T_DIRECT] += 1
                if tracing:
                    _record(trace, tally, slot, c, DIRECT, src, dst, src, seq)
            continue

        s = _draw_index(rng, m)
        r = _draw_index(rng, m - 1)
        if r >= s:
            r += 1
        sender = members[s0 + s]
        receiver = members[s0 + r]
        if rng.random() < 0.5:
            # source-to-relay, only after the receiver reports spare room
            if local_len[sender] > 0 and relay_len[receiver] < buffer_size:
                seq, created = _pop_local(sender, slot, measuring, local_t, local_head, local_len, generated, tally)
                k = relay_len[receiver]
                relay_src[receiver, k] = sender
                relay_seq[receiver, k] = seq
                relay_t[receiver, k] = created
                relay_len[receiver] = k + 1
                tally[_T_TO_RELAY] += 1
                if tracing:
                    _record(trace, tally, slot, c, TO_RELAY, sender, receiver, sender, seq)
        else:
            # relay-to-destination: oldest buffered packet for the receiver
            k = relay_len[sender]
            hit = -1
            for j in range(k):
                if relay_src[sender, j] ^ 1 == receiver:
                    hit = j
                    break
            if hit >= 0:
                psrc = relay_src[sender, hit]
                pseq = relay_seq[sender, hit]
                for j in range(hit, k - 1):
                    relay_src[sender, j] = relay_src[sender, j + 1]
                    relay_seq[sender, j] = relay_seq[sender, j + 1]
                    relay_t[sender, j] = relay_t[sender, j + 1]
                relay_len[sender] = k - 1
                if measuring:
                    delivered[receiver] += 1
                tally[_T_FROM_RELAY] += 1
                if tracing:
                    _record(trace, tally, slot, c, FROM_RELAY, sender, receiver, psrc, pseq)


@numba.njit(cache=True)
def _run_slots(first, count, warmup, lam, kind, side, n_cells, buffer_size, rng,
               cells, local_t, local_head, local_len, generated,
               relay_src, relay_seq, relay_t, relay_len,
               delivered, full_slots, occupancy_sum, tally, trace, tracing,
               next_arrival, counts, starts, members, pair_count, pair_head, pair_next):
    n = cells.shape[0]
    for slot in range(first, first + count):
        measuring = slot >= warmup
        _mobility(cells, kind, side, n_cells, rng)
        _arrivals(slot, lam, next_arrival, cells, local_t, local_head, local_len, generated, tally,
                  rng, trace, tracing)
        _transmissions(slot, measuring, buffer_size, cells, n_cells,
                       local_t, local_head, local_len, generated,
                       relay_src, relay_seq, relay_t, relay_len,
                       delivered, tally, rng, trace, tracing,
                       counts, starts, members, pair_count, pair_head, pair_next)
        if measuring:
            tally[_T_MEASURED] += 1
            for i in range(n):
                occupancy_sum[i] += relay_len[i]
                if relay_len[i] == buffer_size:
                    full_slots[i] += 1


# --------------------------------------------------------------------------
# state container and per-phase operations

class NetworkState:
    """Mutable array-backed state of every node.

    Local queues are per-node ring buffers of creation slots (sequence numbers
    follow from the FIFO order); relay queues are fixed ``B``-wide rows kept in
    arrival order.
    """

    def __init__(self, network: NetworkConfig, local_capacity: int = 1024):
        n, b = network.n_nodes, network.buffer_size
        self.network = network
        self.cells = np.zeros(n, dtype=np.int64)
        self.local_t = np.zeros((n, local_capacity), dtype=np.int64)
        self.local_head = np.zeros(n, dtype=np.int64)
        self.local_len = np.zeros(n, dtype=np.int64)
        self.generated = np.zeros(n, dtype=np.int64)
        self.relay_src = np.zeros((n, b), dtype=np.int64)
        self.relay_seq = np.zeros((n, b), dtype=np.int64)
        self.relay_t = np.zeros((n, b), dtype=np.int64)
        self.relay_len = np.zeros(n, dtype=np.int64)
        self.delivered = np.zeros(n, dtype=np.int64)
        self.full_slots = np.zeros(n, dtype=np.int64)
        self.occupancy_sum = np.zeros(n, dtype=np.int64)
        self.tally = np.zeros(_N_TALLY, dtype=np.int64)
        self._counts = np.zeros(network.n_cells, dtype=np.int64)
        self._starts = np.zeros(network.n_cells, dtype=np.int64)
        self._members = np.zeros(n, dtype=np.int64)
        self._pair_count = np.zeros(network.n_cells, dtype=np.int64)
        self._pair_head = np.zeros(network.n_cells, dtype=np.int64)
        self._pair_next = np.zeros(n // 2, dtype=np.int64)
        self.next_arrival = np.full(n, _NEVER, dtype=np.int64)
        self.arrival_rate = 0.0

    @classmethod
    def initial(cls, network: NetworkConfig, rng: np.random.Generator) -> "NetworkState":
        """Empty queues, nodes placed uniformly at random."""
        state = cls(network)
        _place_nodes(state.cells, network.n_cells, rng)
        return state

    def schedule_arrivals(self, lam: float, first_slot: int, rng: np.random.Generator):
        """Draw every node's next arrival slot at or after ``first_slot``.

        Arrivals are memoryless, so rescheduling at any slot boundary leaves
        the process unchanged.
        """
        self.arrival_rate = float(lam)
        _schedule_arrivals(self.next_arrival, int(first_slot), self.arrival_rate, rng)

    def reserve(self, extra: int):
        """Grow the local ring buffers so ``extra`` more arrivals always fit."""
        cap = self.local_t.shape[1]
        need = int(self.local_len.max()) + extra
        if need <= cap:
            return
        new_cap = max(2 * cap, need)
        grown = np.zeros((self.local_t.shape[0], new_cap), dtype=np.int64)
        for i in range(self.local_t.shape[0]):
            idx = (self.local_head[i] + np.arange(self.local_len[i])) % cap
            grown[i, : self.local_len[i]] = self.local_t[i, idx]
        self.local_t = grown
        self.local_head[:] = 0

    def add_local_packet(self, i: int, created_at: int = 0) -> Packet:
        """Append a self-generated packet to node i's local queue."""
        self.reserve(1)
        cap = self.local_t.shape[1]
        self.local_t[i, (self.local_head[i] + self.local_len[i]) % cap] = created_at
        self.local_len[i] += 1
        self.generated[i] += 1
        return Packet(i, i ^ 1, int(self.generated[i]) - 1, created_at)

    def add_relay_packet(self, i: int, source: int, sequence: int, created_at: int = 0) -> Packet:
        """Place a foreign packet at the tail of node i's relay queue."""
        if source in (i, i ^ 1):
            raise ValueError("a relay never holds its own or its own-destined packets")
        k = int(self.relay_len[i])
        if k >= self.network.buffer_size:
            raise ValueError(f"relay queue of node {i} is full")
        self.relay_src[i, k] = source
        self.relay_seq[i, k] = sequence
        self.relay_t[i, k] = created_at
        self.relay_len[i] = k + 1
        return Packet(source, source ^ 1, sequence, created_at)

    def local_queue(self, i: int) -> tuple[Packet, ...]:
        cap = self.local_t.shape[1]
        n_q = int(self.local_len[i])
        first_seq = int(self.generated[i]) - n_q
        return tuple(
            Packet(i, i ^ 1, first_seq + j, int(self.local_t[i, (self.local_head[i] + j) % cap]))
            for j in range(n_q))

    def relay_queue(self, i: int) -> tuple[Packet, ...]:
        return tuple(
            Packet(int(self.relay_src[i, j]), int(self.relay_src[i, j]) ^ 1,
                   int(self.relay_seq[i, j]), int(self.relay_t[i, j]))
            for j in range(int(self.relay_len[i])))

    def node(self, i: int) -> NodeState:
        return NodeState(i, int(self.cells[i]), self.local_queue(i), self.relay_queue(i))

    def nodes(self) -> list[NodeState]:
        return [self.node(i) for i in range(self.network.n_nodes)]

    @property
    def packets_in_network(self) -> int:
        return int(self.local_len.sum() + self.relay_len.sum())


def _empty_trace(rows=0):
    return np.zeros((rows, len(TRACE_FIELDS)), dtype=np.int64)


def step_mobility(state: NetworkState, model: MobilityModel, rng: np.random.Generator) -> np.ndarray:
    """Move every node for one slot; returns the new cell array."""
    _mobility(state.cells, _KIND_CODE[model.kind], model.grid_side, model.n_cells, rng)
    return state.cells


def step_arrivals(state: NetworkState, lam: float, slot: int, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(lam) arrival at every local queue; returns the arrival events."""
    lam = float(lam)
    if lam != state.arrival_rate or np.any(state.next_arrival < slot):
        state.schedule_arrivals(lam, slot, rng)
    state.reserve(1)
    trace = _empty_trace(state.network.n_nodes)
    state.tally[_T_NTRACE] = 0
    _arrivals(slot, lam, state.next_arrival, state.cells, state.local_t, state.local_head,
              state.local_len, state.generated, state.tally, rng, trace, True)
    return trace[: state.tally[_T_NTRACE]]


def execute_slot_transmissions(state: NetworkState, rng: np.random.Generator, slot: int = 0,
                               measuring: bool = True) -> np.ndarray:
    """One transmission decision per cell holding two or more nodes.

    Returns the trace rows (see ``TRACE_FIELDS``) of packets that moved.
    """
    net = state.network
    trace = _empty_trace(net.n_cells)
    state.tally[_T_NTRACE] = 0
    _transmissions(slot, measuring, net.buffer_size, state.cells, net.n_cells,
                   state.local_t, state.local_head, state.local_len, state.generated,
                   state.relay_src, state.relay_seq, state.relay_t, state.relay_len,
                   state.delivered, state.tally, rng, trace, True,
                   state._counts, state._starts, state._members,
                   state._pair_count, state._pair_head, state._pair_next)
    return trace[: state.tally[_T_NTRACE]]


# --------------------------------------------------------------------------
# whole runs

@dataclass(frozen=True)
class SimStats:
    config: SimConfig
    measured_slots: int
    delivered_per_node: np.ndarray
    throughput_per_node: np.ndarray
    relay_full_fraction: np.ndarray
    mean_relay_occupancy_per_node: np.ndarray
    mean_local_delay: float
    local_departures: int
    generated: int
    direct_deliveries: int
    relayed: int
    relay_deliveries: int
    local_backlog: int
    relay_backlog: int
    trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def throughput(self) -> float:
        """Per-node throughput averaged over all destinations."""
        return float(self.throughput_per_node.mean())

    @property
    def p_full(self) -> float:
        return float(self.relay_full_fraction.mean())

    @property
    def mean_relay_occupancy(self) -> float:
        return float(self.mean_relay_occupancy_per_node.mean())

    @property
    def delivered_total(self) -> int:
        return self.direct_deliveries + self.relay_deliveries

    def node_throughput(self, node: int) -> float:
        """Throughput seen by one destination, as in a single-node measurement."""
        return float(self.throughput_per_node[node])

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "measured_slots": self.measured_slots,
            "throughput": self.throughput,
            "p_full": self.p_full,
            "mean_local_delay": self.mean_local_delay,
            "mean_relay_occupancy": self.mean_relay_occupancy,
            "local_departures": self.local_departures,
            "generated": self.generated,
            "direct_deliveries": self.direct_deliveries,
            "relayed": self.relayed,
            "relay_deliveries": self.relay_deliveries,
            "local_backlog": self.local_backlog,
            "relay_backlog": self.relay_backlog,
            "delivered_per_node": self.delivered_per_node.tolist(),
            "throughput_per_node": self.throughput_per_node.tolist(),
            "relay_full_fraction": self.relay_full_fraction.tolist(),
        }


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def run(config: SimConfig, trace: bool = False) -> SimStats:
    """Simulate ``config.n_slots`` slots; statistics cover the post-warmup part.

    With ``trace=True`` every arrival and transmission is kept as an int64
    array (columns ``TRACE_FIELDS``) on the returned stats.
    """
    net = config.network
    model = config.mobility_model
    rng = make_rng(config.seed, config.replication)
    state = NetworkState.initial(net, rng)
    state.schedule_arrivals(config.lam, 0, rng)
    kind = _KIND_CODE[model.kind]
    side = model.grid_side
    pieces = []
    slot = 0
    while slot < config.n_slots:
        count = min(CHUNK_SLOTS, config.n_slots - slot)
        state.reserve(count)
        buf = _empty_trace(count * (net.n_nodes + net.n_cells) if trace else 1)
        state.tally[_T_NTRACE] = 0
        _run_slots(slot, count, config.warmup_slots, float(config.lam), kind, side, net.n_cells,
                   net.buffer_size, rng, state.cells, state.local_t, state.local_head,
                   state.local_len, state.generated, state.relay_src, state.relay_seq,
                   state.relay_t, state.relay_len, state.delivered, state.full_slots,
                   state.occupancy_sum, state.tally, buf, trace, state.next_arrival,
                   state._counts, state._starts, state._members,
                   state._pair_count, state._pair_head, state._pair_next)
        if trace:
            pieces.append(buf[: state.tally[_T_NTRACE]].copy())
        slot += count

    t = state.tally
    measured = int(t[_T_MEASURED])
    departures = int(t[_T_DELAY_COUNT])
    return SimStats(
        config=config,
        measured_slots=measured,
        delivered_per_node=_frozen(state.delivered.copy()),
        throughput_per_node=_frozen(state.delivered / measured),
        relay_full_fraction=_frozen(state.full_slots / measured),
        mean_relay_occupancy_per_node=_frozen(state.occupancy_sum / measured),
        mean_local_delay=float(t[_T_DELAY_SUM] / departures) if departures else float("nan"),
        local_departures=departures,
        generated=int(t[_T_ARRIVALS]),
        direct_deliveries=int(t[_T_DIRECT]),
        relayed=int(t[_T_TO_RELAY]),
        relay_deliveries=int(t[_T_FROM_RELAY]),
        local_backlog=int(state.local_len.sum()),
        relay_backlog=int(state.relay_len.sum()),
        trace=_frozen(np.concatenate(pieces)) if trace else None,
    )


def write_trace(trace: np.ndarray, path) -> None:
    """Newline-delimited JSON, one event per line."""
    with open(path, "w") as fh:
        for row in trace.tolist():
            rec = dict(zip(TRACE_FIELDS, row))
            rec["event"] = EVENT_NAMES[rec["event"]]
            rec["packet_id"] = f"{rec['packet_source']}-{rec['packet_seq']}"
            fh.write(json.dumps(rec) + "\n")


def read_trace(path) -> np.ndarray:
    codes = {name: k for k, name in enumerate(EVENT_NAMES)}
    rows = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            rec["event"] = codes[rec["event"]]
            rows.append([rec[f] for f in TRACE_FIELDS])
    return np.array(rows, dtype=np.int64).reshape(-1, len(TRACE_FIELDS))
