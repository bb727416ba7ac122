"""Deterministic discrete-event simulation of the token ring and a star baseline.

Time is integer microseconds.  Every random draw comes from generators seeded
by hashing (seed, label) pairs, so a (config, plan, seed) triple always yields
a byte-identical trace.  The ring carries one token at a time: the hub emits,
each device holds it for a constant time and forwards, and a counter inside
the token lets a few physical devices stand in for a much larger ring.
"""

import heapq
import random
import statistics
from dataclasses import dataclass, field, replace
from typing import Optional

from ringveil import crypto, protocol, schedule, token

RING = "ring"
STAR = "star"

STAR_COMMAND_BYTES = 128

_SENSOR_RECORD = b"periodic sensor reading "  # queued for each scripted read


def _child_rng(seed, label: str) -> random.Random:
    digest = crypto.hash_digest(f"{seed}:{label}".encode())
    return random.Random(int.from_bytes(digest, "big"))


@dataclass(frozen=True)
class SimConfig:
    n_physical: int = 3
    n_virtual: Optional[int] = None  # defaults to n_physical
    topology: str = RING
    hop_latency: int = 500  # microseconds per link
    jitter: int = 0  # uniform [0, jitter] added per transmission
    bandwidth: int = 10  # bytes per microsecond
    squarings_per_tick: int = 1  # squarings per microsecond of device compute
    rounds: int = 10
    seed: int = 0
    modulus_bits: int = crypto.DEFAULT_MODULUS_BITS
    data_per_device: int = 64
    hold: int = 100  # constant per-node hold before forwarding
    command_interval: int = 10_000_000  # star mode: spacing between commands

    def __post_init__(self):
        if self.n_virtual is None:
            object.__setattr__(self, "n_virtual", self.n_physical)
        if self.topology not in (RING, STAR):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.n_physical < 1:
            raise ValueError("need at least one physical device")
        if self.n_virtual < self.n_physical:
            raise ValueError("virtual device count cannot be below the physical count")
        if self.jitter and self.jitter >= self.hop_latency:
            raise ValueError("jitter bound must stay below the hop latency")
        if min(self.hop_latency, self.bandwidth, self.squarings_per_tick, self.rounds) < 1:
            raise ValueError("latency, bandwidth, squaring rate, and rounds must be positive")
        if self.hold < 0:
            raise ValueError("hold time cannot be negative")

    def fingerprint(self) -> str:
        """Geometry hash used to refuse apples-to-oranges view comparisons.

        Topology, seed, round count, and command cadence are deliberately
        excluded: those are exactly the axes experiments vary.
        """
        parts = (
            self.n_physical,
            self.n_virtual,
            self.hop_latency,
            self.jitter,
            self.bandwidth,
            self.squarings_per_tick,
            self.modulus_bits,
            self.data_per_device,
            self.hold,
        )
        return crypto.hash_digest("|".join(str(p) for p in parts).encode()).hex()[:16]


@dataclass
class TraceLog:
    records: list  # (time_us, src, dst, size_bytes, round)
    config_fingerprint: str = ""


def trace_to_csv(trace: TraceLog) -> str:
    lines = ["time_us,src,dst,bytes,round"]
    for time_us, src, dst, size, round_no in trace.records:
        lines.append(f"{time_us},{src},{dst},{size},{round_no}")
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str, config_fingerprint: str = "") -> TraceLog:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "time_us,src,dst,bytes,round":
        raise ValueError("not a trace CSV: missing header")
    records = []
    for ln in lines[1:]:
        time_us, src, dst, size, round_no = (int(v) for v in ln.split(","))
        records.append((time_us, src, dst, size, round_no))
    return TraceLog(records=records, config_fingerprint=config_fingerprint)


def layout_for(config: SimConfig) -> token.TokenLayout:
    return token.TokenLayout(
        n_devices=config.n_virtual,
        slot_size=token.max_wrapped_slot_size(config.modulus_bits) + 2,
        data_capacity=config.n_virtual * config.data_per_device,
    )


def registry_for(config: SimConfig) -> crypto.KeyRegistry:
    """The key registry a simulated ring provisions itself with.

    Plan compilation must use the same registry or no device will be able to
    unwrap its slot.
    """
    digest = crypto.hash_digest(f"{config.seed}:registry".encode())
    return crypto.KeyRegistry.provision(
        range(1, config.n_physical + 1), seed=int.from_bytes(digest, "big")
    )


def transmit_time(config: SimConfig, frame_bytes: int) -> int:
    return -(-frame_bytes // config.bandwidth)


def predicted_forward_times(config: SimConfig):
    """Expected zero-jitter forward instant of each physical ring position,
    relative to the hub starting to transmit."""
    per_hop = config.hop_latency + transmit_time(config, layout_for(config).frame_size) + config.hold
    return [(p + 1) * per_hop for p in range(config.n_physical)]


_EMIT, _DEVICE_RX, _HUB_RX, _SOLVE, _STAR_CMD = range(5)


class _EventLoop:
    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, time: int, kind: int, data=None):
        heapq.heappush(self._heap, (time, self._seq, kind, data))
        self._seq += 1

    def __iter__(self):
        while self._heap:
            time, _seq, kind, data = heapq.heappop(self._heap)
            yield time, kind, data


def _check_plan(config: SimConfig, plan, registry):
    if len(plan.ring_order) != config.n_physical:
        raise ValueError(
            f"plan covers {len(plan.ring_order)} devices, config has {config.n_physical}"
        )
    if plan.entries:
        probe = plan.entries[0]
        try:
            crypto.unwrap_for_device(
                probe.wrapped, registry.device_secret(probe.device_id)
            )
        except (crypto.AuthenticationError, crypto.FramingError, KeyError) as exc:
            raise ValueError(
                "plan was not compiled against the simulation registry"
            ) from exc


def _run_ring(config: SimConfig, plan, script, registry):
    layout = layout_for(config)
    hub = protocol.make_hub(
        registry, layout, n_virtual=config.n_virtual, rng_seed=config.seed
    )
    if plan is not None:
        _check_plan(config, plan, registry)
    ring_order = list(plan.ring_order) if plan else list(range(1, config.n_physical + 1))
    devices = {
        d: protocol.make_device(d, pos, registry, layout)
        for pos, d in enumerate(ring_order)
    }
    next_of = {
        d: ring_order[(pos + 1) % len(ring_order)] for pos, d in enumerate(ring_order)
    }

    if plan is not None and plan.entries:
        order_msg = protocol.owner_create_order(plan, registry)
        if not protocol.hub_accept_order(hub, order_msg, registry.owner_keypair[1]):
            raise ValueError("plan does not verify under the simulation registry")
    for action in script or ():
        if action[0] == "read":
            protocol.enqueue_upload(devices[action[1]], _SENSOR_RECORD)

    jitter_rng = _child_rng(config.seed, "jitter")
    loop = _EventLoop()
    records = []
    latencies = {}
    current_round = 0
    solves_scheduled = {d: set() for d in devices}

    def transmit(depart: int, src: int, dst: int, frame: bytes):
        wobble = jitter_rng.randint(0, config.jitter) if config.jitter else 0
        arrival = depart + config.hop_latency + wobble + transmit_time(config, len(frame))
        kind = _HUB_RX if dst == protocol.HUB_ID else _DEVICE_RX
        loop.push(arrival, kind, (src, dst, frame))

    loop.push(0, _EMIT)
    for now, kind, data in loop:
        if kind == _EMIT:
            hub, frame = protocol.hub_emit_token(hub, now)
            current_round = hub.round
            transmit(now, protocol.HUB_ID, ring_order[0], frame)
        elif kind == _DEVICE_RX:
            src, dst, frame = data
            records.append((now, src, dst, len(frame), current_round))
            state = devices[dst]
            state, out = protocol.device_on_token(
                state, frame, now, forward_at=now + config.hold
            )
            if (
                state.pending_puzzle is not None
                and state.pending_round not in solves_scheduled[dst]
            ):
                solves_scheduled[dst].add(state.pending_round)
                remaining = state.pending_puzzle.t_hat - state.solve_progress
                compute_us = -(-remaining // config.squarings_per_tick)
                loop.push(
                    now + config.hold + compute_us, _SOLVE, (dst, state.pending_round)
                )
            next_dst = protocol.HUB_ID if state.last_counter <= 0 else next_of[dst]
            transmit(now + config.hold, dst, next_dst, out)
        elif kind == _HUB_RX:
            src, dst, frame = data
            records.append((now, src, dst, len(frame), current_round))
            hub = protocol.hub_on_token(hub, frame, now)
            latencies[current_round] = now - hub.t_beg[current_round]
            if hub.round < config.rounds:
                loop.push(now + config.hold, _EMIT)
        elif kind == _SOLVE:
            device_id, round_tag = data
            state = devices[device_id]
            if state.pending_puzzle is not None and state.pending_round == round_tag:
                protocol.device_tick(
                    state, state.pending_puzzle.t_hat - state.solve_progress, now=now
                )

    trace = TraceLog(records=records, config_fingerprint=config.fingerprint())
    reports = protocol.collect_reports(hub)
    per_round = [latencies[r] for r in sorted(latencies)]
    hold_per_round = config.n_virtual * config.hold
    stats = {
        "n_devices": config.n_virtual,
        "rounds": len(per_round),
        "mean_latency_us": statistics.fmean(per_round) if per_round else 0.0,
        "var_latency_us": statistics.pvariance(per_round) if len(per_round) > 1 else 0.0,
        "t_sum_mean_us": (
            statistics.fmean(lat - hold_per_round for lat in per_round) if per_round else 0.0
        ),
        "mean_token_bytes": (
            statistics.fmean(size for _, _, _, size, _ in records) if records else 0.0
        ),
        "uploads_recovered": len(hub.recovered),
    }
    return trace, reports, stats, hub, devices


def _run_star(config: SimConfig, plan, script):
    if script is None and plan is not None:
        script = tuple(
            ("set", e.device_id, schedule.STATE_ON) for e in plan.entries
        )
    script = tuple(script or ())
    jitter_rng = _child_rng(config.seed, "jitter")
    loop = _EventLoop()
    records = []
    latencies = []

    def wobble():
        return jitter_rng.randint(0, config.jitter) if config.jitter else 0

    ordinal = 0
    for _rep in range(config.rounds):
        for action in script:
            ordinal += 1
            loop.push((ordinal - 1) * config.command_interval, _STAR_CMD, (ordinal, action))

    for now, _kind, data in loop:
        ordinal, action = data
        device_id = action[1]
        cmd_arrival = now + config.hop_latency + wobble() + transmit_time(config, STAR_COMMAND_BYTES)
        records.append((cmd_arrival, protocol.HUB_ID, device_id, STAR_COMMAND_BYTES, ordinal))
        last = cmd_arrival
        if action[0] == "read":
            depart = cmd_arrival + config.hold
            resp_arrival = depart + config.hop_latency + wobble() + transmit_time(
                config, config.data_per_device
            )
            records.append(
                (resp_arrival, device_id, protocol.HUB_ID, config.data_per_device, ordinal)
            )
            last = resp_arrival
        latencies.append(last - now)

    records.sort(key=lambda r: (r[0], r[4]))
    trace = TraceLog(records=records, config_fingerprint=config.fingerprint())
    stats = {
        "n_devices": config.n_virtual,
        "rounds": config.rounds,
        "mean_latency_us": statistics.fmean(latencies) if latencies else 0.0,
        "var_latency_us": statistics.pvariance(latencies) if len(latencies) > 1 else 0.0,
        "mean_token_bytes": (
            statistics.fmean(size for _, _, _, size, _ in records) if records else 0.0
        ),
    }
    return trace, [], stats


def run(config: SimConfig, plan=None, *, script=None, registry=None):
    """Execute the configured number of rounds; returns (trace, reports, stats).

    `script` carries the ordered set/read actions for the star baseline and
    the read-triggered uploads in ring mode.  `registry` defaults to the
    deterministic per-seed registry from registry_for().
    """
    if config.topology == STAR:
        return _run_star(config, plan, script)
    if registry is None:
        registry = registry_for(config)
    trace, reports, stats, _hub, _devices = _run_ring(config, plan, script, registry)
    return trace, reports, stats


def latency_sweep(base: SimConfig, device_counts):
    """One padding-token run per device count, fixed seed, growing frames."""
    if not device_counts:
        raise ValueError("device_counts must be non-empty")
    rows = []
    for n in device_counts:
        config = replace(
            base,
            topology=RING,
            n_virtual=n,
            n_physical=min(base.n_physical, n),
        )
        _trace, _reports, stats = run(config)
        rows.append(
            {
                "n_devices": n,
                "mean_latency_us": stats["mean_latency_us"],
                "var_latency_us": stats["var_latency_us"],
                "mean_token_bytes": stats["mean_token_bytes"],
            }
        )
    return rows
