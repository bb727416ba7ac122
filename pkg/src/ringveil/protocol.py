"""Owner, hub, and device state machines for token circulation.

The owner signs a compiled plan into an Order.  The hub verifies it, delivers
the per-device puzzle slots in the next token round, and keeps every later
round's token identical in shape: unused slots and the data field carry fresh
random bytes.  Devices pull their slot, solve the puzzle between token
arrivals, actuate when the squaring chain completes, and push execution
reports back through the XOR-concealed data field.  The owner finally checks
each report against the phi(n) shortcut and the plan's ordering constraints.
"""

import random
from dataclasses import dataclass, field, replace
from typing import Optional

from ringveil import crypto, schedule, token

OWNER_ID = 1000
HUB_ID = 0
DEFAULT_T_DIFF = 50_000  # allowed clock difference, microseconds

# Nonce composition for per-hop re-sealing: high bits identify the sealing
# node (0 = hub, ring position + 1 for devices), low bits count its seals.
_NONCE_POSITION_SHIFT = 40


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class Order:
    owner_id: int
    hub_id: int
    commands: bytes
    digest: bytes
    signature: bytes


@dataclass(frozen=True)
class ExecutionReport:
    device_id: int
    t_com: int
    t_hat: int
    solution: int  # a^(2^t_hat) mod n as computed by the device


def report_to_bytes(report: ExecutionReport) -> bytes:
    return (
        report.device_id.to_bytes(4, "big")
        + report.t_com.to_bytes(8, "big")
        + report.t_hat.to_bytes(8, "big")
        + crypto.encode_bigint(report.solution)
    )


def report_from_bytes(buf: bytes) -> ExecutionReport:
    if len(buf) < 24:
        raise crypto.FramingError("execution report too short")
    device_id = int.from_bytes(buf[0:4], "big")
    t_com = int.from_bytes(buf[4:12], "big")
    t_hat = int.from_bytes(buf[12:20], "big")
    solution, end = crypto.decode_bigint(buf, 20)
    if end != len(buf):
        raise crypto.FramingError("trailing bytes after execution report")
    return ExecutionReport(device_id=device_id, t_com=t_com, t_hat=t_hat, solution=solution)


def format_event(round_no: int, actor: int, kind: str, t: int) -> str:
    return f"round,{round_no},actor,{actor},event,{kind},t,{t}"


def _serialize_commands(entries) -> bytes:
    parts = [len(entries).to_bytes(4, "big")]
    for device_id, wrapped in entries:
        parts.append(device_id.to_bytes(4, "big"))
        parts.append(crypto.encode_blob(wrapped))
    return b"".join(parts)


def _parse_commands(buf: bytes):
    if len(buf) < 4:
        raise crypto.FramingError("command list too short")
    count = int.from_bytes(buf[0:4], "big")
    offset = 4
    out = []
    for _ in range(count):
        if offset + 4 > len(buf):
            raise crypto.FramingError("truncated command entry")
        device_id = int.from_bytes(buf[offset : offset + 4], "big")
        wrapped, offset = crypto.decode_blob(buf, offset + 4)
        out.append((device_id, wrapped))
    if offset != len(buf):
        raise crypto.FramingError("trailing bytes after command list")
    return out


def _order_digest(owner_id: int, hub_id: int, commands: bytes) -> bytes:
    return crypto.hash_digest(
        owner_id.to_bytes(4, "big") + hub_id.to_bytes(4, "big") + commands
    )


def owner_create_order(plan: schedule.SchedulePlan, registry: crypto.KeyRegistry) -> Order:
    commands = _serialize_commands([(e.device_id, e.wrapped) for e in plan.entries])
    digest = _order_digest(OWNER_ID, HUB_ID, commands)
    signature = crypto.sign_order(digest, registry.owner_keypair[0])
    return Order(
        owner_id=OWNER_ID, hub_id=HUB_ID, commands=commands, digest=digest, signature=signature
    )


def hub_verify_order(order: Order, owner_pk) -> bool:
    recomputed = _order_digest(order.owner_id, order.hub_id, order.commands)
    if recomputed != order.digest:
        return False
    return crypto.verify_order_sig(order.digest, order.signature, owner_pk)


@dataclass
class DeviceState:
    device_id: int
    ring_position: int
    layout: token.TokenLayout
    ring_key: bytes
    secret_key: object  # X25519 private key for unwrapping command slots
    t_diff: int = DEFAULT_T_DIFF
    clock_skew: int = 0
    pending_puzzle: Optional[crypto.Puzzle] = None
    pending_round: int = 0
    solve_progress: int = 0
    solve_residue: int = 0
    actuated: Optional[tuple] = None  # (command bytes, t_com)
    upload_queue: list = field(default_factory=list)
    toggle_requested: bool = False
    seen_token_ids: set = field(default_factory=set)
    seal_count: int = 0
    last_counter: int = 0
    events: list = field(default_factory=list)

    def __post_init__(self):
        if abs(self.clock_skew) > self.t_diff:
            raise ValueError("clock skew exceeds the allowed bound")

    @property
    def slot_index(self) -> int:
        return self.device_id - 1


def make_device(
    device_id: int,
    ring_position: int,
    registry: crypto.KeyRegistry,
    layout: token.TokenLayout,
    *,
    t_diff: int = DEFAULT_T_DIFF,
    clock_skew: int = 0,
) -> DeviceState:
    return DeviceState(
        device_id=device_id,
        ring_position=ring_position,
        layout=layout,
        ring_key=registry.ring_key,
        secret_key=registry.device_secret(device_id),
        t_diff=t_diff,
        clock_skew=clock_skew,
    )


def _slot_payload(slot: bytes):
    """Split a slot into its declared wrapped blob, if the prefix is plausible."""
    declared = int.from_bytes(slot[:2], "big")
    if 0 < declared <= len(slot) - 2:
        return slot[2 : 2 + declared]
    return slot[2:]  # implausible prefix: attempt on the remainder anyway


def _try_take_puzzle(state: DeviceState, t: token.Token, now: int):
    slot = t.command_field[state.slot_index]
    try:
        # Every device attempts this unwrap on every fresh token, scheduled
        # or not, so per-node processing does not depend on the schedule.
        blob = crypto.unwrap_for_device(_slot_payload(slot), state.secret_key)
        puzzle = crypto.puzzle_from_bytes(blob)
    except (crypto.AuthenticationError, crypto.FramingError, ValueError):
        return
    local_now = now + state.clock_skew
    if local_now > puzzle.t_val + state.t_diff:
        state.events.append(format_event(t.round, state.device_id, "discard", now))
        return
    state.pending_puzzle = puzzle
    state.pending_round = t.round
    state.solve_progress = 0
    state.solve_residue = puzzle.a % puzzle.n


def _subfield_of(state: DeviceState, data_field: bytes):
    start, end = state.layout.subfield_bounds(state.slot_index)
    return start, end, data_field[start:end]


def device_on_token(state: DeviceState, frame: bytes, now: int, forward_at=None):
    """Process one token arrival; returns (state, frame to forward).

    forward_at stamps the fwd event when the caller holds the frame before
    releasing it; defaults to the receive time.
    """
    t = token.token_parse(frame, state.ring_key, state.layout)
    state.events.append(format_event(t.round, state.device_id, "rcv", now))
    out = replace(t, counter=t.counter - 1)

    fresh = t.token_id not in state.seen_token_ids
    if fresh:
        state.seen_token_ids.add(t.token_id)
        _try_take_puzzle(state, t, now)

        granted = state.slot_index in token.toggle_read(t)
        uploaded = False
        if granted and state.upload_queue:
            start, end, current = _subfield_of(state, out.data_field)
            record = state.upload_queue.pop(0)
            padded = record + bytes(end - start - len(record))
            concealed = token.data_overwrite(current, padded)
            data = out.data_field[:start] + concealed + out.data_field[end:]
            out = replace(out, data_field=data)
            state.toggle_requested = False
            uploaded = True
            state.events.append(format_event(t.round, state.device_id, "upload", now))

        # A re-request in the very round of a grant would be indistinguishable
        # from the grant mark itself, so a device with more queued data waits
        # for the next round to raise its bit again.
        if not uploaded and state.upload_queue and not state.toggle_requested:
            out = token.toggle_set(out, state.slot_index)
            state.toggle_requested = True
            state.events.append(format_event(t.round, state.device_id, "upload_req", now))

    state.last_counter = out.counter
    state.seal_count += 1
    nonce = ((state.ring_position + 1) << _NONCE_POSITION_SHIFT) | state.seal_count
    forwarded = token.token_build(out, state.ring_key, state.layout, nonce)
    fwd_time = now if forward_at is None else forward_at
    state.events.append(format_event(t.round, state.device_id, "fwd", fwd_time))
    return state, forwarded


def enqueue_upload(state: DeviceState, record: bytes):
    start, end = state.layout.subfield_bounds(state.slot_index)
    capacity = end - start - 2
    if len(record) > capacity:
        raise ProtocolError(
            f"record of {len(record)} bytes exceeds sub-field capacity {capacity}"
        )
    state.upload_queue.append(len(record).to_bytes(2, "big") + record)


def device_tick(state: DeviceState, budget: int, now: int = 0) -> DeviceState:
    """Advance the squaring chain by up to `budget` steps; actuate on completion."""
    if state.pending_puzzle is None or budget <= 0:
        return state
    puzzle = state.pending_puzzle
    steps = min(budget, puzzle.t_hat - state.solve_progress)
    state.solve_residue = crypto._square_chain(state.solve_residue, puzzle.n, steps)
    state.solve_progress += steps
    if state.solve_progress < puzzle.t_hat:
        return state

    state.events.append(format_event(state.pending_round, state.device_id, "solve_done", now))
    try:
        solution = crypto.recover_solution(puzzle, state.solve_residue, state.solve_progress)
        _state, command_device, _seq = schedule.decode_command(solution.command)
    except (crypto.AuthenticationError, crypto.FramingError):
        state.events.append(format_event(state.pending_round, state.device_id, "discard", now))
        state.pending_puzzle = None
        return state
    state.pending_puzzle = None
    if command_device != state.device_id:
        state.events.append(format_event(state.pending_round, state.device_id, "discard", now))
        return state

    t_com = now + state.clock_skew
    state.actuated = (solution.command, t_com)
    state.events.append(format_event(state.pending_round, state.device_id, "actuate", now))
    report = ExecutionReport(
        device_id=state.device_id,
        t_com=t_com,
        t_hat=puzzle.t_hat,
        solution=state.solve_residue,
    )
    enqueue_upload(state, report_to_bytes(report))
    return state


@dataclass
class HubState:
    layout: token.TokenLayout
    ring_key: bytes
    rng: random.Random
    n_virtual: int
    round: int = 0
    accepted_plan: Optional[dict] = None  # device_id -> wrapped slot payload
    plan_delivered: bool = True
    random_field_log: dict = field(default_factory=dict)
    pending_grants: set = field(default_factory=set)
    requests: set = field(default_factory=set)
    t_beg: dict = field(default_factory=dict)
    t_end: dict = field(default_factory=dict)
    recovered: list = field(default_factory=list)  # (round, device_id, payload)
    seal_count: int = 0
    events: list = field(default_factory=list)


def make_hub(
    registry: crypto.KeyRegistry,
    layout: token.TokenLayout,
    *,
    n_virtual: Optional[int] = None,
    rng_seed=0,
) -> HubState:
    seed_bytes = crypto.hash_digest(f"hub:{rng_seed}".encode())
    return HubState(
        layout=layout,
        ring_key=registry.ring_key,
        rng=random.Random(int.from_bytes(seed_bytes, "big")),
        n_virtual=n_virtual if n_virtual is not None else layout.n_devices,
    )


def hub_accept_order(state: HubState, order: Order, owner_pk) -> bool:
    if not hub_verify_order(order, owner_pk):
        return False
    entries = _parse_commands(order.commands)
    for device_id, _ in entries:
        if not 1 <= device_id <= state.layout.n_devices:
            return False
    state.accepted_plan = dict(entries)
    state.plan_delivered = False
    return True


def _fill_slot(state: HubState, payload: Optional[bytes]) -> bytes:
    size = state.layout.slot_size
    if payload is None:
        # Padding slots carry a maximal plausible length prefix so every
        # device's unwrap attempt costs the same as on a real slot.
        return (size - 2).to_bytes(2, "big") + state.rng.randbytes(size - 2)
    if len(payload) > size - 2:
        raise ProtocolError("wrapped puzzle does not fit the configured slot size")
    padding = state.rng.randbytes(size - 2 - len(payload))
    return len(payload).to_bytes(2, "big") + payload + padding


def hub_emit_token(state: HubState, now: int):
    """Start a round: deliver a pending plan once, pad everything else."""
    state.round += 1
    round_no = state.round
    state.t_beg[round_no] = now

    slots = []
    deliver = state.accepted_plan if not state.plan_delivered else None
    for device_id in range(1, state.layout.n_devices + 1):
        payload = deliver.get(device_id) if deliver else None
        slots.append(_fill_slot(state, payload))
    if deliver is not None:
        state.plan_delivered = True

    b_r = state.rng.randbytes(state.layout.data_capacity)
    state.random_field_log[round_no] = b_r

    state.pending_grants = set(state.requests)
    if not state.layout.subfields and len(state.pending_grants) > 1:
        state.pending_grants = {min(state.pending_grants)}
    state.requests -= state.pending_grants

    t = token.Token(
        token_id=round_no,
        round=round_no,
        counter=state.n_virtual,
        toggle_bits=bytes(state.layout.toggle_bytes),
        command_field=tuple(slots),
        data_field=b_r,
    )
    for idx in state.pending_grants:
        t = token.toggle_set(t, idx)

    state.seal_count += 1
    frame = token.token_build(t, state.ring_key, state.layout, state.seal_count)
    state.events.append(format_event(round_no, HUB_ID, "emit", now))
    return state, frame


def hub_on_token(state: HubState, frame: bytes, now: int) -> HubState:
    """Finish a round: recover granted uploads, collect new requests."""
    t = token.token_parse(frame, state.ring_key, state.layout)
    state.events.append(format_event(t.round, HUB_ID, "rcv", now))
    state.t_end[t.round] = now

    b_r = state.random_field_log.pop(t.round, None)
    returned_bits = token.toggle_read(t)
    if b_r is not None:
        for idx in sorted(state.pending_grants):
            start, end = state.layout.subfield_bounds(idx)
            recovered = token.data_recover(t.data_field[start:end], b_r[start:end])
            length = int.from_bytes(recovered[:2], "big")
            if 0 < length <= len(recovered) - 2:
                state.recovered.append((t.round, idx + 1, recovered[2 : 2 + length]))
    # Grant bits were consumed this round; anything else set is a new request.
    state.requests |= returned_bits - state.pending_grants
    state.pending_grants = set()
    return state


def collect_reports(state: HubState):
    """Parse every recovered upload that decodes as an execution report."""
    reports = []
    for _round, _device, payload in state.recovered:
        try:
            reports.append(report_from_bytes(payload))
        except crypto.FramingError:
            continue
    return reports


def owner_verify_execution(
    reports, params: crypto.PuzzleParams, plan: schedule.SchedulePlan
) -> bool:
    """Check every report's residue via the phi(n) shortcut, then the ordering."""
    by_device = {}
    for report in reports:
        if plan.entry_for(report.device_id) is None:
            return False
        if report.device_id in by_device:
            return False  # ambiguous duplicate
        by_device[report.device_id] = report

    for entry in plan.entries:
        report = by_device.get(entry.device_id)
        if report is None:
            return False
        if report.t_hat != entry.t_hat:
            return False
        if report.solution != crypto.puzzle_fast_eval(entry.puzzle, params.phi):
            return False

    for earlier, later in plan.pairs:
        if by_device[earlier].t_com > by_device[later].t_com:
            return False
    return True
