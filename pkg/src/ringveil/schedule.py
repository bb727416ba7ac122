"""Compile partially ordered device schedules into per-device time-lock puzzles.

The owner expresses constraints as ordered pairs (earlier, later).  Compilation
picks a ring order that is a linear extension of the partial order, then
assigns each scheduled device a squaring count t_hat such that devices bound
by a pair actuate in order with a safety margin, and unconstrained devices all
actuate at one shared instant regardless of where they sit on the ring.
"""

import heapq
import json
import math
import random
from dataclasses import dataclass, field

from ringveil import crypto

DEFAULT_BASE_T_HAT = 1000  # squarings given to the earliest device in a chain

COMMAND_BYTES = 1 + 4 + 8  # state byte, device id, sequence number

STATE_ON = "on"
STATE_OFF = "off"


class CycleError(ValueError):
    """The ordering pairs contain a directed cycle among distinct devices."""


class ScheduleParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class PartialOrder:
    devices: tuple
    pairs: tuple
    states: dict = field(default_factory=dict)
    # Ordered action sequence for the star-baseline comparison: ("set", id,
    # state) and ("read", id) entries in declaration order.  Ring compilation
    # ignores it apart from read actions, which queue one anonymous upload.
    script: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(self, "script", tuple(tuple(s) for s in self.script))
        declared = set(self.devices)
        if len(declared) != len(self.devices):
            raise ValueError("duplicate device id in schedule")
        for a, b in self.pairs:
            if a not in declared or b not in declared:
                raise ValueError(f"pair ({a},{b}) references an undeclared device")
        for d in self.states:
            if d not in declared:
                raise ValueError(f"state for undeclared device {d}")
        for action in self.script:
            if action[1] not in declared:
                raise ValueError(f"script action for undeclared device {action[1]}")

    def effective_script(self):
        """The action sequence, defaulting to one set per device in order."""
        if self.script:
            return self.script
        return tuple(("set", d, self.state_of(d)) for d in self.devices)

    def read_devices(self):
        return tuple(a[1] for a in self.script if a[0] == "read")

    def constrained_devices(self):
        """Devices appearing in at least one pair with distinct endpoints."""
        out = set()
        for a, b in self.pairs:
            if a != b:
                out.add(a)
                out.add(b)
        return out

    def state_of(self, device_id) -> str:
        return self.states.get(device_id, STATE_ON)


@dataclass(frozen=True)
class PlanEntry:
    device_id: int
    command: bytes
    t_hat: int
    puzzle: crypto.Puzzle
    wrapped: bytes


@dataclass(frozen=True)
class SchedulePlan:
    entries: tuple
    slot_length: int  # time units; max t_hat at the plan's calibration
    comparable_count: int
    ring_order: tuple
    pairs: tuple
    squarings_per_unit: int
    issued_at: int

    def entry_for(self, device_id):
        for entry in self.entries:
            if entry.device_id == device_id:
                return entry
        return None


def linear_extension(order: PartialOrder, n: int):
    """Lexicographically smallest linear extension over ring positions 1..n.

    Every device in the topology appears in the result even if unscheduled;
    unconstrained ids slot in by numeric order.
    """
    universe = list(range(1, n + 1))
    for d in order.devices:
        if not 1 <= d <= n:
            raise ValueError(f"device id {d} outside ring capacity {n}")
    successors = {d: set() for d in universe}
    indegree = {d: 0 for d in universe}
    for a, b in order.pairs:
        if a == b:
            continue  # reflexive pairs impose nothing
        if b not in successors[a]:
            successors[a].add(b)
            indegree[b] += 1
    heap = [d for d in universe if indegree[d] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        d = heapq.heappop(heap)
        out.append(d)
        for succ in sorted(successors[d]):
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(heap, succ)
    if len(out) != n:
        raise CycleError("ordering pairs contain a directed cycle")
    return out


def assign_time_bounds(
    order: PartialOrder,
    hop_forward_times,
    *,
    squarings_per_unit: int = 1,
    base_t_hat: int = DEFAULT_BASE_T_HAT,
):
    """Map each scheduled device to a squaring count t_hat.

    Devices with no ordering constraint share one actuation instant: the
    earlier a device forwards the token, the more squarings it is given, so
    completion times coincide.  Devices in a chain are spaced so each pair is
    at least (N-1) times their forward-time gap apart in calibrated time.
    """
    n = len(hop_forward_times)
    for earlier, later in zip(hop_forward_times, hop_forward_times[1:]):
        if later <= earlier:
            raise ValueError("hop forward times must be strictly increasing")
    ring = linear_extension(order, n)
    position = {d: i for i, d in enumerate(ring)}
    forward = {d: hop_forward_times[position[d]] for d in order.devices}

    constrained = order.constrained_devices()
    free = [d for d in order.devices if d not in constrained]

    bounds = {}
    if free:
        latest = max(forward[d] for d in free)
        for d in free:
            bounds[d] = base_t_hat + squarings_per_unit * (latest - forward[d])

    predecessors = {d: set() for d in constrained}
    for a, b in order.pairs:
        if a != b:
            predecessors[b].add(a)
    for d in sorted(constrained, key=lambda d: position[d]):
        t_hat = base_t_hat
        for p in predecessors[d]:
            gap = (n - 1) * (forward[d] - forward[p]) * squarings_per_unit
            t_hat = max(t_hat, bounds[p] + gap)
        bounds[d] = t_hat
    return bounds


def encode_command(state: str, device_id: int, sequence: int) -> bytes:
    state_byte = b"\x01" if state == STATE_ON else b"\x00"
    return state_byte + device_id.to_bytes(4, "big") + sequence.to_bytes(8, "big")


def decode_command(buf: bytes):
    if len(buf) != COMMAND_BYTES:
        raise crypto.FramingError(f"command must be {COMMAND_BYTES} bytes")
    state = STATE_ON if buf[0] == 1 else STATE_OFF
    return state, int.from_bytes(buf[1:5], "big"), int.from_bytes(buf[5:13], "big")


def _random_base(rng: random.Random, n: int) -> int:
    while True:
        a = rng.randrange(2, n)
        if math.gcd(a, n) == 1:
            return a


def compile(
    order: PartialOrder,
    registry: crypto.KeyRegistry,
    params: crypto.PuzzleParams,
    hop_forward_times,
    *,
    rng_seed=0,
    issued_at: int = 0,
    squarings_per_unit: int = 1,
    base_t_hat: int = DEFAULT_BASE_T_HAT,
) -> SchedulePlan:
    """Compile one puzzle per scheduled device, each wrapped for its device key."""
    n = len(hop_forward_times)
    if len(order.devices) > n:
        raise ValueError(
            f"{len(order.devices)} scheduled devices exceed ring capacity {n}"
        )
    ring = linear_extension(order, n)  # raises CycleError on bad input
    if not order.devices:
        return SchedulePlan(
            entries=(),
            slot_length=0,
            comparable_count=0,
            ring_order=tuple(ring),
            pairs=(),
            squarings_per_unit=squarings_per_unit,
            issued_at=issued_at,
        )
    for d in order.devices:
        if d not in registry.device_keypairs:
            raise ValueError(f"device {d} has no provisioned keypair")

    bounds = assign_time_bounds(
        order,
        hop_forward_times,
        squarings_per_unit=squarings_per_unit,
        base_t_hat=base_t_hat,
    )
    slot_length = -(-max(bounds.values()) // squarings_per_unit)
    t_val = issued_at + 2 * slot_length

    rng = (
        rng_seed
        if isinstance(rng_seed, random.Random)
        else random.Random(int.from_bytes(crypto.hash_digest(f"plan:{rng_seed}".encode()), "big"))
    )
    position = {d: i for i, d in enumerate(ring)}
    entries = []
    for seq, device_id in enumerate(sorted(order.devices, key=lambda d: position[d])):
        command = encode_command(order.state_of(device_id), device_id, seq)
        key = rng.randrange(1, params.n)
        a = _random_base(rng, params.n)
        puzzle = crypto.puzzle_create(params, a, bounds[device_id], command, key, t_val)
        wrapped = crypto.wrap_for_device(
            crypto.puzzle_to_bytes(puzzle), registry.device_public(device_id), rng
        )
        entries.append(
            PlanEntry(
                device_id=device_id,
                command=command,
                t_hat=bounds[device_id],
                puzzle=puzzle,
                wrapped=wrapped,
            )
        )
    return SchedulePlan(
        entries=tuple(entries),
        slot_length=slot_length,
        comparable_count=len(order.constrained_devices()),
        ring_order=tuple(ring),
        pairs=tuple(p for p in order.pairs if p[0] != p[1]),
        squarings_per_unit=squarings_per_unit,
        issued_at=issued_at,
    )


def slot_length(plan: SchedulePlan) -> int:
    if not plan.entries:
        return 0
    return -(-max(e.t_hat for e in plan.entries) // plan.squarings_per_unit)


def slots_required(n: int, k: int) -> int:
    if k > n:
        raise ValueError("comparable count cannot exceed device count")
    return (n - k) + 1


def round_time_sum(t_beg: int, t_end: int, holds) -> int:
    """Pure transit time of one circulation: total span minus device hold times."""
    if t_end < t_beg:
        raise ValueError("round end precedes its beginning")
    total_hold = 0
    for t_rcv, t_fwd in holds:
        if t_fwd < t_rcv:
            raise ValueError("forward time precedes receive time")
        total_hold += t_fwd - t_rcv
    return (t_end - t_beg) - total_hold


def parse_schedule_text(text: str) -> PartialOrder:
    """Parse the line-oriented schedule format.

    One declaration per line: `device <id>`, `pair <id> <id>`,
    `state <id> on|off`, `read <id>`.  Blank lines and `#` comments are
    ignored.  State and read lines also define the action sequence used by
    the star-topology baseline, in declaration order.
    """
    devices = []
    pairs = []
    states = {}
    script = []
    declared = set()

    def parse_id(token, line_no):
        try:
            value = int(token)
        except ValueError:
            raise ScheduleParseError(line_no, f"device id {token!r} is not an integer")
        if value < 1:
            raise ScheduleParseError(line_no, "device ids start at 1")
        return value

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword = tokens[0]
        if keyword == "device":
            if len(tokens) != 2:
                raise ScheduleParseError(line_no, "expected: device <id>")
            d = parse_id(tokens[1], line_no)
            if d in declared:
                raise ScheduleParseError(line_no, f"device {d} declared twice")
            declared.add(d)
            devices.append(d)
        elif keyword == "pair":
            if len(tokens) != 3:
                raise ScheduleParseError(line_no, "expected: pair <id> <id>")
            a = parse_id(tokens[1], line_no)
            b = parse_id(tokens[2], line_no)
            for d in (a, b):
                if d not in declared:
                    raise ScheduleParseError(line_no, f"device {d} not declared")
            pairs.append((a, b))
        elif keyword == "state":
            if len(tokens) != 3 or tokens[2] not in (STATE_ON, STATE_OFF):
                raise ScheduleParseError(line_no, "expected: state <id> on|off")
            d = parse_id(tokens[1], line_no)
            if d not in declared:
                raise ScheduleParseError(line_no, f"device {d} not declared")
            states[d] = tokens[2]
            script.append(("set", d, tokens[2]))
        elif keyword == "read":
            if len(tokens) != 2:
                raise ScheduleParseError(line_no, "expected: read <id>")
            d = parse_id(tokens[1], line_no)
            if d not in declared:
                raise ScheduleParseError(line_no, f"device {d} not declared")
            script.append(("read", d))
        else:
            raise ScheduleParseError(line_no, f"unknown declaration {keyword!r}")
    return PartialOrder(
        devices=tuple(devices), pairs=tuple(pairs), states=states, script=tuple(script)
    )


def plan_to_json(plan: SchedulePlan) -> str:
    doc = {
        "format": "ringveil-plan-v1",
        "slot_length": plan.slot_length,
        "comparable_count": plan.comparable_count,
        "ring_order": list(plan.ring_order),
        "pairs": [list(p) for p in plan.pairs],
        "squarings_per_unit": plan.squarings_per_unit,
        "issued_at": plan.issued_at,
        "entries": [
            {
                "device_id": e.device_id,
                "command": e.command.hex(),
                "t_hat": e.t_hat,
                "puzzle": crypto.puzzle_to_bytes(e.puzzle).hex(),
                "wrapped": e.wrapped.hex(),
            }
            for e in plan.entries
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def plan_from_json(text: str) -> SchedulePlan:
    doc = json.loads(text)
    if doc.get("format") != "ringveil-plan-v1":
        raise ValueError("not a schedule plan document")
    entries = tuple(
        PlanEntry(
            device_id=e["device_id"],
            command=bytes.fromhex(e["command"]),
            t_hat=e["t_hat"],
            puzzle=crypto.puzzle_from_bytes(bytes.fromhex(e["puzzle"])),
            wrapped=bytes.fromhex(e["wrapped"]),
        )
        for e in doc["entries"]
    )
    return SchedulePlan(
        entries=entries,
        slot_length=doc["slot_length"],
        comparable_count=doc["comparable_count"],
        ring_order=tuple(doc["ring_order"]),
        pairs=tuple(tuple(p) for p in doc["pairs"]),
        squarings_per_unit=doc["squarings_per_unit"],
        issued_at=doc["issued_at"],
    )
