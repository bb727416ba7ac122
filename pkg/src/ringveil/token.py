"""Constant-size encrypted token frames with toggle signaling and XOR data hiding.

A token's plaintext layout is a pure function of the ring configuration, so
every sealed frame in a run has exactly the same length whether it carries a
real schedule, upload data, or random padding.  That constancy is the whole
point: frame size must never leak what the ring is doing.
"""

from dataclasses import dataclass, replace

from ringveil import crypto
from ringveil.schedule import COMMAND_BYTES

_HEADER_BYTES = 8 + 4 + 4  # token_id, round, counter


@dataclass(frozen=True)
class TokenLayout:
    """Frame geometry for one ring configuration."""

    n_devices: int
    slot_size: int
    data_capacity: int
    subfields: bool = True

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("layout needs at least one device")
        if self.slot_size < 1 or self.data_capacity < 0:
            raise ValueError("slot size must be positive; data capacity non-negative")
        if self.subfields and self.data_capacity % self.n_devices != 0:
            raise ValueError("sub-field mode needs data capacity divisible by device count")

    @property
    def toggle_bytes(self) -> int:
        return (self.n_devices + 7) // 8

    @property
    def plaintext_size(self) -> int:
        return (
            _HEADER_BYTES
            + self.toggle_bytes
            + self.n_devices * self.slot_size
            + self.data_capacity
        )

    @property
    def frame_size(self) -> int:
        return self.plaintext_size + crypto.NONCE_BYTES + crypto.TAG_BYTES

    def subfield_bounds(self, device_index: int):
        """Byte range of one device's share of the data field."""
        if not 0 <= device_index < self.n_devices:
            raise ValueError(f"device index {device_index} outside 0..{self.n_devices - 1}")
        width = self.data_capacity // self.n_devices if self.subfields else self.data_capacity
        start = device_index * width if self.subfields else 0
        return start, start + width


def max_wrapped_slot_size(modulus_bits: int, command_bytes: int = COMMAND_BYTES) -> int:
    """Upper bound on a command slot: a device-wrapped serialized puzzle.

    Three big integers below the modulus, two 8-byte counters, and the nested
    AE framing of the command ciphertext, all inside the device wrap.
    """
    nb = (modulus_bits + 7) // 8
    e_z = crypto.NONCE_BYTES + command_bytes + crypto.TAG_BYTES
    puzzle = 3 * (4 + nb) + 8 + 8 + (4 + e_z)
    return 32 + crypto.NONCE_BYTES + puzzle + crypto.TAG_BYTES


@dataclass(frozen=True)
class Token:
    token_id: int
    round: int
    counter: int
    toggle_bits: bytes
    command_field: tuple  # n_devices slots, each exactly slot_size bytes
    data_field: bytes


def _check_shape(t: Token, layout: TokenLayout):
    if len(t.toggle_bits) != layout.toggle_bytes:
        raise ValueError("toggle field width does not match layout")
    if len(t.command_field) != layout.n_devices:
        raise ValueError(
            f"expected {layout.n_devices} command slots, got {len(t.command_field)}"
        )
    for i, slot in enumerate(t.command_field):
        if len(slot) != layout.slot_size:
            raise ValueError(f"slot {i} is {len(slot)} bytes, layout wants {layout.slot_size}")
    if len(t.data_field) != layout.data_capacity:
        raise ValueError("data field does not fill its capacity")


def token_build(t: Token, ring_key: bytes, layout: TokenLayout, nonce=None) -> bytes:
    """Serialize and seal.  Callers re-sealing per hop must pass unique nonces."""
    _check_shape(t, layout)
    plaintext = b"".join(
        (
            t.token_id.to_bytes(8, "big"),
            t.round.to_bytes(4, "big"),
            t.counter.to_bytes(4, "big", signed=True),
            t.toggle_bits,
            *t.command_field,
            t.data_field,
        )
    )
    if nonce is None:
        nonce = t.round
    return crypto.sym_seal(plaintext, ring_key, nonce)


def token_parse(frame: bytes, ring_key: bytes, layout: TokenLayout) -> Token:
    if len(frame) != layout.frame_size:
        raise crypto.FramingError(
            f"frame is {len(frame)} bytes, configuration requires {layout.frame_size}"
        )
    plaintext = crypto.sym_open(frame, ring_key)
    token_id = int.from_bytes(plaintext[0:8], "big")
    round_no = int.from_bytes(plaintext[8:12], "big")
    counter = int.from_bytes(plaintext[12:16], "big", signed=True)
    offset = _HEADER_BYTES
    toggle = plaintext[offset : offset + layout.toggle_bytes]
    offset += layout.toggle_bytes
    slots = []
    for _ in range(layout.n_devices):
        slots.append(plaintext[offset : offset + layout.slot_size])
        offset += layout.slot_size
    data = plaintext[offset:]
    return Token(
        token_id=token_id,
        round=round_no,
        counter=counter,
        toggle_bits=toggle,
        command_field=tuple(slots),
        data_field=data,
    )


def data_overwrite(random_bits: bytes, generated_bits: bytes) -> bytes:
    if len(random_bits) != len(generated_bits):
        raise ValueError("overwrite operands must be the same length")
    return bytes(r ^ g for r, g in zip(random_bits, generated_bits))


def data_recover(overwritten: bytes, random_bits: bytes) -> bytes:
    return data_overwrite(overwritten, random_bits)


def _toggle_bit(t: Token, device_index: int, value: bool) -> Token:
    n = len(t.command_field)  # one slot and one toggle bit per device
    if not 0 <= device_index < n:
        raise ValueError(f"device index {device_index} outside 0..{n - 1}")
    bits = bytearray(t.toggle_bits)
    mask = 1 << (device_index % 8)
    if value:
        bits[device_index // 8] |= mask
    else:
        bits[device_index // 8] &= ~mask
    return replace(t, toggle_bits=bytes(bits))


def toggle_set(t: Token, device_index: int) -> Token:
    """Set (never flip) the request bit; repeated requests stay set."""
    return _toggle_bit(t, device_index, True)


def toggle_clear(t: Token, device_index: int) -> Token:
    """Hub-side clear after an upload request has been granted."""
    return _toggle_bit(t, device_index, False)


def toggle_read(t: Token):
    out = set()
    for i in range(len(t.command_field)):
        if t.toggle_bits[i // 8] >> (i % 8) & 1:
            out.add(i)
    return out
