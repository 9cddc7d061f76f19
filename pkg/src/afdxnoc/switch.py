"""Store-and-forward NoC switch.

The switch is split into the same cores as the hardware design: a test unit
per RX port (preamble detection), per-port local storage, the CRC module, the
address table, the controller FSM, and the multiplexing matrix that fans a
frame out to one, several, or all TX ports. Frames are filtered in the order
length -> FCS -> destination address and are never modified.
"""

from __future__ import annotations

import struct
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Union

from .frame import (
    FCS_LEN,
    MAX_FRAME_LEN,
    MIN_FRAME_LEN,
    PREAMBLE_SFD_LEN,
    SFD,
    crc32,
    fcs_span,
    wire_vlid,
)

PORT_BUFFER_BYTES = 1600
DEFAULT_PROCESSING_DELAY = 4


class DropReason(str, Enum):
    BAD_LENGTH = "BadLength"
    BAD_FCS = "BadFcs"
    UNKNOWN_ADDRESS = "UnknownAddress"
    BUFFER_OVERFLOW = "BufferOverflow"


class ControllerState(Enum):
    IDLE = "IDLE"
    RECEIVING = "RECEIVING"
    CHECK_LENGTH = "CHECK_LENGTH"
    CHECK_FCS = "CHECK_FCS"
    LOOKUP = "LOOKUP"
    FORWARD = "FORWARD"
    DROP = "DROP"


@dataclass(frozen=True)
class ControllerInputs:
    """Flags raised by the test unit, CRC module and address table in one cycle."""

    frame_detected: bool = False
    rx_complete: bool = False
    length_ok: bool = False
    fcs_ok: bool = False
    address_found: bool = False
    forward_done: bool = False


@dataclass(frozen=True)
class Forward:
    ports: frozenset[int]

    def __post_init__(self):
        if not self.ports:
            raise ValueError("Forward needs at least one TX port")


@dataclass(frozen=True)
class Drop:
    reason: DropReason


ForwardDecision = Union[Forward, Drop]


@dataclass
class AddressTable:
    """Static VLID -> TX port set map."""

    port_count: int
    entries: dict[int, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        entries = {}
        for vlid, ports in dict(self.entries).items():
            ports = frozenset(ports)
            if not ports:
                raise ValueError(f"address table entry for VL {vlid} has no ports")
            bad = [p for p in ports if not 0 <= p < self.port_count]
            if bad:
                raise ValueError(f"VL {vlid} maps to port {min(bad)} on a {self.port_count}-port switch")
            entries[int(vlid)] = ports
        self.entries = entries

    @classmethod
    def from_mapping(cls, port_count: int, mapping: Mapping[int, Iterable[int]]) -> "AddressTable":
        return cls(port_count, {v: frozenset(p) for v, p in mapping.items()})


def lookup(table: AddressTable, vlid: int) -> Optional[frozenset[int]]:
    return table.entries.get(vlid)


class PortBuffer:
    """Byte-budgeted FIFO; rejects (drop-newest) instead of exceeding capacity."""

    def __init__(self, capacity_bytes: int = PORT_BUFFER_BYTES):
        self.capacity_bytes = capacity_bytes
        self.fifo: deque = deque()
        self.occupancy = 0
        self.peak = 0

    def __len__(self):
        return len(self.fifo)

    def fits(self, size: int) -> bool:
        return self.occupancy + size <= self.capacity_bytes

    def push(self, wire: bytes, item=None) -> bool:
        size = len(wire)
        if not self.fits(size):
            return False
        self.fifo.append((wire, item))
        self.occupancy += size
        self.peak = max(self.peak, self.occupancy)
        return True

    def peek(self):
        return self.fifo[0]

    def pop(self):
        wire, item = self.fifo.popleft()
        self.occupancy -= len(wire)
        return wire, item


def detect_frame_start(stream: bytes, offset: int = 0) -> Optional[int]:
    """Index just past the first preamble+SFD at or after ``offset``, else None."""
    run = 0
    for i in range(offset, len(stream)):
        b = stream[i]
        if b == 0x55:
            run += 1
        elif b == SFD and run >= 7:
            return i + 1
        else:
            run = 0
    return None


def check_length(wire: bytes) -> bool:
    return MIN_FRAME_LEN <= len(wire) - PREAMBLE_SFD_LEN <= MAX_FRAME_LEN


def check_fcs(wire: bytes) -> bool:
    (carried,) = struct.unpack("!I", wire[-FCS_LEN:])
    return crc32(fcs_span(wire)) == carried


_NEXT_ON_SUCCESS = {
    ControllerState.IDLE: ("frame_detected", ControllerState.RECEIVING),
    ControllerState.RECEIVING: ("rx_complete", ControllerState.CHECK_LENGTH),
    ControllerState.CHECK_LENGTH: ("length_ok", ControllerState.CHECK_FCS),
    ControllerState.CHECK_FCS: ("fcs_ok", ControllerState.LOOKUP),
    ControllerState.LOOKUP: ("address_found", ControllerState.FORWARD),
    ControllerState.FORWARD: ("forward_done", ControllerState.IDLE),
}

# States whose flag is a pass/fail verdict; a cleared flag diverts to DROP.
_CHECK_STATES = {ControllerState.CHECK_LENGTH, ControllerState.CHECK_FCS, ControllerState.LOOKUP}


def step_controller(state: ControllerState, inputs: ControllerInputs) -> ControllerState:
    """One transition of the per-port switch controller.

    IDLE, RECEIVING and FORWARD hold until their flag is raised; the three
    check states always move, to the next stage or to DROP. DROP always
    returns to IDLE.
    """
    if state is ControllerState.DROP:
        return ControllerState.IDLE
    flag, nxt = _NEXT_ON_SUCCESS[state]
    if getattr(inputs, flag):
        return nxt
    return ControllerState.DROP if state in _CHECK_STATES else state


@dataclass
class SwitchConfig:
    port_count: int
    table: AddressTable
    broadcast: bool = False
    broadcast_excludes_ingress: bool = False
    processing_delay: int = DEFAULT_PROCESSING_DELAY
    buffer_bytes: int = PORT_BUFFER_BYTES

    def __post_init__(self):
        if self.port_count < 1:
            raise ValueError("switch needs at least one port")
        if self.processing_delay < 0:
            raise ValueError("processing_delay must be >= 0")
        if self.table.port_count != self.port_count:
            raise ValueError("address table port count does not match the switch")


_STAGE_REASON = {
    ControllerState.CHECK_LENGTH: DropReason.BAD_LENGTH,
    ControllerState.CHECK_FCS: DropReason.BAD_FCS,
    ControllerState.LOOKUP: DropReason.UNKNOWN_ADDRESS,
}


def process_frame(wire: bytes, rx_port: int, config: SwitchConfig) -> ForwardDecision:
    """Run one fully received frame through the controller pipeline.

    Checks are evaluated lazily as the FSM reaches each stage, so a frame with
    a bad length never has its FCS computed. A stream with no detectable SFD
    has no bytes past the delimiter and is rejected at the length stage.
    """
    state = ControllerState.RECEIVING
    ports: Optional[frozenset[int]] = None
    while True:
        if state is ControllerState.RECEIVING:
            started = detect_frame_start(wire[:PREAMBLE_SFD_LEN]) == PREAMBLE_SFD_LEN
            nxt = step_controller(state, ControllerInputs(rx_complete=True))
            if not started:
                return Drop(DropReason.BAD_LENGTH)
        elif state is ControllerState.CHECK_LENGTH:
            nxt = step_controller(state, ControllerInputs(length_ok=check_length(wire)))
        elif state is ControllerState.CHECK_FCS:
            nxt = step_controller(state, ControllerInputs(fcs_ok=check_fcs(wire)))
        elif state is ControllerState.LOOKUP:
            if config.broadcast:
                ports = frozenset(
                    p
                    for p in range(config.port_count)
                    if not (config.broadcast_excludes_ingress and p == rx_port)
                )
            else:
                ports = lookup(config.table, wire_vlid(wire))
            nxt = step_controller(state, ControllerInputs(address_found=bool(ports)))
        else:
            raise AssertionError(f"unexpected controller state {state}")

        if nxt is ControllerState.DROP:
            return Drop(_STAGE_REASON[state])
        if nxt is ControllerState.FORWARD:
            return Forward(ports)
        state = nxt


class Switch:
    """Stateful switch instance: RX/TX port buffers, per-port controllers, counters."""

    def __init__(self, name: str, config: SwitchConfig):
        self.name = name
        self.config = config
        n = config.port_count
        self.rx_buffers = [PortBuffer(config.buffer_bytes) for _ in range(n)]
        self.tx_buffers = [PortBuffer(config.buffer_bytes) for _ in range(n)]
        self.controllers = [ControllerState.IDLE for _ in range(n)]
        self.drops: Counter = Counter()
        self.forwarded = 0

    def store_rx(self, rx_port: int, wire: bytes, item=None) -> bool:
        """Test unit hands a completely received frame to local storage."""
        if not self.rx_buffers[rx_port].push(wire, item):
            self.drops[DropReason.BUFFER_OVERFLOW] += 1
            return False
        return True

    def decide(self, rx_port: int) -> tuple[bytes, object, ForwardDecision]:
        """Pop the head of an RX buffer and filter it."""
        wire, item = self.rx_buffers[rx_port].pop()
        decision = process_frame(wire, rx_port, self.config)
        if isinstance(decision, Drop):
            self.drops[decision.reason] += 1
        return wire, item, decision

    def enqueue_tx(self, wire: bytes, tx_port: int, item=None) -> bool:
        if self.tx_buffers[tx_port].push(wire, item):
            self.forwarded += 1
            return True
        self.drops[DropReason.BUFFER_OVERFLOW] += 1
        return False

    def peak_occupancy(self) -> dict[str, list[int]]:
        return {
            "rx": [b.peak for b in self.rx_buffers],
            "tx": [b.peak for b in self.tx_buffers],
        }

