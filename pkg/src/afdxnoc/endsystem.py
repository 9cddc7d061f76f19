"""End System: VL queues, BAG-spaced static-priority scheduler, sequence integrity."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from . import frame as fr
from .errors import OversizeMessage, UnknownVl


@dataclass(frozen=True)
class VirtualLink:
    vlid: int
    bag_cycles: int
    lmax_bytes: int
    src_es: str
    dest_es: frozenset[str]
    priority: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dest_es", frozenset(self.dest_es))
        if not 0 <= self.vlid <= 0xFFFF:
            raise ValueError(f"vlid must fit in 16 bits, got {self.vlid}")
        if self.bag_cycles < 1:
            raise ValueError(f"bag_cycles must be >= 1, got {self.bag_cycles}")
        if not fr.MIN_FRAME_LEN <= self.lmax_bytes <= fr.MAX_FRAME_LEN:
            raise ValueError(
                f"lmax_bytes must be in [{fr.MIN_FRAME_LEN}, {fr.MAX_FRAME_LEN}], got {self.lmax_bytes}"
            )
        if not self.dest_es:
            raise ValueError(f"VL {self.vlid} has no destinations")
        if self.priority < 0:
            raise ValueError(f"priority must be >= 0, got {self.priority}")


@dataclass
class SeqState:
    last_sent: Optional[int] = None

    def advance(self) -> int:
        self.last_sent = 0 if self.last_sent is None else fr.next_seq(self.last_sent)
        return self.last_sent


@dataclass
class VlQueue:
    vl: VirtualLink
    pending: deque = field(default_factory=deque)
    last_emission_cycle: Optional[int] = None
    seq_state: SeqState = field(default_factory=SeqState)

    def ready_at(self) -> int:
        if self.last_emission_cycle is None:
            return 0
        return self.last_emission_cycle + self.vl.bag_cycles


class Verdict(str, Enum):
    IN_ORDER = "InOrder"
    SKIP = "Skip"
    DUPLICATE = "Duplicate"
    RESET = "Reset"


@dataclass
class RxIntegrityState:
    expected_next: Optional[int] = None
    last_seq: Optional[int] = None
    skip: int = 0
    duplicate: int = 0
    reset_seen: int = 0


@dataclass(frozen=True)
class Delivery:
    vlid: int
    seq: int
    frame: fr.Frame
    verdict: Verdict
    gap: int
    at: int


def seq_gap(expected: int, got: int) -> int:
    """Frames missing between ``expected`` and ``got`` on the 1..255 ring."""
    return (got - expected) % 255


class EndSystem:
    def __init__(self, es_id: str, es_number: int, vls: Iterable[VirtualLink] = (), cycles_per_byte: int = 1):
        self.es_id = es_id
        self.es_number = es_number
        self.cycles_per_byte = cycles_per_byte
        self.queues: dict[int, VlQueue] = {}
        for vl in vls:
            if vl.src_es != es_id:
                raise ValueError(f"VL {vl.vlid} is sourced by {vl.src_es}, not {es_id}")
            self.queues[vl.vlid] = VlQueue(vl)
        self.tx_busy_until = 0
        self.rx_state: dict[int, RxIntegrityState] = {}

    def reset(self) -> None:
        """Drop pending traffic and restart every VL's sequence at 0."""
        for q in self.queues.values():
            q.pending.clear()
            q.last_emission_cycle = None
            q.seq_state = SeqState()
        self.rx_state.clear()

    def owns(self, vlid: int) -> bool:
        return vlid in self.queues

    def submit_message(self, port: int, payload: bytes, vlid: int) -> fr.Frame:
        q = self.queues.get(vlid)
        if q is None:
            raise UnknownVl(f"VL {vlid} is not sourced by End System {self.es_id}")
        size = fr.frame_length(len(payload))
        if len(payload) > fr.MAX_PAYLOAD or size > q.vl.lmax_bytes:
            raise OversizeMessage(
                f"{len(payload)}-byte message needs a {len(payload) + fr.FRAME_OVERHEAD}-byte frame, "
                f"VL {vlid} allows {q.vl.lmax_bytes}"
            )
        frame = fr.Frame(
            vlid=vlid,
            src_es=self.es_number,
            payload=payload,
            seq=q.seq_state.advance(),
            udp_src_port=port,
            udp_dst_port=port,
        )
        q.pending.append((frame, fr.encode(frame)))
        return frame

    def _eligible(self, now: int) -> list[VlQueue]:
        return [q for q in self.queues.values() if q.pending and q.ready_at() <= now]

    def schedule(self, now: int) -> Optional[tuple[int, bytes]]:
        """Start at most one emission: best (priority, vlid) among BAG-eligible VLs."""
        if now < self.tx_busy_until:
            return None
        eligible = self._eligible(now)
        if not eligible:
            return None
        q = min(eligible, key=lambda q: (q.vl.priority, q.vl.vlid))
        _, wire = q.pending.popleft()
        q.last_emission_cycle = now
        self.tx_busy_until = now + len(wire) * self.cycles_per_byte
        return q.vl.vlid, wire

    def next_ready(self, now: int) -> Optional[int]:
        """Earliest cycle > now at which schedule() could emit, or None if nothing is queued."""
        times = [q.ready_at() for q in self.queues.values() if q.pending]
        if not times:
            return None
        return max(min(times), self.tx_busy_until, now + 1)

    def receive_frame(self, wire: bytes, now: int) -> Delivery:
        frame = fr.decode(wire)
        st = self.rx_state.setdefault(frame.vlid, RxIntegrityState())
        seq, gap = frame.seq, 0
        if seq == 0:
            verdict = Verdict.RESET
            st.reset_seen += 1
        elif st.expected_next is None or seq == st.expected_next:
            # a first non-zero seq means this receiver joined mid-stream
            verdict = Verdict.IN_ORDER
        elif seq == st.last_seq:
            verdict = Verdict.DUPLICATE
            st.duplicate += 1
        else:
            verdict = Verdict.SKIP
            gap = seq_gap(st.expected_next, seq)
            st.skip += gap
        if verdict is not Verdict.DUPLICATE:
            st.expected_next = fr.next_seq(seq)
        st.last_seq = seq
        return Delivery(frame.vlid, seq, frame, verdict, gap, now)
