"""Deterministic discrete-event engine for End Systems and switches.

Links are full-duplex 8-bit parallel channels moving one byte per cycle (scaled
by ``cycles_per_byte``). Every node is store-and-forward: it only acts on a
frame once the last byte has arrived. Events are ordered by
(cycle, kind rank, node id, port, insertion ordinal), which is a total order,
so a run is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Optional

from .endsystem import EndSystem, Verdict, VirtualLink
from .errors import InvalidTopology, OversizeMessage, PastCycle, UnknownVl
from .frame import PREAMBLE_SFD_LEN
from .switch import ControllerState, Drop, DropReason, Switch, SwitchConfig, detect_frame_start

log = logging.getLogger(__name__)


class NodeKind(str, Enum):
    END_SYSTEM = "end_system"
    SWITCH = "switch"


class EventKind(IntEnum):
    # value is the same-cycle rank: receptions first, transmissions last
    FRAME_FULLY_RECEIVED = 0
    TX_COMPLETE = 1
    FORWARD = 2
    MESSAGE_INJECTION = 3
    TX_START = 4
    STATS_SAMPLE = 5


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    kind: NodeKind
    switch: Optional[SwitchConfig] = None
    es_number: Optional[int] = None


@dataclass(frozen=True)
class LinkSpec:
    a: str
    a_port: int
    b: str
    b_port: int


@dataclass
class Topology:
    nodes: list[NodeSpec]
    links: list[LinkSpec]
    cycles_per_byte: int = 1


@dataclass(frozen=True)
class BitFlip:
    """Flip one bit of the first frame sent on a link by ``from_node`` at or after ``at``."""

    at: int
    link: int
    from_node: str
    byte: int
    bit: int


@dataclass(frozen=True)
class Packet:
    """Bookkeeping that travels alongside the wire bytes; never read by protocol logic."""

    uid: int
    vlid: int
    seq: int
    src: str
    injected_at: int


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    node: str
    port: int
    event: str
    vlid: Optional[int] = None
    seq: Optional[int] = None
    drop_reason: str = ""

    def row(self) -> list:
        return [
            self.cycle,
            self.node,
            self.port,
            self.event,
            "" if self.vlid is None else self.vlid,
            "" if self.seq is None else self.seq,
            self.drop_reason,
        ]


TRACE_HEADER = ["cycle", "node", "port", "event", "vlid", "seq", "drop_reason"]


def format_trace(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def parse_trace(text: str) -> list[TraceRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for row in rows[1:]:
        cycle, node, port, event, vlid, seq, reason = row
        out.append(
            TraceRecord(
                int(cycle),
                node,
                int(port),
                event,
                int(vlid) if vlid else None,
                int(seq) if seq else None,
                reason,
            )
        )
    return out


@dataclass
class Channel:
    src: str
    src_port: int
    dst: str
    dst_port: int
    busy_until: int = 0
    busy_total: int = 0
    in_flight: Optional[tuple[bytes, Packet]] = None

    @property
    def name(self) -> str:
        return f"{self.src}:{self.src_port}->{self.dst}:{self.dst_port}"


@dataclass
class VlStats:
    submitted: int = 0
    rejected_oversize: int = 0
    sent: int = 0
    copies_created: int = 0
    delivered: int = 0
    dropped: Counter = field(default_factory=Counter)
    skip: int = 0
    duplicate: int = 0
    reset_seen: int = 0
    max_wire_bytes: int = 0
    latencies: list = field(default_factory=list)


@dataclass
class StatsReport:
    cycles: int
    virtual_links: dict
    switches: dict
    links: dict
    faults: dict
    samples: list

    def to_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "virtual_links": self.virtual_links,
            "switches": self.switches,
            "links": self.links,
            "faults": self.faults,
            "samples": self.samples,
        }


def _forwarding_ports(cfg: SwitchConfig, vlid: int, in_port: int) -> list[int]:
    if cfg.broadcast:
        return [p for p in range(cfg.port_count) if not (cfg.broadcast_excludes_ingress and p == in_port)]
    return sorted(cfg.table.entries.get(vlid, ()))


def validate(topology: Topology, vls: Iterable[VirtualLink]) -> None:
    """Raise InvalidTopology naming the first violated constraint."""
    kinds: dict[str, NodeSpec] = {}
    for n in topology.nodes:
        if n.node_id in kinds:
            raise InvalidTopology(f"duplicate node id {n.node_id!r}")
        if n.kind is NodeKind.SWITCH and n.switch is None:
            raise InvalidTopology(f"switch {n.node_id!r} has no configuration")
        kinds[n.node_id] = n
    if topology.cycles_per_byte < 1:
        raise InvalidTopology("cycles_per_byte must be >= 1")

    used: dict[tuple[str, int], int] = {}
    peer: dict[tuple[str, int], tuple[str, int]] = {}
    for i, link in enumerate(topology.links):
        ends = ((link.a, link.a_port), (link.b, link.b_port))
        for node, port in ends:
            spec = kinds.get(node)
            if spec is None:
                raise InvalidTopology(f"link {i} references unknown node {node!r}")
            nports = 1 if spec.kind is NodeKind.END_SYSTEM else spec.switch.port_count
            if not 0 <= port < nports:
                raise InvalidTopology(f"link {i} references port {port} on {node!r}, which has {nports} port(s)")
            if (node, port) in used:
                raise InvalidTopology(f"link {i} reuses {node}:{port}, already on link {used[(node, port)]}")
            used[(node, port)] = i
        if all(kinds[n].kind is NodeKind.END_SYSTEM for n, _ in ends):
            raise InvalidTopology(f"link {i} joins two End Systems; End Systems must attach to a switch")
        peer[ends[0]] = ends[1]
        peer[ends[1]] = ends[0]

    for spec in topology.nodes:
        if spec.kind is NodeKind.END_SYSTEM and (spec.node_id, 0) not in peer:
            raise InvalidTopology(f"End System {spec.node_id!r} is not linked")
        if spec.kind is NodeKind.SWITCH:
            cfg = spec.switch
            if cfg.broadcast:
                needed = range(cfg.port_count)
            else:
                needed = sorted({p for ports in cfg.table.entries.values() for p in ports})
            for p in needed:
                if (spec.node_id, p) not in peer:
                    raise InvalidTopology(f"switch {spec.node_id!r} forwards to unlinked port {p}")

    seen_vl = set()
    for vl in vls:
        if vl.vlid in seen_vl:
            raise InvalidTopology(f"VL {vl.vlid} defined twice")
        seen_vl.add(vl.vlid)
        for who, role in [(vl.src_es, "source")] + [(d, "destination") for d in sorted(vl.dest_es)]:
            if who not in kinds:
                raise InvalidTopology(f"VL {vl.vlid} {role} {who!r} is not a node")
            if kinds[who].kind is not NodeKind.END_SYSTEM:
                raise InvalidTopology(f"VL {vl.vlid} {role} {who!r} is not an End System")
        reached = _reach(kinds, peer, vl)
        missing = sorted(vl.dest_es - reached)
        if missing:
            raise InvalidTopology(f"VL {vl.vlid} cannot reach destination {missing[0]!r} through the address tables")


def _reach(kinds: dict[str, NodeSpec], peer: dict, vl: VirtualLink) -> set[str]:
    reached: set[str] = set()
    visited: set[str] = set()
    work = deque([peer[(vl.src_es, 0)]])
    while work:
        node, in_port = work.popleft()
        spec = kinds[node]
        if spec.kind is NodeKind.END_SYSTEM:
            reached.add(node)
            continue
        if node in visited:
            raise InvalidTopology(f"VL {vl.vlid} reaches switch {node!r} more than once (forwarding loop)")
        visited.add(node)
        for p in _forwarding_ports(spec.switch, vl.vlid, in_port):
            work.append(peer[(node, p)])
    return reached


class Simulation:
    def __init__(
        self,
        topology: Topology,
        vls: Iterable[VirtualLink],
        faults: Iterable[BitFlip] = (),
        stats_interval: Optional[int] = None,
    ):
        vls = list(vls)
        validate(topology, vls)
        self.topology = topology
        self.vls = {vl.vlid: vl for vl in vls}
        self.cpb = topology.cycles_per_byte
        self.clock = 0

        self.end_systems: dict[str, EndSystem] = {}
        self.switches: dict[str, Switch] = {}
        es_numbers = set()
        auto_number = itertools.count(1)
        for spec in topology.nodes:
            if spec.kind is NodeKind.END_SYSTEM:
                number = spec.es_number if spec.es_number is not None else next(auto_number)
                if number in es_numbers:
                    raise InvalidTopology(f"End System number {number} used twice")
                es_numbers.add(number)
                owned = [vl for vl in vls if vl.src_es == spec.node_id]
                self.end_systems[spec.node_id] = EndSystem(spec.node_id, number, owned, self.cpb)
            else:
                self.switches[spec.node_id] = Switch(spec.node_id, spec.switch)

        self.channels: dict[tuple[str, int], Channel] = {}
        self._link_channels: list[dict[str, Channel]] = []
        for link in topology.links:
            fwd = Channel(link.a, link.a_port, link.b, link.b_port)
            rev = Channel(link.b, link.b_port, link.a, link.a_port)
            self.channels[(link.a, link.a_port)] = fwd
            self.channels[(link.b, link.b_port)] = rev
            self._link_channels.append({link.a: fwd, link.b: rev})

        self._faults: dict[tuple[str, int], list[BitFlip]] = defaultdict(list)
        for f in sorted(faults, key=lambda f: f.at):
            if not 0 <= f.link < len(topology.links):
                raise InvalidTopology(f"fault references link {f.link}, only {len(topology.links)} exist")
            ch = self._link_channels[f.link].get(f.from_node)
            if ch is None:
                raise InvalidTopology(f"fault sender {f.from_node!r} is not an endpoint of link {f.link}")
            self._faults[(ch.src, ch.src_port)].append(f)
        self.faults_applied = 0
        self.faults_missed = 0

        self._heap: list = []
        self._ordinal = itertools.count()
        self._uid = itertools.count()
        self._polls: set[tuple[str, int, int]] = set()
        self._meta: dict[tuple[str, int], deque] = defaultdict(deque)
        self.vl_stats: dict[int, VlStats] = {v: VlStats() for v in self.vls}
        self.trace: list[TraceRecord] = []
        self.samples: list = []
        self.deliveries: list[tuple[str, Packet, int]] = []
        if stats_interval:
            self.stats_interval = stats_interval
            self._push(stats_interval, EventKind.STATS_SAMPLE, "", 0, None)
        else:
            self.stats_interval = None

    # -- public API -------------------------------------------------------

    def inject(self, at: int, es: str, vlid: int, payload: bytes, port: int = 0) -> None:
        if at < self.clock:
            raise PastCycle(f"cannot inject at cycle {at}; clock is already at {self.clock}")
        node = self.end_systems.get(es)
        if node is None or not node.owns(vlid):
            raise UnknownVl(f"VL {vlid} is not sourced by End System {es!r}")
        self._push(at, EventKind.MESSAGE_INJECTION, es, 0, (vlid, bytes(payload), port))

    def run(self, until: int) -> tuple[StatsReport, list[TraceRecord]]:
        if until < self.clock:
            raise PastCycle(f"run target {until} is before the clock ({self.clock})")
        handlers = {
            EventKind.FRAME_FULLY_RECEIVED: self._on_rx,
            EventKind.TX_COMPLETE: self._on_tx_complete,
            EventKind.FORWARD: self._on_forward,
            EventKind.MESSAGE_INJECTION: self._on_injection,
            EventKind.TX_START: self._on_tx_start,
            EventKind.STATS_SAMPLE: self._on_sample,
        }
        while self._heap and self._heap[0][0] <= until:
            at, kind, node, port, _, data = heapq.heappop(self._heap)
            self.clock = at
            handlers[kind](node, port, data)
        self.clock = until
        return self.report(), list(self.trace)

    # -- event plumbing ---------------------------------------------------

    def _push(self, at: int, kind: EventKind, node: str, port: int, data) -> None:
        heapq.heappush(self._heap, (at, kind, node, port, next(self._ordinal), data))

    def _poll(self, node: str, port: int, at: int) -> None:
        key = (node, port, at)
        if key not in self._polls:
            self._polls.add(key)
            self._push(at, EventKind.TX_START, node, port, None)

    def _record(self, node: str, port: int, event: str, pkt: Optional[Packet] = None, reason: str = "") -> None:
        self.trace.append(
            TraceRecord(
                self.clock,
                node,
                port,
                event,
                None if pkt is None else pkt.vlid,
                None if pkt is None else pkt.seq,
                reason,
            )
        )

    def _drop(self, node: str, port: int, pkt: Packet, reason: DropReason) -> None:
        self.vl_stats[pkt.vlid].dropped[reason.value] += 1
        self._record(node, port, "drop", pkt, reason.value)
        log.debug("cycle %d: %s:%d dropped VL %d seq %d (%s)", self.clock, node, port, pkt.vlid, pkt.seq, reason.value)

    # -- handlers ---------------------------------------------------------

    def _on_injection(self, es_id: str, port: int, data) -> None:
        vlid, payload, udp_port = data
        es = self.end_systems[es_id]
        stats = self.vl_stats[vlid]
        stats.submitted += 1
        try:
            frame = es.submit_message(udp_port, payload, vlid)
        except OversizeMessage:
            stats.rejected_oversize += 1
            self.trace.append(TraceRecord(self.clock, es_id, 0, "reject", vlid, None, ""))
            return
        pkt = Packet(next(self._uid), vlid, frame.seq, es_id, self.clock)
        self._meta[(es_id, vlid)].append(pkt)
        self._record(es_id, 0, "inject", pkt)
        self._poll(es_id, 0, self.clock)

    def _on_tx_start(self, node: str, port: int, _data) -> None:
        now = self.clock
        self._polls.discard((node, port, now))
        ch = self.channels.get((node, port))
        if ch is None or ch.busy_until > now:
            return
        if node in self.end_systems:
            es = self.end_systems[node]
            picked = es.schedule(now)
            if picked is None:
                wake = es.next_ready(now)
                if wake is not None:
                    self._poll(node, port, wake)
                return
            vlid, wire = picked
            pkt = self._meta[(node, vlid)].popleft()
            stats = self.vl_stats[vlid]
            stats.sent += 1
            stats.copies_created += 1
            stats.max_wire_bytes = max(stats.max_wire_bytes, len(wire))
        else:
            buf = self.switches[node].tx_buffers[port]
            if not buf:
                return
            # the frame leaves local storage when it moves onto the port
            wire, pkt = buf.pop()
        wire = self._apply_fault(node, port, wire)
        duration = len(wire) * self.cpb
        ch.busy_until = now + duration
        ch.busy_total += duration
        ch.in_flight = (wire, pkt)
        self._record(node, port, "tx_start", pkt)
        self._push(ch.busy_until, EventKind.TX_COMPLETE, node, port, None)
        self._push(ch.busy_until, EventKind.FRAME_FULLY_RECEIVED, ch.dst, ch.dst_port, (wire, pkt))

    def _apply_fault(self, node: str, port: int, wire: bytes) -> bytes:
        pending = self._faults.get((node, port))
        if not pending or pending[0].at > self.clock:
            return wire
        f = pending.pop(0)
        if f.byte >= len(wire):
            self.faults_missed += 1
            log.warning("fault on link %d at cycle %d misses a %d-byte frame", f.link, f.at, len(wire))
            return wire
        self.faults_applied += 1
        buf = bytearray(wire)
        buf[f.byte] ^= 1 << f.bit
        return bytes(buf)

    def _on_tx_complete(self, node: str, port: int, _data) -> None:
        ch = self.channels[(node, port)]
        _, pkt = ch.in_flight
        ch.in_flight = None
        self._record(node, port, "tx_complete", pkt)
        self._poll(node, port, self.clock)

    def _on_rx(self, node: str, port: int, data) -> None:
        wire, pkt = data
        self._record(node, port, "rx_complete", pkt)
        if node in self.end_systems:
            delivery = self.end_systems[node].receive_frame(wire, self.clock)
            stats = self.vl_stats[pkt.vlid]
            stats.delivered += 1
            stats.latencies.append(self.clock - pkt.injected_at)
            if delivery.verdict is Verdict.SKIP:
                stats.skip += delivery.gap
            elif delivery.verdict is Verdict.DUPLICATE:
                stats.duplicate += 1
            elif delivery.verdict is Verdict.RESET:
                stats.reset_seen += 1
            self.deliveries.append((node, pkt, self.clock))
            self._record(node, port, "deliver", pkt, "")
            return

        sw = self.switches[node]
        # test unit: a stream with no preamble+SFD is still stored; the
        # controller rejects it at the length stage
        if detect_frame_start(wire[:PREAMBLE_SFD_LEN]) is None:
            log.debug("cycle %d: %s:%d no frame start detected", self.clock, node, port)
        if not sw.store_rx(port, wire, pkt):
            self._drop(node, port, pkt, DropReason.BUFFER_OVERFLOW)
            return
        if sw.controllers[port] is ControllerState.IDLE:
            sw.controllers[port] = ControllerState.CHECK_LENGTH
            self._push(self.clock + sw.config.processing_delay, EventKind.FORWARD, node, port, None)

    def _on_forward(self, node: str, port: int, _data) -> None:
        sw = self.switches[node]
        wire, pkt, decision = sw.decide(port)
        if isinstance(decision, Drop):
            self._drop(node, port, pkt, decision.reason)
        else:
            ports = sorted(decision.ports)
            self.vl_stats[pkt.vlid].copies_created += len(ports) - 1
            for p in ports:
                if sw.enqueue_tx(wire, p, pkt):
                    self._record(node, p, "forward", pkt)
                    self._poll(node, p, self.clock)
                else:
                    self._drop(node, p, pkt, DropReason.BUFFER_OVERFLOW)
        if sw.rx_buffers[port]:
            self._push(self.clock + sw.config.processing_delay, EventKind.FORWARD, node, port, None)
        else:
            sw.controllers[port] = ControllerState.IDLE

    def _on_sample(self, _node: str, _port: int, _data) -> None:
        self.samples.append(
            {
                "cycle": self.clock,
                "occupancy": {
                    name: {
                        "rx": [b.occupancy for b in sw.rx_buffers],
                        "tx": [b.occupancy for b in sw.tx_buffers],
                    }
                    for name, sw in sorted(self.switches.items())
                },
            }
        )
        self._push(self.clock + self.stats_interval, EventKind.STATS_SAMPLE, "", 0, None)

    # -- reporting --------------------------------------------------------

    def in_flight(self) -> Counter:
        """Frame copies per VL currently held in switch buffers or on a wire."""
        held: Counter = Counter()
        for sw in self.switches.values():
            for buf in sw.rx_buffers + sw.tx_buffers:
                for _, pkt in buf.fifo:
                    held[pkt.vlid] += 1
        for ch in self.channels.values():
            if ch.in_flight is not None:
                held[ch.in_flight[1].vlid] += 1
        return held

    def report(self) -> StatsReport:
        held = self.in_flight()
        vls = {}
        for vlid, s in sorted(self.vl_stats.items()):
            lat = s.latencies
            vls[str(vlid)] = {
                "submitted": s.submitted,
                "rejected_oversize": s.rejected_oversize,
                "sent": s.sent,
                "copies_created": s.copies_created,
                "delivered": s.delivered,
                "dropped": {r.value: s.dropped.get(r.value, 0) for r in DropReason},
                "in_flight": held.get(vlid, 0),
                "latency": {
                    "min": min(lat) if lat else None,
                    "mean": sum(lat) / len(lat) if lat else None,
                    "max": max(lat) if lat else None,
                },
                "skip": s.skip,
                "duplicate": s.duplicate,
                "reset_seen": s.reset_seen,
                "max_wire_bytes": s.max_wire_bytes,
            }
        switches = {
            name: {
                "forwarded_copies": sw.forwarded,
                "drops": {r.value: sw.drops.get(r, 0) for r in DropReason},
                "peak_occupancy": sw.peak_occupancy(),
            }
            for name, sw in sorted(self.switches.items())
        }
        elapsed = max(self.clock, 1)
        links = {}
        for ch in sorted(self.channels.values(), key=lambda c: c.name):
            busy = ch.busy_total - max(0, ch.busy_until - self.clock)
            links[ch.name] = {"busy_cycles": busy, "utilization": busy / elapsed}
        return StatsReport(
            cycles=self.clock,
            virtual_links=vls,
            switches=switches,
            links=links,
            faults={"applied": self.faults_applied, "missed": self.faults_missed},
            samples=list(self.samples),
        )


def build(topology: Topology, vls: Iterable[VirtualLink], faults: Iterable[BitFlip] = (), **kw) -> Simulation:
    return Simulation(topology, vls, faults, **kw)
