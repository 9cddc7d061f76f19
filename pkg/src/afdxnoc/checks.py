"""Invariant suite run over a finished simulation (``run --check``)."""

from __future__ import annotations

from collections import defaultdict

from .frame import MIN_FRAME_LEN, PREAMBLE_SFD_LEN
from .simnet import Simulation, StatsReport, TraceRecord
from .switch import PORT_BUFFER_BYTES


def bag_violations(trace: list[TraceRecord], sim: Simulation) -> list[str]:
    last: dict[int, int] = {}
    out = []
    for r in trace:
        if r.event != "tx_start" or r.node not in sim.end_systems:
            continue
        bag = sim.vls[r.vlid].bag_cycles
        prev = last.get(r.vlid)
        if prev is not None and r.cycle - prev < bag:
            out.append(f"BAG: VL {r.vlid} emitted at {prev} and {r.cycle}, gap below {bag}")
        last[r.vlid] = r.cycle
    return out


def link_violations(trace: list[TraceRecord], report: StatsReport) -> list[str]:
    out = []
    busy: dict[tuple[str, int], bool] = defaultdict(bool)
    for r in trace:
        key = (r.node, r.port)
        if r.event == "tx_start":
            if busy[key]:
                out.append(f"link: {r.node}:{r.port} started a frame at {r.cycle} while still transmitting")
            busy[key] = True
        elif r.event == "tx_complete":
            busy[key] = False
    for name, s in report.links.items():
        if not 0.0 <= s["utilization"] <= 1.0:
            out.append(f"link: {name} utilization {s['utilization']} outside [0, 1]")
    return out


def conservation_violations(report: StatsReport) -> list[str]:
    out = []
    for vlid, s in report.virtual_links.items():
        accounted = s["delivered"] + sum(s["dropped"].values()) + s["in_flight"]
        if accounted != s["copies_created"]:
            out.append(
                f"conservation: VL {vlid} created {s['copies_created']} copies, "
                f"accounted {accounted} (delivered+dropped+in flight)"
            )
    return out


def causality_violations(sim: Simulation) -> list[str]:
    floor = (MIN_FRAME_LEN + PREAMBLE_SFD_LEN) * sim.cpb
    return [
        f"causality: VL {pkt.vlid} seq {pkt.seq} delivered to {node} {at - pkt.injected_at} cycles after injection"
        for node, pkt, at in sim.deliveries
        if at - pkt.injected_at < floor
    ]


def lmax_violations(sim: Simulation, report: StatsReport) -> list[str]:
    out = []
    for vlid, s in report.virtual_links.items():
        limit = sim.vls[int(vlid)].lmax_bytes + PREAMBLE_SFD_LEN
        if s["max_wire_bytes"] > limit:
            out.append(f"Lmax: VL {vlid} emitted a {s['max_wire_bytes']}-byte frame, limit {limit}")
    return out


def buffer_violations(report: StatsReport) -> list[str]:
    out = []
    for name, s in report.switches.items():
        for side in ("rx", "tx"):
            for port, peak in enumerate(s["peak_occupancy"][side]):
                if peak > PORT_BUFFER_BYTES:
                    out.append(f"buffer: {name} {side} port {port} peaked at {peak} bytes")
    return out


def sequence_violations(report: StatsReport) -> list[str]:
    """Skip counts must equal path losses; duplicates never occur on an in-order network."""
    out = []
    for vlid, s in report.virtual_links.items():
        if s["duplicate"]:
            out.append(f"sequence: VL {vlid} saw {s['duplicate']} duplicate(s)")
        lost = sum(s["dropped"].values())
        if s["skip"] > lost:
            out.append(f"sequence: VL {vlid} skip count {s['skip']} exceeds {lost} dropped copies")
    return out


def run_checks(sim: Simulation, report: StatsReport, trace: list[TraceRecord]) -> list[str]:
    return (
        bag_violations(trace, sim)
        + link_violations(trace, report)
        + conservation_violations(report)
        + causality_violations(sim)
        + lmax_violations(sim, report)
        + buffer_violations(report)
        + sequence_violations(report)
    )
