"""Small builders for simulation tests."""

from afdxnoc.endsystem import VirtualLink
from afdxnoc.simnet import LinkSpec, NodeKind, NodeSpec, Simulation, Topology
from afdxnoc.switch import AddressTable, SwitchConfig


def star(n_es=2, table=None, processing_delay=4, broadcast=False, excludes_ingress=False, cycles_per_byte=1):
    """``n_es`` End Systems es0..es{n-1}, es{i} on port i of switch ``sw``."""
    cfg = SwitchConfig(
        n_es,
        AddressTable.from_mapping(n_es, table or {}),
        broadcast=broadcast,
        broadcast_excludes_ingress=excludes_ingress,
        processing_delay=processing_delay,
    )
    nodes = [NodeSpec(f"es{i}", NodeKind.END_SYSTEM) for i in range(n_es)]
    nodes.append(NodeSpec("sw", NodeKind.SWITCH, switch=cfg))
    links = [LinkSpec(f"es{i}", 0, "sw", i) for i in range(n_es)]
    return Topology(nodes, links, cycles_per_byte)


def vl(vlid, src, dests, bag=1, lmax=1518, priority=0):
    return VirtualLink(vlid, bag, lmax, src, frozenset(dests), priority)


def point_to_point(processing_delay=4, bag=1, faults=(), lmax=1518):
    """es0 -> sw -> es1 on VL 5."""
    topo = star(2, {5: {1}}, processing_delay=processing_delay)
    return Simulation(topo, [vl(5, "es0", ["es1"], bag=bag, lmax=lmax)], faults)


def events(trace, kind, node=None):
    return [r for r in trace if r.event == kind and (node is None or r.node == node)]
