import random

import pytest

from afdxnoc import frame as fr
from afdxnoc.checks import run_checks
from afdxnoc.errors import InvalidTopology, PastCycle, UnknownVl
from afdxnoc.simnet import BitFlip, LinkSpec, NodeKind, NodeSpec, Simulation, Topology, format_trace, parse_trace
from afdxnoc.switch import AddressTable, SwitchConfig

from netutil import events, point_to_point, star, vl


class TestBuild:
    def test_minimal_shape(self):
        sim = point_to_point()
        assert sim.clock == 0
        assert set(sim.end_systems) == {"es0", "es1"} and set(sim.switches) == {"sw"}

    def test_port_out_of_range(self):
        topo = star(4, {5: {1}})
        topo.links.append(LinkSpec("sw", 9, "es0", 0))
        with pytest.raises(InvalidTopology, match="port 9"):
            Simulation(topo, [])

    def test_unreachable_destination(self):
        topo = star(3, {5: {1}})
        with pytest.raises(InvalidTopology, match="es2"):
            Simulation(topo, [vl(5, "es0", ["es1", "es2"])])

    def test_missing_table_entry_unreachable(self):
        with pytest.raises(InvalidTopology):
            Simulation(star(2, {}), [vl(5, "es0", ["es1"])])

    def test_port_reuse(self):
        topo = star(2, {5: {1}})
        topo.links.append(LinkSpec("es0", 0, "sw", 1))
        with pytest.raises(InvalidTopology, match="reuses"):
            Simulation(topo, [])

    def test_es_to_es_link_rejected(self):
        nodes = [NodeSpec("a", NodeKind.END_SYSTEM), NodeSpec("b", NodeKind.END_SYSTEM)]
        with pytest.raises(InvalidTopology):
            Simulation(Topology(nodes, [LinkSpec("a", 0, "b", 0)]), [])

    def test_forwarding_loop(self):
        # s1 sends VL 5 to es_b and to s2; s2 sends it straight back to s1
        s1 = SwitchConfig(3, AddressTable.from_mapping(3, {5: {1, 2}}))
        s2 = SwitchConfig(1, AddressTable.from_mapping(1, {5: {0}}))
        nodes = [
            NodeSpec("es", NodeKind.END_SYSTEM),
            NodeSpec("es_b", NodeKind.END_SYSTEM),
            NodeSpec("s1", NodeKind.SWITCH, switch=s1),
            NodeSpec("s2", NodeKind.SWITCH, switch=s2),
        ]
        links = [LinkSpec("es", 0, "s1", 0), LinkSpec("s1", 1, "s2", 0), LinkSpec("s1", 2, "es_b", 0)]
        with pytest.raises(InvalidTopology, match="more than once"):
            Simulation(Topology(nodes, links), [vl(5, "es", ["es_b"])])

    def test_vl_source_must_be_end_system(self):
        with pytest.raises(InvalidTopology):
            Simulation(star(2, {5: {1}}), [vl(5, "sw", ["es1"])])


class TestInject:
    def test_scheduled(self):
        sim = point_to_point()
        sim.inject(0, "es0", 5, b"x")
        assert len(sim._heap) == 1

    def test_wrong_owner(self):
        with pytest.raises(UnknownVl):
            point_to_point().inject(0, "es1", 5, b"x")

    def test_past_cycle(self):
        sim = point_to_point()
        sim.run(10)
        with pytest.raises(PastCycle):
            sim.inject(5, "es0", 5, b"x")


class TestRun:
    def test_vacuous(self):
        report, trace = point_to_point().run(1000)
        s = report.virtual_links["5"]
        assert trace == []
        assert s["sent"] == s["delivered"] == s["copies_created"] == 0
        assert all(v == 0 for v in s["dropped"].values())
        assert all(l["busy_cycles"] == 0 for l in report.links.values())

    def test_single_frame_hand_stepped(self):
        # 72-byte frame, P = 4: wire busy 0..72, switch decides at 76,
        # second hop busy 76..148, delivered at 148 = 2*72 + 4.
        sim = point_to_point(processing_delay=4)
        sim.inject(0, "es0", 5, bytes(17))
        report, trace = sim.run(1000)
        got = [(r.cycle, r.node, r.port, r.event) for r in trace]
        assert got == [
            (0, "es0", 0, "inject"),
            (0, "es0", 0, "tx_start"),
            (72, "sw", 0, "rx_complete"),
            (72, "es0", 0, "tx_complete"),
            (76, "sw", 1, "forward"),
            (76, "sw", 1, "tx_start"),
            (148, "es1", 0, "rx_complete"),
            (148, "es1", 0, "deliver"),
            (148, "sw", 1, "tx_complete"),
        ]
        assert report.virtual_links["5"]["latency"] == {"min": 148, "mean": 148.0, "max": 148}

    def test_slower_links_scale_latency(self):
        topo = star(2, {5: {1}}, cycles_per_byte=3)
        sim = Simulation(topo, [vl(5, "es0", ["es1"])])
        sim.inject(10, "es0", 5, bytes(17))
        report, _ = sim.run(2000)
        assert report.virtual_links["5"]["latency"]["min"] == 2 * 72 * 3 + 4

    def test_bag_in_trace(self):
        sim = point_to_point(bag=300)
        sim.inject(0, "es0", 5, b"a")
        sim.inject(0, "es0", 5, b"b")
        _, trace = sim.run(2000)
        starts = [r.cycle for r in events(trace, "tx_start", "es0")]
        assert starts == [0, 300]

    def test_oversize_rejected_at_source(self):
        sim = point_to_point(lmax=100)
        sim.inject(0, "es0", 5, bytes(60))
        report, trace = sim.run(100)
        assert report.virtual_links["5"]["rejected_oversize"] == 1
        assert report.virtual_links["5"]["sent"] == 0
        assert [r.event for r in trace] == ["reject"]

    def test_resume(self):
        a = point_to_point()
        a.inject(0, "es0", 5, b"x")
        a.inject(500, "es0", 5, b"y")
        a.run(100)
        _, trace_a = a.run(2000)
        b = point_to_point()
        b.inject(0, "es0", 5, b"x")
        b.inject(500, "es0", 5, b"y")
        _, trace_b = b.run(2000)
        assert trace_a == trace_b

    def test_fault_gives_bad_fcs(self):
        sim = point_to_point(faults=[BitFlip(at=0, link=0, from_node="es0", byte=40, bit=3)])
        for k in range(3):
            sim.inject(k * 200, "es0", 5, b"abc")
        report, trace = sim.run(2000)
        drops = events(trace, "drop")
        assert [(d.seq, d.drop_reason) for d in drops] == [(0, "BadFcs")]
        assert report.virtual_links["5"]["delivered"] == 2
        assert report.faults == {"applied": 1, "missed": 0}

    def test_fault_beyond_frame_is_missed(self):
        sim = point_to_point(faults=[BitFlip(at=0, link=0, from_node="es0", byte=500, bit=0)])
        sim.inject(0, "es0", 5, b"abc")
        report, _ = sim.run(500)
        assert report.faults == {"applied": 0, "missed": 1}
        assert report.virtual_links["5"]["delivered"] == 1

    def test_fault_sender_must_be_on_link(self):
        with pytest.raises(InvalidTopology):
            point_to_point(faults=[BitFlip(at=0, link=0, from_node="es1", byte=40, bit=3)])

    def test_tx_overflow_drop_newest(self):
        # three sources burst max frames at one output port
        topo = star(4, {1: {3}, 2: {3}, 3: {3}})
        vls = [vl(v, f"es{v - 1}", ["es3"]) for v in (1, 2, 3)]
        sim = Simulation(topo, vls)
        for v in (1, 2, 3):
            sim.inject(0, f"es{v - 1}", v, bytes(fr.MAX_PAYLOAD))
        report, trace = sim.run(10000)
        drops = events(trace, "drop")
        # all three are decided in the same cycle, ahead of any TX start, so
        # the lowest RX port claims the buffer and the other two overflow
        assert [(d.cycle, d.vlid, d.drop_reason) for d in drops] == [
            (1530, 2, "BufferOverflow"),
            (1530, 3, "BufferOverflow"),
        ]
        assert report.switches["sw"]["drops"]["BufferOverflow"] == 2
        assert report.virtual_links["1"]["delivered"] == 1
        assert all(p <= 1600 for p in report.switches["sw"]["peak_occupancy"]["tx"])

    def test_stats_samples(self):
        sim = Simulation(star(2, {5: {1}}), [vl(5, "es0", ["es1"])], stats_interval=50)
        sim.inject(0, "es0", 5, bytes(17))
        report, _ = sim.run(200)
        assert [s["cycle"] for s in report.samples] == [50, 100, 150, 200]
        assert report.samples[0]["occupancy"]["sw"]["rx"] == [0, 0]
        assert report.samples[1]["occupancy"]["sw"]["tx"] == [0, 0]

    def test_utilization_bounds(self):
        sim = point_to_point()
        for k in range(20):
            sim.inject(k, "es0", 5, bytes(100))
        report, trace = sim.run(1000)
        for l in report.links.values():
            assert 0 <= l["utilization"] <= 1
        assert report.links["es0:0->sw:0"]["utilization"] == 1.0
        assert run_checks(sim, report, trace) == []


def test_trace_round_trip():
    sim = point_to_point()
    sim.inject(0, "es0", 5, b"x")
    _, trace = sim.run(500)
    text = format_trace(trace)
    assert text.splitlines()[0] == "cycle,node,port,event,vlid,seq,drop_reason"
    assert parse_trace(text) == trace


def test_conservation_under_load():
    rng = random.Random(8)
    topo = star(4, {1: {1, 2, 3}, 2: {0}, 3: {0, 1}})
    vls = [vl(1, "es0", ["es1", "es2", "es3"], bag=50), vl(2, "es1", ["es0"], bag=20), vl(3, "es2", ["es0", "es1"], bag=30)]
    sim = Simulation(topo, vls)
    srcs = {1: "es0", 2: "es1", 3: "es2"}
    for _ in range(400):
        v = rng.choice([1, 2, 3])
        sim.inject(rng.randrange(20000), srcs[v], v, rng.randbytes(rng.randrange(1200)))
    for until in (5000, 12345, 30000):
        report, trace = sim.run(until)
        assert run_checks(sim, report, trace) == []
    total_overflow = sum(s["dropped"]["BufferOverflow"] for s in report.virtual_links.values())
    assert total_overflow > 0  # the workload is meant to saturate
