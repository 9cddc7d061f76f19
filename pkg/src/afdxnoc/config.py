"""Scenario configuration: YAML text -> validated ScenarioConfig -> Simulation."""

from __future__ import annotations

import random
from typing import Annotated, Literal, Optional, Union

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import frame as fr
from .endsystem import VirtualLink
from .errors import AfdxNocError, InvalidTopology
from .simnet import BitFlip, LinkSpec, NodeKind, NodeSpec, Simulation, Topology, validate
from .switch import DEFAULT_PROCESSING_DELAY, AddressTable, SwitchConfig


class ParseError(AfdxNocError):
    pass


class ValidationError(AfdxNocError):
    pass


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NodeModel(_Model):
    id: str
    kind: Literal["end_system", "switch"]
    es_number: Optional[int] = Field(default=None, ge=0, le=0xFFFF)
    ports: Optional[int] = Field(default=None, ge=1)
    broadcast: bool = False
    broadcast_excludes_ingress: bool = False
    processing_delay: int = Field(default=DEFAULT_PROCESSING_DELAY, ge=0)
    table: dict[int, list[int]] = Field(default_factory=dict)


class LinkModel(_Model):
    a: str
    a_port: int = Field(ge=0)
    b: str
    b_port: int = Field(ge=0)


class TopologyModel(_Model):
    nodes: list[NodeModel]
    links: list[LinkModel] = Field(default_factory=list)
    cycles_per_byte: int = Field(default=1, ge=1)


class VirtualLinkModel(_Model):
    vlid: int = Field(ge=0, le=0xFFFF)
    bag: int
    lmax: int
    priority: int = Field(default=0, ge=0)
    src: str
    dests: list[str] = Field(min_length=1)

    @field_validator("bag")
    @classmethod
    def _bag(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"bag_cycles must be >= 1, got {v}")
        return v

    @field_validator("lmax")
    @classmethod
    def _lmax(cls, v: int) -> int:
        if not fr.MIN_FRAME_LEN <= v <= fr.MAX_FRAME_LEN:
            raise ValueError(f"lmax_bytes must be in [{fr.MIN_FRAME_LEN}, {fr.MAX_FRAME_LEN}], got {v}")
        return v


class OnceTraffic(_Model):
    kind: Literal["once"]
    vl: int
    at: int = Field(ge=0)
    payload_size: Optional[int] = Field(default=None, ge=0)
    payload: Optional[str] = None  # hex
    port: int = Field(default=0, ge=0, le=0xFFFF)

    @field_validator("payload")
    @classmethod
    def _hex(cls, v):
        if v is not None:
            bytes.fromhex(v)
        return v


class PeriodicTraffic(_Model):
    kind: Literal["periodic"]
    vl: int
    start: int = Field(default=0, ge=0)
    period: int = Field(ge=1)
    payload_size: int = Field(ge=0)
    count: Optional[int] = Field(default=None, ge=0)
    port: int = Field(default=0, ge=0, le=0xFFFF)


class RandomTraffic(_Model):
    kind: Literal["random"]
    vl: int
    start: int = Field(default=0, ge=0)
    mean_gap: int = Field(ge=1)
    payload_min: int = Field(default=0, ge=0)
    payload_max: int = Field(ge=0)
    count: Optional[int] = Field(default=None, ge=0)
    port: int = Field(default=0, ge=0, le=0xFFFF)


Traffic = Annotated[Union[OnceTraffic, PeriodicTraffic, RandomTraffic], Field(discriminator="kind")]


class FaultModel(_Model):
    kind: Literal["bitflip"] = "bitflip"
    at: int = Field(ge=0)
    link: int = Field(ge=0)
    sender: str
    byte: int = Field(ge=fr.PREAMBLE_SFD_LEN)
    bit: int = Field(ge=0, le=7)


class RunModel(_Model):
    cycles: int = Field(default=10000, ge=0)
    seed: int = 0
    stats: Optional[str] = None
    trace: Optional[str] = None
    stats_interval: Optional[int] = Field(default=None, ge=1)


class ScenarioConfig(_Model):
    topology: TopologyModel
    virtual_links: list[VirtualLinkModel] = Field(default_factory=list)
    traffic: list[Traffic] = Field(default_factory=list)
    faults: list[FaultModel] = Field(default_factory=list)
    run: RunModel = Field(default_factory=RunModel)

    def to_text(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json", exclude_none=True), sort_keys=False)


def _loc(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def parse_config(text: str) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"YAML syntax error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError("config must be a mapping with topology / virtual_links / traffic / faults / run sections")
    try:
        cfg = ScenarioConfig.model_validate(raw)
    except pydantic.ValidationError as exc:
        err = exc.errors()[0]
        msg = err["msg"].removeprefix("Value error, ")
        raise ValidationError(f"{_loc(err['loc'])}: {msg}") from exc
    _resolve(cfg)
    return cfg


def _resolve(cfg: ScenarioConfig) -> None:
    nodes = {n.id: n for n in cfg.topology.nodes}
    for i, n in enumerate(cfg.topology.nodes):
        where = f"topology.nodes[{i}]"
        if n.kind == "switch" and n.ports is None:
            raise ValidationError(f"{where}.ports: switch {n.id!r} needs a port count")
        if n.kind == "end_system" and n.table:
            raise ValidationError(f"{where}.table: only switches carry address tables")
    for i, link in enumerate(cfg.topology.links):
        for end in ("a", "b"):
            if getattr(link, end) not in nodes:
                raise ValidationError(f"topology.links[{i}].{end}: unknown node {getattr(link, end)!r}")
    vls = {}
    for i, vl in enumerate(cfg.virtual_links):
        where = f"virtual_links[{i}]"
        if vl.vlid in vls:
            raise ValidationError(f"{where}.vlid: VL {vl.vlid} defined twice")
        vls[vl.vlid] = vl
        for key, who in [("src", vl.src)] + [("dests", d) for d in vl.dests]:
            node = nodes.get(who)
            if node is None:
                raise ValidationError(f"{where}.{key}: {who!r} is not in the topology")
            if node.kind != "end_system":
                raise ValidationError(f"{where}.{key}: {who!r} is not an End System")
    for i, t in enumerate(cfg.traffic):
        if t.vl not in vls:
            raise ValidationError(f"traffic[{i}].vl: VL {t.vl} is not defined")
        if isinstance(t, RandomTraffic) and t.payload_max < t.payload_min:
            raise ValidationError(f"traffic[{i}].payload_max: below payload_min")
        if isinstance(t, OnceTraffic) and (t.payload is None) == (t.payload_size is None):
            raise ValidationError(f"traffic[{i}]: give exactly one of payload or payload_size")
    for i, f in enumerate(cfg.faults):
        if f.link >= len(cfg.topology.links):
            raise ValidationError(f"faults[{i}].link: link {f.link} does not exist")
        link = cfg.topology.links[f.link]
        if f.sender not in (link.a, link.b):
            raise ValidationError(f"faults[{i}].sender: {f.sender!r} is not an endpoint of link {f.link}")
    try:
        topology = to_topology(cfg)
        validate(topology, to_virtual_links(cfg))
    except (ValueError, InvalidTopology) as exc:
        raise ValidationError(f"topology: {exc}") from exc


def to_topology(cfg: ScenarioConfig) -> Topology:
    nodes = []
    for n in cfg.topology.nodes:
        if n.kind == "switch":
            sw = SwitchConfig(
                port_count=n.ports,
                table=AddressTable.from_mapping(n.ports, n.table),
                broadcast=n.broadcast,
                broadcast_excludes_ingress=n.broadcast_excludes_ingress,
                processing_delay=n.processing_delay,
            )
            nodes.append(NodeSpec(n.id, NodeKind.SWITCH, switch=sw))
        else:
            nodes.append(NodeSpec(n.id, NodeKind.END_SYSTEM, es_number=n.es_number))
    links = [LinkSpec(l.a, l.a_port, l.b, l.b_port) for l in cfg.topology.links]
    return Topology(nodes, links, cfg.topology.cycles_per_byte)


def to_virtual_links(cfg: ScenarioConfig) -> list[VirtualLink]:
    return [
        VirtualLink(vl.vlid, vl.bag, vl.lmax, vl.src, frozenset(vl.dests), vl.priority)
        for vl in cfg.virtual_links
    ]


def expand_traffic(cfg: ScenarioConfig, seed: int, cycles: int) -> list[tuple[int, str, int, bytes, int]]:
    """All injections (at, es, vlid, payload, port) up to ``cycles``, in config order."""
    src = {vl.vlid: vl.src for vl in cfg.virtual_links}
    out = []
    for idx, t in enumerate(cfg.traffic):
        es = src[t.vl]
        if isinstance(t, OnceTraffic):
            if t.payload is not None:
                payload = bytes.fromhex(t.payload)
            else:
                payload = bytes(i & 0xFF for i in range(t.payload_size))
            out.append((t.at, es, t.vl, payload, t.port))
        elif isinstance(t, PeriodicTraffic):
            at, k = t.start, 0
            while at <= cycles and (t.count is None or k < t.count):
                payload = bytes((k + i) & 0xFF for i in range(t.payload_size))
                out.append((at, es, t.vl, payload, t.port))
                at += t.period
                k += 1
        else:
            rng = random.Random(seed * 1_000_003 + idx)
            at, k = t.start, 0
            while at <= cycles and (t.count is None or k < t.count):
                size = rng.randint(t.payload_min, t.payload_max)
                out.append((at, es, t.vl, rng.randbytes(size), t.port))
                at += max(1, round(rng.expovariate(1.0 / t.mean_gap)))
                k += 1
    return out


def build_simulation(cfg: ScenarioConfig, seed: Optional[int] = None, cycles: Optional[int] = None) -> Simulation:
    seed = cfg.run.seed if seed is None else seed
    cycles = cfg.run.cycles if cycles is None else cycles
    faults = [BitFlip(f.at, f.link, f.sender, f.byte, f.bit) for f in cfg.faults]
    sim = Simulation(to_topology(cfg), to_virtual_links(cfg), faults, stats_interval=cfg.run.stats_interval)
    for at, es, vlid, payload, port in expand_traffic(cfg, seed, cycles):
        sim.inject(at, es, vlid, payload, port)
    return sim
