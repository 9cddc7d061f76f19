"""Deterministic simulator of an AFDX-derived Network-on-Chip."""

from .endsystem import EndSystem, VirtualLink
from .errors import AfdxNocError, InvalidTopology, MalformedFrame, OversizeMessage, PastCycle, UnknownVl
from .frame import Frame, crc32, decode, encode, next_seq
from .simnet import Simulation, build
from .switch import AddressTable, DropReason, Switch, SwitchConfig, process_frame

__version__ = "0.1.0"
