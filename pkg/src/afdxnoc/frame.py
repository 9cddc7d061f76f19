"""AFDX-lite frame codec.

Wire image (all multi-byte fields big-endian)::

    preamble 0x55 x7 | SFD 0xD5 | dst MAC (6) | src MAC (6) | EtherType (2)
    | IPv4 header (20) | UDP header (8) | payload | zero pad | seq (1) | FCS (4)

The FCS covers dst MAC through the seq byte. The destination MAC embeds the
virtual link id behind a fixed 03:00:00:00 prefix and the source MAC embeds the
End System id behind 02:00:00:00.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import MalformedFrame, OversizeMessage

PREAMBLE = b"\x55" * 7
SFD = 0xD5
PREAMBLE_SFD = PREAMBLE + bytes([SFD])
PREAMBLE_SFD_LEN = len(PREAMBLE_SFD)

DST_MAC_PREFIX = b"\x03\x00\x00\x00"
SRC_MAC_PREFIX = b"\x02\x00\x00\x00"
ETHERTYPE_IPV4 = 0x0800

ETH_HEADER_LEN = 14
IP_HEADER_LEN = 20
UDP_HEADER_LEN = 8
SEQ_LEN = 1
FCS_LEN = 4

MIN_FRAME_LEN = 64
MAX_FRAME_LEN = 1518
MAX_WIRE_LEN = MAX_FRAME_LEN + PREAMBLE_SFD_LEN

# Ethernet-level bytes that are not application payload.
FRAME_OVERHEAD = ETH_HEADER_LEN + IP_HEADER_LEN + UDP_HEADER_LEN + SEQ_LEN + FCS_LEN
MAX_PAYLOAD = MAX_FRAME_LEN - FRAME_OVERHEAD

_PAYLOAD_OFFSET = PREAMBLE_SFD_LEN + ETH_HEADER_LEN + IP_HEADER_LEN + UDP_HEADER_LEN

_IP_TTL = 1
_IP_PROTO_UDP = 17


def _make_crc_table() -> list[int]:
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ 0xEDB88320 if c & 1 else c >> 1
        table.append(c)
    return table


_CRC_TABLE = _make_crc_table()


def crc32(data: bytes) -> int:
    """IEEE 802.3 CRC-32 (reflected, init and final XOR all-ones)."""
    crc = 0xFFFFFFFF
    table = _CRC_TABLE
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def ip_header_checksum(header: bytes) -> int:
    """One's-complement Internet checksum of a 20-byte IPv4 header.

    The sum runs over the bytes as given: callers computing a fresh checksum
    pass the header with its checksum field zeroed, and a header that already
    carries a correct checksum sums to 0.
    """
    if len(header) != IP_HEADER_LEN:
        raise ValueError(f"IPv4 header must be {IP_HEADER_LEN} bytes, got {len(header)}")
    total = sum(struct.unpack("!10H", header))
    total = (total & 0xFFFF) + (total >> 16)
    total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def next_seq(current: int) -> int:
    """Per-VL sequence successor: 0..254 increment, 255 wraps to 1 (0 is reset-only)."""
    if not 0 <= current <= 255:
        raise ValueError(f"sequence number out of range: {current}")
    return 1 if current == 255 else current + 1


def _ip_addr(ident: int) -> bytes:
    return bytes([10, 0, ident >> 8, ident & 0xFF])


@dataclass(frozen=True)
class Frame:
    """Logical content of one AFDX-lite frame."""

    vlid: int
    src_es: int
    payload: bytes = b""
    seq: int = 0
    udp_src_port: int = 0
    udp_dst_port: int = 0

    def __post_init__(self):
        for name in ("vlid", "src_es", "udp_src_port", "udp_dst_port"):
            value = getattr(self, name)
            if not 0 <= value <= 0xFFFF:
                raise ValueError(f"{name} must fit in 16 bits, got {value}")
        if not 0 <= self.seq <= 255:
            raise ValueError(f"seq must fit in 8 bits, got {self.seq}")
        object.__setattr__(self, "payload", bytes(self.payload))


def frame_length(payload_len: int) -> int:
    """Ethernet-level length (no preamble/SFD) for a payload of ``payload_len`` bytes."""
    return max(MIN_FRAME_LEN, payload_len + FRAME_OVERHEAD)


def encode(frame: Frame) -> bytes:
    plen = len(frame.payload)
    if plen > MAX_PAYLOAD:
        raise OversizeMessage(
            f"payload of {plen} bytes exceeds the {MAX_PAYLOAD}-byte limit of a {MAX_FRAME_LEN}-byte frame"
        )
    pad = frame_length(plen) - plen - FRAME_OVERHEAD

    ip = bytearray(
        struct.pack(
            "!BBHHHBBH4s4s",
            0x45,
            0,
            IP_HEADER_LEN + UDP_HEADER_LEN + plen,
            0,
            0,
            _IP_TTL,
            _IP_PROTO_UDP,
            0,
            _ip_addr(frame.src_es),
            _ip_addr(frame.vlid),
        )
    )
    ip[10:12] = struct.pack("!H", ip_header_checksum(bytes(ip)))
    udp = struct.pack("!HHHH", frame.udp_src_port, frame.udp_dst_port, UDP_HEADER_LEN + plen, 0)

    body = b"".join(
        (
            DST_MAC_PREFIX,
            struct.pack("!H", frame.vlid),
            SRC_MAC_PREFIX,
            struct.pack("!H", frame.src_es),
            struct.pack("!H", ETHERTYPE_IPV4),
            bytes(ip),
            udp,
            frame.payload,
            bytes(pad),
            bytes([frame.seq]),
        )
    )
    return PREAMBLE_SFD + body + struct.pack("!I", crc32(body))


def decode(wire: bytes) -> Frame:
    """Recover the logical frame from a wire image. The FCS is not checked."""
    wire = bytes(wire)
    if wire[:7] != PREAMBLE:
        raise MalformedFrame("missing 7-byte preamble")
    if len(wire) < 8 or wire[7] != SFD:
        raise MalformedFrame("start frame delimiter is not 0xD5")
    if len(wire) - PREAMBLE_SFD_LEN < MIN_FRAME_LEN:
        raise MalformedFrame(
            f"only {len(wire) - PREAMBLE_SFD_LEN} bytes after SFD, need at least {MIN_FRAME_LEN}"
        )
    eth = wire[PREAMBLE_SFD_LEN:]
    if eth[0:4] != DST_MAC_PREFIX or eth[6:10] != SRC_MAC_PREFIX:
        raise MalformedFrame("MAC address prefix mismatch")
    (vlid,) = struct.unpack_from("!H", eth, 4)
    (src_es,) = struct.unpack_from("!H", eth, 10)
    (ethertype,) = struct.unpack_from("!H", eth, 12)
    if ethertype != ETHERTYPE_IPV4:
        raise MalformedFrame(f"unexpected EtherType 0x{ethertype:04x}")

    ver_ihl, _, ip_total, _, _, _, proto, _, _, _ = struct.unpack_from("!BBHHHBBH4s4s", eth, ETH_HEADER_LEN)
    if ver_ihl != 0x45 or proto != _IP_PROTO_UDP:
        raise MalformedFrame("not an option-free IPv4/UDP datagram")
    sport, dport, udp_len, _ = struct.unpack_from("!HHHH", eth, ETH_HEADER_LEN + IP_HEADER_LEN)
    plen = udp_len - UDP_HEADER_LEN
    if plen < 0 or ip_total != IP_HEADER_LEN + udp_len:
        raise MalformedFrame("inconsistent IPv4/UDP length fields")
    end = _PAYLOAD_OFFSET + plen
    if end > len(wire) - SEQ_LEN - FCS_LEN:
        raise MalformedFrame("UDP length runs past the sequence byte")

    return Frame(
        vlid=vlid,
        src_es=src_es,
        payload=wire[_PAYLOAD_OFFSET:end],
        seq=wire[-(SEQ_LEN + FCS_LEN)],
        udp_src_port=sport,
        udp_dst_port=dport,
    )


def fcs_span(wire: bytes) -> bytes:
    """Bytes covered by the FCS: dst MAC through the seq byte."""
    return wire[PREAMBLE_SFD_LEN:-FCS_LEN]


def wire_vlid(wire: bytes) -> int:
    """Destination VLID as read straight from the dst MAC field."""
    return (wire[PREAMBLE_SFD_LEN + 4] << 8) | wire[PREAMBLE_SFD_LEN + 5]
