#!/usr/bin/env python3
"""Writes the classic-PCAP fixtures used by the parser tests.

Frames are assembled field by field from the RFC 791 / 793 / 768 layouts so
the fixtures do not depend on the Rust code under test. Re-run from this
directory to regenerate: python3 make_fixtures.py
"""
import struct

ETH_SRC = bytes.fromhex("020000000001")
ETH_DST = bytes.fromhex("020000000002")


def ip_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def ethernet(ethertype: int, body: bytes, pad_to: int = 0) -> bytes:
    frame = ETH_DST + ETH_SRC + struct.pack("!H", ethertype) + body
    if len(frame) < pad_to:
        frame += b"\x00" * (pad_to - len(frame))
    return frame


def ipv4(proto: int, src: str, dst: str, body: bytes, frag_off: int = 0,
         options: bytes = b"") -> bytes:
    ihl = 5 + len(options) // 4
    total_len = ihl * 4 + len(body)
    hdr = struct.pack(
        "!BBHHHBBH4s4s",
        (4 << 4) | ihl, 0, total_len, 0x1234, frag_off, 64, proto, 0,
        bytes(int(x) for x in src.split(".")),
        bytes(int(x) for x in dst.split(".")),
    ) + options
    csum = ip_checksum(hdr)
    hdr = hdr[:10] + struct.pack("!H", csum) + hdr[12:]
    return hdr + body


def tcp(sport: int, dport: int, payload: bytes, options: bytes = b"",
        flags: int = 0x18) -> bytes:
    data_offset = 5 + len(options) // 4
    hdr = struct.pack("!HHIIBBHHH", sport, dport, 1000, 2000,
                      data_offset << 4, flags, 65535, 0, 0) + options
    return hdr + payload


def udp(sport: int, dport: int, payload: bytes) -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def icmp_echo(payload: bytes) -> bytes:
    return struct.pack("!BBHHH", 8, 0, 0, 1, 1) + payload


def write_pcap(path: str, records, big_endian: bool = False) -> None:
    e = ">" if big_endian else "<"
    with open(path, "wb") as f:
        f.write(struct.pack(e + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
        for ts_sec, ts_usec, frame in records:
            f.write(struct.pack(e + "IIII", ts_sec, ts_usec, len(frame), len(frame)))
            f.write(frame)


def main() -> None:
    a, b = "10.0.0.1", "10.0.0.2"

    # Global header only.
    write_pcap("empty.pcap", [])

    # One 60-byte TCP frame (54 header bytes + 6 payload bytes).
    one = ethernet(0x0800, ipv4(6, a, b, tcp(40000, 80, b"ABCDEF")))
    assert len(one) == 60
    write_pcap("one_record_le.pcap", [(1_500_000_000, 250_000, one)])
    write_pcap("one_record_be.pcap", [(1_500_000_000, 250_000, one)], big_endian=True)

    # 3 TCP payload packets, 2 ACK-only, 1 ICMP.
    mixed = [
        (100, 0, ethernet(0x0800, ipv4(6, a, b, tcp(40000, 80, b"ABC")))),
        (101, 0, ethernet(0x0800, ipv4(6, b, a, tcp(80, 40000, b"", flags=0x10)), pad_to=60)),
        (102, 0, ethernet(0x0800, ipv4(6, a, b, tcp(40000, 80, b"GET / HTTP/1.1\r\n")))),
        (103, 0, ethernet(0x0800, ipv4(1, a, b, icmp_echo(b"ping-data")))),
        (104, 0, ethernet(0x0800, ipv4(6, b, a, tcp(80, 40000, b"", flags=0x10)), pad_to=60)),
        (105, 500, ethernet(0x0800, ipv4(6, b, a, tcp(80, 40000, bytes(range(200)))))),
    ]
    write_pcap("mixed.pcap", mixed)

    # Edge cases: UDP, padded short UDP, TCP options + IP options, IPv6, fragment.
    ipv6 = ethernet(0x86DD, b"\x60" + b"\x00" * 39 + b"payload")
    edge = [
        (200, 0, ethernet(0x0800, ipv4(17, "192.168.1.10", "8.8.8.8", udp(5353, 53, b"\x12\x34query")))),
        (201, 0, ethernet(0x0800, ipv4(17, a, b, udp(1000, 2000, b"xy")), pad_to=60)),
        (202, 0, ethernet(0x0800, ipv4(6, a, b,
                                       tcp(1234, 443, b"opt-payload", options=b"\x02\x04\x05\xb4\x01\x01\x04\x02"),
                                       options=b"\x01\x01\x01\x00"))),
        (203, 0, ipv6),
        (204, 0, ethernet(0x0800, ipv4(17, a, b, udp(1, 2, b"fragment-tail"), frag_off=0x0010))),
    ]
    write_pcap("edge.pcap", edge)


if __name__ == "__main__":
    main()
