"""Pcap decoding and bidirectional flow aggregation.

Packets are grouped under a canonical 5-tuple so both directions of a
conversation land in one record. The forward direction is whichever side
sent the first observed packet.
"""
import io
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .schema import FEATURE_NAMES, N_FEATURES, decode_ip

logger = logging.getLogger(__name__)

TCP = 6
UDP = 17

DEFAULT_ACTIVITY_TIMEOUT_US = 1_000_000
DEFAULT_IDLE_TIMEOUT_US = 120_000_000

_MAGIC_US = 0xA1B2C3D4
_MAGIC_NS = 0xA1B23C4D
_LINKTYPE_ETHERNET = 1
_ETH_IPV4 = 0x0800
_ETH_VLAN = 0x8100


class PcapFormatError(ValueError):
    """The capture does not start with a usable pcap global header."""


@dataclass(frozen=True)
class PacketEvent:
    timestamp_us: int
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int
    header_len_bytes: int
    payload_len_bytes: int
    tcp_flags: int = 0


@dataclass
class CaptureStats:
    packets: int = 0
    skipped: int = 0
    truncated: bool = False
    skip_reasons: Counter = field(default_factory=Counter)

    def skip(self, reason):
        self.skipped += 1
        self.skip_reasons[reason] += 1


def _open(source):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source))
    return source


def iter_pcap(source, stats=None):
    """Yield PacketEvents from a classic pcap stream in capture order.

    ``source`` is bytes or a binary file object. Frames that are not
    Ethernet/IPv4 carrying TCP or UDP are skipped and tallied in ``stats``.
    """
    if stats is None:
        stats = CaptureStats()
    fh = _open(source)
    header = fh.read(24)
    if len(header) < 24:
        raise PcapFormatError("capture shorter than the 24-byte pcap global header")
    for endian in ("<", ">"):
        (magic,) = struct.unpack(endian + "I", header[:4])
        if magic in (_MAGIC_US, _MAGIC_NS):
            break
    else:
        raise PcapFormatError(f"unrecognised pcap magic 0x{header[:4].hex()}")
    nanos = magic == _MAGIC_NS
    _, _, _, _, snaplen, linktype = struct.unpack(endian + "HHiIII", header[4:])
    if linktype & 0xFFFF != _LINKTYPE_ETHERNET:
        raise PcapFormatError(f"unsupported link type {linktype}; only Ethernet is handled")

    rec_fmt = struct.Struct(endian + "IIII")
    while True:
        rec = fh.read(16)
        if not rec:
            return
        if len(rec) < 16:
            stats.truncated = True
            logger.warning("truncated pcap record header after %d packets", stats.packets)
            return
        ts_sec, ts_frac, incl_len, _orig_len = rec_fmt.unpack(rec)
        if snaplen and incl_len > max(snaplen, 262144):
            stats.truncated = True
            logger.warning("record length %d exceeds snaplen %d; stopping", incl_len, snaplen)
            return
        frame = fh.read(incl_len)
        if len(frame) < incl_len:
            stats.truncated = True
            logger.warning("truncated pcap record body after %d packets", stats.packets)
            return
        ts_us = ts_sec * 1_000_000 + (ts_frac // 1000 if nanos else ts_frac)
        event = decode_frame(frame, ts_us, stats)
        if event is not None:
            stats.packets += 1
            yield event


def parse_pcap(source):
    """Decode a whole capture. Returns ``(events, stats)``."""
    stats = CaptureStats()
    events = list(iter_pcap(source, stats))
    return events, stats


def decode_frame(frame, ts_us, stats):
    if len(frame) < 14:
        stats.skip("short_frame")
        return None
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    off = 14
    if ethertype == _ETH_VLAN:
        if len(frame) < 18:
            stats.skip("short_frame")
            return None
        (ethertype,) = struct.unpack_from("!H", frame, 16)
        off = 18
    if ethertype != _ETH_IPV4:
        stats.skip("not_ipv4")
        return None
    if len(frame) < off + 20:
        stats.skip("short_ip_header")
        return None
    ver_ihl, _tos, total_len, _ident, frag, _ttl, proto, _csum, src, dst = struct.unpack_from(
        "!BBHHHBBHII", frame, off
    )
    if ver_ihl >> 4 != 4:
        stats.skip("bad_ip_version")
        return None
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(frame) < off + ihl:
        stats.skip("bad_ip_header")
        return None
    if frag & 0x1FFF:
        stats.skip("ip_fragment")
        return None
    if proto not in (TCP, UDP):
        stats.skip("not_tcp_udp")
        return None
    l4 = off + ihl
    if proto == TCP:
        if len(frame) < l4 + 20:
            stats.skip("short_transport_header")
            return None
        sport, dport = struct.unpack_from("!HH", frame, l4)
        thl = (frame[l4 + 12] >> 4) * 4
        flags = frame[l4 + 13]
        if thl < 20:
            stats.skip("bad_tcp_header")
            return None
    else:
        if len(frame) < l4 + 8:
            stats.skip("short_transport_header")
            return None
        sport, dport = struct.unpack_from("!HH", frame, l4)
        thl = 8
        flags = 0
    header_len = ihl + thl
    payload = total_len - header_len
    if payload < 0:
        stats.skip("bad_total_length")
        return None
    return PacketEvent(ts_us, src, dst, sport, dport, proto, header_len, payload, flags)


@dataclass(frozen=True, order=True)
class FlowKey:
    endpoint_a: tuple
    endpoint_b: tuple
    protocol: int

    @classmethod
    def of(cls, pkt):
        a = (pkt.src_ip, pkt.src_port)
        b = (pkt.dst_ip, pkt.dst_port)
        if b < a:
            a, b = b, a
        return cls(a, b, pkt.protocol)


@dataclass
class FlowRecord:
    key: FlowKey
    fwd_initiator: tuple
    fwd_responder: tuple
    first_ts_us: int
    last_ts_us: int
    last_fwd_ts_us: int
    pkt_count_fwd: int = 0
    payload_sum_fwd: int = 0
    header_sum_fwd: int = 0
    payload_min_fwd: int = 0
    payload_max_fwd: int = 0
    pkt_count_bwd: int = 0
    payload_sum_bwd: int = 0
    header_sum_bwd: int = 0
    payload_min_bwd: int = 0
    payload_max_bwd: int = 0
    fwd_iat_total_us: int = 0
    fwd_subflow_count: int = 1
    min_header_len_fwd: int = 0

    @classmethod
    def start(cls, pkt):
        rec = cls(
            key=FlowKey.of(pkt),
            fwd_initiator=(pkt.src_ip, pkt.src_port),
            fwd_responder=(pkt.dst_ip, pkt.dst_port),
            first_ts_us=pkt.timestamp_us,
            last_ts_us=pkt.timestamp_us,
            last_fwd_ts_us=pkt.timestamp_us,
            payload_min_fwd=pkt.payload_len_bytes,
            min_header_len_fwd=pkt.header_len_bytes,
        )
        return rec

    def add(self, pkt, activity_timeout_us=DEFAULT_ACTIVITY_TIMEOUT_US):
        n = pkt.payload_len_bytes
        if pkt.timestamp_us > self.last_ts_us:
            self.last_ts_us = pkt.timestamp_us
        if (pkt.src_ip, pkt.src_port) == self.fwd_initiator:
            if self.pkt_count_fwd:
                gap = max(pkt.timestamp_us - self.last_fwd_ts_us, 0)
                self.fwd_iat_total_us += gap
                if gap > activity_timeout_us:
                    self.fwd_subflow_count += 1
                self.payload_min_fwd = min(self.payload_min_fwd, n)
                self.payload_max_fwd = max(self.payload_max_fwd, n)
                self.min_header_len_fwd = min(self.min_header_len_fwd, pkt.header_len_bytes)
            else:
                self.payload_min_fwd = self.payload_max_fwd = n
                self.min_header_len_fwd = pkt.header_len_bytes
            self.last_fwd_ts_us = max(self.last_fwd_ts_us, pkt.timestamp_us)
            self.pkt_count_fwd += 1
            self.payload_sum_fwd += n
            self.header_sum_fwd += pkt.header_len_bytes
        else:
            if self.pkt_count_bwd:
                self.payload_min_bwd = min(self.payload_min_bwd, n)
                self.payload_max_bwd = max(self.payload_max_bwd, n)
            else:
                self.payload_min_bwd = self.payload_max_bwd = n
            self.pkt_count_bwd += 1
            self.payload_sum_bwd += n
            self.header_sum_bwd += pkt.header_len_bytes

    @property
    def flow_id(self):
        (sip, sport), (dip, dport) = self.fwd_initiator, self.fwd_responder
        return f"{decode_ip(sip)}-{decode_ip(dip)}-{sport}-{dport}-{self.key.protocol}"


def finalize_features(rec):
    """Compute the 18-value feature vector of a finished flow."""
    if rec.pkt_count_fwd < 1:
        raise ValueError("flow has no forward packets; forward direction is undefined")
    total_count = rec.pkt_count_fwd + rec.pkt_count_bwd
    total_payload = rec.payload_sum_fwd + rec.payload_sum_bwd
    fwd_mean = rec.payload_sum_fwd / rec.pkt_count_fwd
    if rec.pkt_count_bwd:
        pkt_min = min(rec.payload_min_fwd, rec.payload_min_bwd)
        pkt_max = max(rec.payload_max_fwd, rec.payload_max_bwd)
    else:
        pkt_min, pkt_max = rec.payload_min_fwd, rec.payload_max_fwd
    pkt_mean = total_payload / total_count
    (sip, sport), (dip, dport) = rec.fwd_initiator, rec.fwd_responder
    vec = np.array(
        [
            sip,
            sport,
            dip,
            dport,
            rec.last_ts_us - rec.first_ts_us,
            rec.header_sum_fwd,
            rec.min_header_len_fwd,
            rec.payload_sum_fwd,
            rec.payload_min_fwd,
            rec.payload_max_fwd,
            fwd_mean,
            fwd_mean,
            rec.fwd_iat_total_us,
            rec.payload_sum_fwd // rec.fwd_subflow_count,
            pkt_min,
            pkt_max,
            pkt_mean,
            pkt_mean,
        ],
        dtype=np.float64,
    )
    assert vec.shape == (N_FEATURES,)
    return vec


class FlowTable:
    """Single-writer table of live flows."""

    def __init__(self, activity_timeout_us=DEFAULT_ACTIVITY_TIMEOUT_US):
        if activity_timeout_us <= 0:
            raise ValueError("activity_timeout_us must be positive")
        self.activity_timeout_us = activity_timeout_us
        self.flows = {}

    def __len__(self):
        return len(self.flows)

    def __contains__(self, key):
        return key in self.flows

    def __getitem__(self, key):
        return self.flows[key]

    def ingest(self, pkt):
        key = FlowKey.of(pkt)
        rec = self.flows.get(key)
        if rec is None:
            rec = self.flows[key] = FlowRecord.start(pkt)
        rec.add(pkt, self.activity_timeout_us)
        return rec

    def pop(self, key):
        return self.flows.pop(key)

    def expire(self, now_us, idle_timeout_us=DEFAULT_IDLE_TIMEOUT_US):
        """Remove and return flows idle for longer than the timeout."""
        if idle_timeout_us <= 0:
            raise ValueError("idle_timeout_us must be positive")
        done = [k for k, r in self.flows.items() if now_us - r.last_ts_us > idle_timeout_us]
        return _ordered([self.flows.pop(k) for k in done])

    def flush(self):
        finished = _ordered(self.flows.values())
        self.flows = {}
        return finished


def _ordered(records):
    return sorted(records, key=lambda r: (r.first_ts_us, r.key))


def ingest_packet(table, pkt):
    table.ingest(pkt)
    return table


def expire_flows(table, now_us, idle_timeout_us=DEFAULT_IDLE_TIMEOUT_US):
    return table, table.expire(now_us, idle_timeout_us)


def extract_flows(
    events,
    activity_timeout_us=DEFAULT_ACTIVITY_TIMEOUT_US,
    idle_timeout_us=DEFAULT_IDLE_TIMEOUT_US,
):
    """Aggregate packet events into finished flow records, in emission order.

    A packet arriving for a flow that has been idle past the timeout closes
    the old flow first. The table is swept whenever capture time moves past
    the next sweep deadline, and flushed at end of input.
    """
    table = FlowTable(activity_timeout_us)
    next_sweep = None
    for pkt in events:
        if next_sweep is None:
            next_sweep = pkt.timestamp_us + idle_timeout_us
        key = FlowKey.of(pkt)
        if key in table and pkt.timestamp_us - table[key].last_ts_us > idle_timeout_us:
            yield table.pop(key)
        if pkt.timestamp_us > next_sweep:
            yield from table.expire(pkt.timestamp_us, idle_timeout_us)
            next_sweep = pkt.timestamp_us + idle_timeout_us
        table.ingest(pkt)
    yield from table.flush()


CSV_COLUMNS = FEATURE_NAMES + ("flow_id", "first_timestamp_us", "protocol")


def format_value(value):
    """Integers unpadded; reals with at most six fractional digits."""
    if float(value).is_integer():
        return str(int(value))
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return text


def write_flow_csv(records, out, label=None):
    """Write one CSV row per record to a text stream. Returns the row count."""
    header = CSV_COLUMNS + (("label",) if label is not None else ())
    out.write(",".join(header) + "\n")
    n = 0
    for rec in records:
        vec = finalize_features(rec)
        cells = [format_value(v) for v in vec]
        cells += [rec.flow_id, str(rec.first_ts_us), str(rec.key.protocol)]
        if label is not None:
            cells.append(label)
        out.write(",".join(cells) + "\n")
        n += 1
    return n
