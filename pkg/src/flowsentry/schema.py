"""Canonical feature schema and label vocabulary.

Packet length everywhere in this schema means transport payload bytes, not
the IP total length. ``min_seg_size_fwd`` is the smallest forward header
length (IPv4 + transport) seen in the flow.
"""
import hashlib
import ipaddress

FEATURE_NAMES = (
    "src_ip_enc",
    "src_port",
    "dst_ip_enc",
    "dst_port",
    "flow_duration_us",
    "fwd_header_len_bytes",
    "min_seg_size_fwd",
    "total_len_fwd_payload",
    "fwd_pkt_len_min",
    "fwd_pkt_len_max",
    "fwd_pkt_len_mean",
    "avg_fwd_segment_size",
    "fwd_iat_total_us",
    "subflow_fwd_bytes",
    "pkt_len_min",
    "pkt_len_max",
    "pkt_len_mean",
    "avg_packet_size",
)
N_FEATURES = len(FEATURE_NAMES)

# Column names used by the CICDDoS2019 CSV release, after whitespace trimming.
CIC_COLUMNS = (
    "Source IP",
    "Source Port",
    "Destination IP",
    "Destination Port",
    "Flow Duration",
    "Fwd Header Length",
    "min_seg_size_forward",
    "Total Length of Fwd Packets",
    "Fwd Packet Length Min",
    "Fwd Packet Length Max",
    "Fwd Packet Length Mean",
    "Avg Fwd Segment Size",
    "Fwd IAT Total",
    "Subflow Fwd Bytes",
    "Min Packet Length",
    "Max Packet Length",
    "Packet Length Mean",
    "Average Packet Size",
)
IP_FEATURES = (0, 2)

LABELS = (
    "BENIGN",
    "DrDoS_DNS",
    "DrDoS_LDAP",
    "DrDoS_MSSQL",
    "DrDoS_NetBIOS",
    "DrDoS_NTP",
    "DrDoS_SNMP",
    "DrDoS_SSDP",
    "DrDoS_UDP",
    "Portmap",
    "Syn",
    "TFTP",
    "UDP-lag",
)
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
EXCLUDED_LABELS = frozenset({"WebDDoS"})

SCHEMA_VERSION = "flowsentry-features-v1"


def schema_hash(names=FEATURE_NAMES):
    """Short digest binding a model to an ordered feature list."""
    digest = hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()
    return digest[:16]


def encode_ip(addr):
    """Dotted-quad IPv4 string to its big-endian unsigned 32-bit value."""
    return int(ipaddress.IPv4Address(addr.strip()))


def decode_ip(value):
    return str(ipaddress.IPv4Address(int(value)))


def label_index(name):
    try:
        return LABEL_INDEX[name.strip()]
    except KeyError:
        raise ValueError(f"unknown label {name!r}") from None
