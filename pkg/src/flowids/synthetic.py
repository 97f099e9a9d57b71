"""Synthetic flow records in the CICIDS2017 MachineLearningCVE layout.

Used when the real corpus is not available. Each class has a traffic profile
over a handful of primitive quantities (duration, packet counts, payload
sizes, inter-arrival spread, TCP flags, initial windows, idle behaviour),
drawn log-normally; the 78 columns are then derived from the primitives the
way a flow meter would (totals, rates, IAT statistics, duplicated header
column, all-zero bulk columns). Rates divide by the duration, so zero-length
flows produce the NaN / Infinity cells the real files contain.

Related attacks (the DoS variants, the web attacks, the two Patators) share
most of their profile, so the task has realistic confusions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .flow_ingest import BENIGN, CICIDS2017_FEATURES, LABEL_COLUMN

WEB_BF = "Web Attack – Brute Force"
WEB_XSS = "Web Attack – XSS"
WEB_SQL = "Web Attack – Sql Injection"

# Class sizes of the default synthetic corpus. The three rarest classes keep
# their real absolute counts; the rest are shrunk, with a floor so every
# other attack survives a 100-row minimum.
DEFAULT_COUNTS = {
    BENIGN: 40000, "DoS Hulk": 4000, "PortScan": 3000, "DDoS": 2500, "DoS GoldenEye": 600,
    "FTP-Patator": 500, "SSH-Patator": 400, "DoS slowloris": 350, "DoS Slowhttptest": 350,
    "Bot": 300, WEB_BF: 250, WEB_XSS: 150, "Infiltration": 36, WEB_SQL: 21, "Heartbleed": 11,
}
_FIXED = {"Infiltration", WEB_SQL, "Heartbleed"}

# (file name, attack classes, share of benign rows)
DAY_FILES = (
    ("Monday-WorkingHours.pcap_ISCX.csv", (), 0.233),
    ("Tuesday-WorkingHours.pcap_ISCX.csv", ("FTP-Patator", "SSH-Patator"), 0.190),
    ("Wednesday-workingHours.pcap_ISCX.csv",
     ("DoS slowloris", "DoS Slowhttptest", "DoS Hulk", "DoS GoldenEye", "Heartbleed"), 0.194),
    ("Thursday-WorkingHours-Morning-WebAttacks.pcap_ISCX.csv", (WEB_BF, WEB_XSS, WEB_SQL), 0.074),
    ("Thursday-WorkingHours-Afternoon-Infilteration.pcap_ISCX.csv", ("Infiltration",), 0.127),
    ("Friday-WorkingHours-Morning.pcap_ISCX.csv", ("Bot",), 0.083),
    ("Friday-WorkingHours-Afternoon-PortScan.pcap_ISCX.csv", ("PortScan",), 0.056),
    ("Friday-WorkingHours-Afternoon-DDos.pcap_ISCX.csv", ("DDoS",), 0.043),
)
# the web-attack day ships in cp1252, as the real file does
_CP1252_FILES = {"Thursday-WorkingHours-Morning-WebAttacks.pcap_ISCX.csv"}


@dataclass(frozen=True)
class Profile:
    """Log-normal (mu, sigma) pairs for the primitives plus categorical choices."""

    dur: tuple[float, float]        # microseconds
    fwd: tuple[float, float]        # forward packet count
    bwd: tuple[float, float]        # backward packet count (0 allowed)
    fwd_len: tuple[float, float]    # mean forward payload bytes
    bwd_len: tuple[float, float]
    spread: float = 0.5             # coefficient of variation of sizes and gaps
    ports: tuple[int, ...] = (80,)
    win_fwd: tuple[int, ...] = (29200,)
    win_bwd: tuple[int, ...] = (-1,)
    flags: Mapping[str, float] = field(default_factory=dict)  # per-flag probability
    hdr: int = 32                   # header bytes per packet
    seg: tuple[int, ...] = (32,)
    idle: float = 0.1               # probability of active/idle periods
    zero_dur: float = 0.002         # probability of a zero-length flow


def _p(**kw) -> dict:
    return kw


PROFILES: dict[str, Profile | tuple[tuple[float, Profile], ...]] = {
    BENIGN: (
        (0.45, Profile((13.0, 2.5), (2.2, 0.8), (2.3, 0.9), (4.5, 1.0), (6.5, 1.2), 0.8,
                       (443, 80, 8080), (8192, 29200, 65535, 256), (-1, 235, 2081, 65160),
                       _p(ack=0.5, psh=0.4, fin=0.2), 20, (20, 32), 0.15, 0.001)),
        (0.30, Profile((10.0, 1.5), (0.0, 0.3), (0.0, 0.4), (3.7, 0.4), (4.8, 0.6), 0.2,
                       (53,), (-1,), (-1,), _p(), 8, (8, 20), 0.0, 0.004)),
        (0.10, Profile((16.0, 1.5), (4.0, 1.0), (5.0, 1.0), (4.0, 0.8), (7.0, 0.5), 0.6,
                       (443, 22, 445), (65535, 29200), (65535, 28960), _p(ack=0.9, psh=0.7), 32, (32,), 0.5)),
        (0.15, Profile((14.0, 3.0), (1.5, 1.0), (1.5, 1.0), (4.0, 1.5), (4.0, 1.5), 1.0,
                       (137, 123, 389, 3268, 5353, 1900, 139), (-1, 1024, 4096), (-1, 0, 1024),
                       _p(ack=0.3, rst=0.05), 20, (0, 20, 32), 0.2, 0.003)),
    ),
    "DoS Hulk": Profile((11.0, 2.5), (1.8, 0.5), (1.6, 0.6), (5.8, 0.3), (7.5, 0.8), 0.5,
                        (80,), (29200, 251), (235, -1), _p(ack=0.3, psh=0.1, fin=0.6), 32, (32,), 0.05),
    "DoS GoldenEye": Profile((15.0, 1.0), (2.0, 0.4), (1.7, 0.4), (5.9, 0.3), (7.3, 0.6), 0.5,
                             (80,), (29200,), (235, 227), _p(ack=0.4, psh=0.3), 32, (32,), 0.3),
    "DoS slowloris": Profile((16.5, 0.8), (1.8, 0.4), (0.7, 0.5), (4.6, 0.4), (0.5, 0.5), 0.4,
                             (80,), (29200,), (235, -1), _p(ack=0.2, psh=0.5), 32, (32,), 0.7),
    "DoS Slowhttptest": Profile((16.3, 1.0), (1.5, 0.5), (0.5, 0.5), (4.3, 0.4), (0.4, 0.5), 0.4,
                                (80,), (29200,), (235, -1), _p(ack=0.3, psh=0.4), 32, (32,), 0.6),
    "DDoS": Profile((14.0, 2.0), (1.4, 0.4), (1.3, 0.5), (2.0, 0.4), (8.3, 0.3), 0.3,
                    (80,), (256, 8192), (229, 227), _p(ack=0.6, psh=0.2), 20, (20,), 0.2),
    "PortScan": Profile((3.5, 1.0), (0.0, 0.2), (0.0, 0.2), (0.1, 0.3), (1.8, 0.4), 0.1,
                        tuple(range(1, 1024, 7)), (1024, 29200), (0, -1), _p(syn=0.6, rst=0.5), 24,
                        (24, 32), 0.0, 0.01),
    "FTP-Patator": Profile((15.0, 0.8), (2.3, 0.2), (2.5, 0.2), (2.6, 0.2), (3.6, 0.2), 0.3,
                           (21,), (29200,), (227,), _p(ack=0.7, psh=0.9, fin=0.3), 32, (32,), 0.0),
    "SSH-Patator": Profile((15.5, 0.7), (3.0, 0.2), (3.1, 0.2), (3.9, 0.2), (4.3, 0.2), 0.3,
                           (22,), (29200,), (247,), _p(ack=0.7, psh=0.9, fin=0.4), 32, (32,), 0.0),
    "Bot": Profile((11.0, 3.0), (1.3, 0.5), (1.0, 0.5), (5.0, 0.6), (4.7, 0.6), 0.6,
                   (8080,), (8192,), (237, -1), _p(ack=0.5, psh=0.5), 20, (20,), 0.1),
    WEB_BF: Profile((15.5, 0.8), (1.3, 0.3), (0.3, 0.4), (0.5, 1.0), (0.3, 0.5), 0.6,
                    (80,), (29200, -1), (235, -1), _p(ack=0.6, psh=0.4), 32, (32,), 0.2),
    WEB_XSS: Profile((15.6, 0.8), (1.4, 0.3), (0.4, 0.4), (1.0, 1.0), (0.3, 0.5), 0.6,
                     (80,), (29200, -1), (235, -1), _p(ack=0.6, psh=0.5), 32, (32,), 0.2),
    WEB_SQL: Profile((15.3, 0.8), (1.5, 0.3), (0.6, 0.4), (1.5, 1.0), (1.0, 0.8), 0.6,
                     (80,), (29200,), (235, -1), _p(ack=0.6, psh=0.5), 32, (32,), 0.2),
    "Infiltration": Profile((16.0, 3.0), (2.0, 1.5), (2.0, 1.5), (4.0, 1.5), (5.0, 1.5), 1.0,
                            (444, 135, 445, 8080), (8192, 29200), (-1, 235), _p(ack=0.5), 20, (20,), 0.4),
    "Heartbleed": Profile((18.5, 0.2), (7.8, 0.2), (8.6, 0.2), (2.0, 0.2), (8.9, 0.1), 0.2,
                          (444,), (29200,), (235,), _p(ack=1.0, psh=1.0), 32, (32,), 1.0, 0.0),
}

_FLAGS = ("fin", "syn", "rst", "psh", "ack", "urg", "ece")
_COL = {name: i for i, name in reversed(list(enumerate(CICIDS2017_FEATURES)))}  # first copy wins
_DUP_HEADER = len(CICIDS2017_FEATURES) - 1 - CICIDS2017_FEATURES[::-1].index("Fwd Header Length")


def class_counts(scale: float = 1.0) -> dict[str, int]:
    """Default class sizes scaled by ``scale`` (the three rarest stay fixed)."""
    return {k: v if k in _FIXED else max(1, int(round(v * scale))) for k, v in DEFAULT_COUNTS.items()}


def _lognormal(rng, pair, n):
    mu, sigma = pair
    return np.exp(rng.normal(mu, sigma, n))


def _flows(profile: Profile, n: int, rng: np.random.Generator) -> np.ndarray:
    x = np.zeros((n, len(CICIDS2017_FEATURES)))
    c = _COL
    # a shared activity factor couples duration and packet counts
    load = rng.normal(0.0, 0.3, n)
    dur = np.rint(_lognormal(rng, profile.dur, n) * np.exp(load))
    dur[rng.random(n) < profile.zero_dur] = 0.0
    nf = np.maximum(1.0, np.rint(_lognormal(rng, profile.fwd, n) * np.exp(0.5 * load)))
    nb = np.maximum(0.0, np.rint(_lognormal(rng, profile.bwd, n) * np.exp(0.5 * load) - 0.5))
    cv = profile.spread * np.exp(rng.normal(0.0, 0.3, n))

    def sizes(pair, count):
        mean = np.maximum(0.0, _lognormal(rng, pair, n) - 1.0)
        total = np.rint(mean * count)
        mean = np.divide(total, count, out=np.zeros(n), where=count > 0)
        single = count <= 1
        std = np.where(single, 0.0, mean * cv * rng.uniform(0.5, 1.0, n))
        mx = np.where(single, mean, np.rint(mean + std * rng.uniform(1.0, 2.5, n)))
        mn = np.where(single, mean, np.maximum(0.0, np.rint(mean - std * rng.uniform(0.5, 1.5, n))))
        return total, mean, std, mx, mn

    tf, mf, sf, xf, nf_min = sizes(profile.fwd_len, nf)
    tb, mb, sb, xb, nb_min = sizes(profile.bwd_len, nb)
    x[:, c["Destination Port"]] = rng.choice(profile.ports, n)
    x[:, c["Flow Duration"]] = dur
    x[:, c["Total Fwd Packets"]] = nf
    x[:, c["Total Backward Packets"]] = nb
    x[:, c["Total Length of Fwd Packets"]] = tf
    x[:, c["Total Length of Bwd Packets"]] = tb
    for side, (mx, mn, mean, std) in (("Fwd", (xf, nf_min, mf, sf)), ("Bwd", (xb, nb_min, mb, sb))):
        x[:, c[f"{side} Packet Length Max"]] = mx
        x[:, c[f"{side} Packet Length Min"]] = mn
        x[:, c[f"{side} Packet Length Mean"]] = mean
        x[:, c[f"{side} Packet Length Std"]] = std
    with np.errstate(divide="ignore", invalid="ignore"):
        x[:, c["Flow Bytes/s"]] = (tf + tb) / dur * 1e6
        x[:, c["Flow Packets/s"]] = (nf + nb) / dur * 1e6
        x[:, c["Fwd Packets/s"]] = nf / dur * 1e6
        x[:, c["Bwd Packets/s"]] = nb / dur * 1e6
    # zero-length flows: 0/0 is NaN, k/0 is Infinity, as in the real files
    gaps = np.maximum(nf + nb - 1.0, 1.0)
    iat = dur / gaps
    x[:, c["Flow IAT Mean"]] = iat
    x[:, c["Flow IAT Std"]] = iat * cv
    x[:, c["Flow IAT Max"]] = np.minimum(dur, np.rint(iat * (1.0 + 2.0 * cv)))
    x[:, c["Flow IAT Min"]] = np.rint(iat * np.maximum(0.0, 1.0 - cv) * rng.uniform(0.0, 1.0, n))
    for side, count in (("Fwd", nf), ("Bwd", nb)):
        active = count > 1
        total = np.where(active, np.rint(dur * rng.uniform(0.8, 1.0, n)), 0.0)
        mean = np.divide(total, count - 1, out=np.zeros(n), where=active)
        x[:, c[f"{side} IAT Total"]] = total
        x[:, c[f"{side} IAT Mean"]] = mean
        x[:, c[f"{side} IAT Std"]] = mean * cv
        x[:, c[f"{side} IAT Max"]] = np.minimum(total, np.rint(mean * (1.0 + 2.0 * cv)))
        x[:, c[f"{side} IAT Min"]] = np.rint(mean * np.maximum(0.0, 1.0 - cv))
    flags = {f: (rng.random(n) < profile.flags.get(f, 0.0)).astype(float) for f in _FLAGS}
    x[:, c["Fwd PSH Flags"]] = flags["psh"]
    x[:, c["Fwd Header Length"]] = nf * profile.hdr
    x[:, _DUP_HEADER] = nf * profile.hdr
    x[:, c["Bwd Header Length"]] = nb * profile.hdr
    has_b = nb > 0
    x[:, c["Min Packet Length"]] = np.where(has_b, np.minimum(nf_min, nb_min), nf_min)
    x[:, c["Max Packet Length"]] = np.where(has_b, np.maximum(xf, xb), xf)
    pkt_mean = (tf + tb) / (nf + nb + 1.0)
    pkt_std = np.sqrt((nf * (sf ** 2 + (mf - pkt_mean) ** 2) + nb * (sb ** 2 + (mb - pkt_mean) ** 2))
                      / (nf + nb))
    x[:, c["Packet Length Mean"]] = pkt_mean
    x[:, c["Packet Length Std"]] = pkt_std
    x[:, c["Packet Length Variance"]] = pkt_std ** 2
    for f in _FLAGS:
        x[:, c[f"{f.upper()} Flag Count"]] = flags[f]
    x[:, c["Down/Up Ratio"]] = np.floor(nb / nf)
    x[:, c["Average Packet Size"]] = (tf + tb) / (nf + nb)
    x[:, c["Avg Fwd Segment Size"]] = mf
    x[:, c["Avg Bwd Segment Size"]] = mb
    # bulk columns stay 0, as they are throughout the real corpus
    x[:, c["Subflow Fwd Packets"]] = nf
    x[:, c["Subflow Fwd Bytes"]] = tf
    x[:, c["Subflow Bwd Packets"]] = nb
    x[:, c["Subflow Bwd Bytes"]] = tb
    x[:, c["Init_Win_bytes_forward"]] = rng.choice(profile.win_fwd, n)
    x[:, c["Init_Win_bytes_backward"]] = rng.choice(profile.win_bwd, n)
    x[:, c["act_data_pkt_fwd"]] = np.where(mf > 0, np.rint(nf * rng.uniform(0.3, 1.0, n)), 0.0)
    x[:, c["min_seg_size_forward"]] = rng.choice(profile.seg, n)
    idle = rng.random(n) < profile.idle
    act = np.where(idle, _lognormal(rng, (11.0, 1.0), n), 0.0)
    rest = np.where(idle, _lognormal(rng, (16.5, 0.5), n), 0.0)
    for name, base, spread in (("Active", act, 0.3), ("Idle", rest, 0.1)):
        x[:, c[f"{name} Mean"]] = np.rint(base)
        x[:, c[f"{name} Std"]] = np.rint(base * spread * rng.uniform(0.0, 1.0, n))
        x[:, c[f"{name} Max"]] = np.rint(base * (1.0 + spread))
        x[:, c[f"{name} Min"]] = np.rint(base * (1.0 - spread))
    return x


def generate(counts: Mapping[str, int] | None = None, seed: int = 0) -> tuple[np.ndarray, list[str]]:
    """Feature matrix (raw 78 columns) and label strings, classes in blocks."""
    counts = class_counts() if counts is None else counts
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for name, n in counts.items():
        if n <= 0:
            continue
        profile = PROFILES[name]
        if isinstance(profile, Profile):
            blocks.append(_flows(profile, n, rng))
        else:
            weights = np.array([w for w, _ in profile])
            parts = rng.multinomial(n, weights / weights.sum())
            blocks.extend(_flows(p, k, rng) for (_, p), k in zip(profile, parts) if k)
        labels.extend([name] * n)
    return np.concatenate(blocks), labels


def _format(column: np.ndarray) -> list[str]:
    out = []
    for v in column.tolist():
        if v != v:
            out.append("NaN")
        elif v in (float("inf"), float("-inf")):
            out.append("Infinity" if v > 0 else "-Infinity")
        elif v == int(v) and abs(v) < 1e15:
            out.append(str(int(v)))
        else:
            out.append(f"{v:.10g}")
    return out


def csv_text(features: np.ndarray, labels: list[str]) -> str:
    """Rows in the real layout: header names after the first carry a leading space."""
    header = [CICIDS2017_FEATURES[0]] + [" " + n for n in CICIDS2017_FEATURES[1:]] + [" " + LABEL_COLUMN]
    columns = [_format(features[:, j]) for j in range(features.shape[1])] + [labels]
    lines = [",".join(header)] + [",".join(row) for row in zip(*columns)]
    return "\n".join(lines) + "\n"


def write_corpus(out_dir: str | Path, seed: int = 0, scale: float = 1.0,
                 counts: Mapping[str, int] | None = None) -> list[Path]:
    """Write the per-day CSV files; returns their paths in filename order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = dict(class_counts(scale) if counts is None else counts)
    benign_total = counts.pop(BENIGN, 0)
    shares = np.array([share for _, _, share in DAY_FILES])
    benign_split = np.floor(benign_total * shares / shares.sum()).astype(int)
    benign_split[0] += benign_total - benign_split.sum()
    paths = []
    for day, ((name, attacks, _), n_benign) in enumerate(zip(DAY_FILES, benign_split)):
        day_counts = {BENIGN: int(n_benign), **{a: counts.get(a, 0) for a in attacks}}
        feats, labels = generate(day_counts, seed=int(np.random.SeedSequence([seed, day]).generate_state(1)[0]))
        order = np.random.default_rng([seed, day, 1]).permutation(len(labels))
        text = csv_text(feats[order], [labels[i] for i in order])
        path = out / name
        path.write_bytes(text.encode("cp1252" if name in _CP1252_FILES else "utf-8"))
        paths.append(path)
    return sorted(paths)
